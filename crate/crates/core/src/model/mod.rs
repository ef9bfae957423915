//! Pooling layers, toy modality encoders, and the fusion heads.

mod encoder;
mod head;
pub mod pooling;

pub use encoder::{EncoderCfg, Modality, SpeechEncoderCfg, TextEncoderCfg};
pub use head::{
    concat_fuse, concat_fuse_var, cross_attention_fuse, Activation, CrossAttentionCfg, FusionHeadCfg,
    FusionKind, Task, HEAD_FC1, HEAD_FC2, XATTN_K, XATTN_Q, XATTN_V,
};
pub use pooling::{attentive_stat_pool, mean_pool, STAT_EPS};

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{uniform_tensor, SeededRng};

/// `W: in × out` from uniform(±1/√in), `b: out` zeros.
pub fn init_affine(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<()> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{prefix}.w"), uniform_tensor(rng, &[fan_in, fan_out], -bound, bound))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?;
    Ok(())
}

/// `x W + b` for `x: B × in`.
pub fn affine(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{prefix}.w"), params)?;
    let b = g.param(&format!("{prefix}.b"), params)?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

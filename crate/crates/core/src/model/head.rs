//! Fusion of the two modality embeddings and the two-layer prediction head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{affine, init_affine};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{uniform_tensor, SeededRng};
use crate::taxonomy::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Concat,
    CrossAttention,
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionKind::Concat),
            "cross-attn" | "cross_attention" | "cross-attention" => Ok(FusionKind::CrossAttention),
            _ => Err(Error::invalid("fusion", format!("expected concat|cross-attn, got `{s}`"))),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Concat => "concat",
            FusionKind::CrossAttention => "cross-attn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Mish,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mish" => Ok(Activation::Mish),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::invalid("activation", format!("unknown activation `{s}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Mish => "mish",
            Activation::Relu => "relu",
        })
    }
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Mish => g.mish(x),
            Activation::Relu => g.relu(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Categorical,
    Attributes,
}

impl Task {
    pub fn out_dim(self) -> usize {
        match self {
            Task::Categorical => NUM_CLASSES,
            Task::Attributes => 3,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(Task::Categorical),
            "attributes" => Ok(Task::Attributes),
            _ => Err(Error::invalid("task", format!("expected categorical|attributes, got `{s}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Categorical => "categorical",
            Task::Attributes => "attributes",
        })
    }
}

/// `FC2(act(FC1(x)))` with `FC1: F → F` and `FC2: F → 8 | 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionHeadCfg {
    pub fusion: FusionKind,
    pub activation: Activation,
    pub task: Task,
    pub input_dim: usize,
}

pub const HEAD_FC1: &str = "head.fc1";
pub const HEAD_FC2: &str = "head.fc2";

impl FusionHeadCfg {
    pub fn out_dim(&self) -> usize {
        self.task.out_dim()
    }

    pub fn param_names(&self) -> Vec<String> {
        [HEAD_FC1, HEAD_FC2]
            .iter()
            .flat_map(|p| [format!("{p}.w"), format!("{p}.b")])
            .collect()
    }

    pub fn init(&self, rng: &mut SeededRng) -> Result<ParamStore> {
        if self.input_dim == 0 {
            return Err(Error::invalid("head", "input dim must be ≥ 1"));
        }
        let mut s = ParamStore::new();
        init_affine(&mut s, HEAD_FC1, self.input_dim, self.input_dim, rng)?;
        init_affine(&mut s, HEAD_FC2, self.input_dim, self.out_dim(), rng)?;
        Ok(s)
    }

    /// `fused` is `B × F`; the result is `B × out_dim`.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, fused: Var) -> Result<Var> {
        match g.shape(fused) {
            [_, f] if *f == self.input_dim => {}
            s => {
                return Err(Error::shape(
                    "fusion_head_forward",
                    format!("expected B × {}, got {s:?}", self.input_dim),
                ))
            }
        }
        let h = affine(g, params, HEAD_FC1, fused)?;
        let h = self.activation.apply(g, h)?;
        affine(g, params, HEAD_FC2, h)
    }
}

/// Joins the speech and text embeddings, speech first.
pub fn concat_fuse(speech: &[f64], text: &[f64]) -> Result<Vec<f64>> {
    if speech.is_empty() || text.is_empty() {
        return Err(Error::invalid("concat_fuse", "both embeddings must be non-empty"));
    }
    let mut out = Vec::with_capacity(speech.len() + text.len());
    out.extend_from_slice(speech);
    out.extend_from_slice(text);
    Ok(out)
}

/// Graph form of [`concat_fuse`] over `B × Ds` and `B × Dt` batches.
pub fn concat_fuse_var(g: &mut Graph, speech: Var, text: Var) -> Result<Var> {
    g.concat(&[speech, text], 1)
}

/// Single-head scaled dot-product attention, text frames querying speech frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossAttentionCfg {
    pub speech_dim: usize,
    pub text_dim: usize,
    pub model_dim: usize,
}

pub const XATTN_Q: &str = "xattn.q.w";
pub const XATTN_K: &str = "xattn.k.w";
pub const XATTN_V: &str = "xattn.v.w";

impl CrossAttentionCfg {
    pub fn param_names(&self) -> Vec<String> {
        [XATTN_Q, XATTN_K, XATTN_V].iter().map(|s| s.to_string()).collect()
    }

    pub fn init(&self, rng: &mut SeededRng) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        let bq = 1.0 / (self.text_dim as f64).sqrt();
        let bs = 1.0 / (self.speech_dim as f64).sqrt();
        s.insert(XATTN_Q, uniform_tensor(rng, &[self.text_dim, self.model_dim], -bq, bq))?;
        s.insert(XATTN_K, uniform_tensor(rng, &[self.speech_dim, self.model_dim], -bs, bs))?;
        s.insert(XATTN_V, uniform_tensor(rng, &[self.speech_dim, self.model_dim], -bs, bs))?;
        Ok(s)
    }

    /// `A = softmax(Q Kᵀ / √D) V` with `Q` from `text` (`Tt × Dt`) and `K, V` from
    /// `speech` (`Ts × Ds`), mean-pooled over the text axis to `1 × D`.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, speech: Var, text: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, params, speech, text)?.0)
    }

    /// Also returns the `Tt × Ts` attention matrix.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        speech: Var,
        text: Var,
    ) -> Result<(Var, Var)> {
        for (v, d, what) in [(speech, self.speech_dim, "speech"), (text, self.text_dim, "text")] {
            match g.shape(v) {
                [t, w] if *t >= 1 && *w == d => {}
                s => {
                    return Err(Error::shape(
                        "cross_attention_fuse",
                        format!("{what} frames must be T × {d}, got {s:?}"),
                    ))
                }
            }
        }
        let wq = g.param(XATTN_Q, params)?;
        let wk = g.param(XATTN_K, params)?;
        let wv = g.param(XATTN_V, params)?;
        let q = g.matmul(text, wq)?;
        let k = g.matmul(speech, wk)?;
        let v = g.matmul(speech, wv)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (self.model_dim as f64).sqrt())?;
        let attn = g.softmax(scores, 1)?;
        let mixed = g.matmul(attn, v)?;
        Ok((g.mean(mixed, 0)?, attn))
    }
}

/// Convenience for callers holding plain frame tensors.
pub fn cross_attention_fuse(
    cfg: &CrossAttentionCfg,
    params: &ParamStore,
    speech: &Tensor,
    text: &Tensor,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let s = g.constant(speech.clone())?;
    let t = g.constant(text.clone())?;
    let out = cfg.forward(&mut g, params, s, t)?;
    Ok(g.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, DEFAULT_FLOOR, DEFAULT_STEP};
    use crate::rng::seeded;

    fn head(act: Activation, task: Task, f: usize) -> FusionHeadCfg {
        FusionHeadCfg {
            fusion: FusionKind::Concat,
            activation: act,
            task,
            input_dim: f,
        }
    }

    fn eval(cfg: &FusionHeadCfg, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let v = g.constant(Tensor::row(x)).unwrap();
        let o = cfg.forward(&mut g, p, v).unwrap();
        g.value(o).data().to_vec()
    }

    #[test]
    fn output_widths() {
        let c = head(Activation::Mish, Task::Categorical, 5);
        let a = head(Activation::Mish, Task::Attributes, 5);
        assert_eq!(eval(&c, &c.init(&mut seeded(1)).unwrap(), &[0.1; 5]).len(), 8);
        assert_eq!(eval(&a, &a.init(&mut seeded(1)).unwrap(), &[0.1; 5]).len(), 3);
    }

    #[test]
    fn relu_kills_negative_input() {
        let cfg = head(Activation::Relu, Task::Attributes, 4);
        let mut p = cfg.init(&mut seeded(2)).unwrap();
        p.set("head.fc1.w", Tensor::identity(4));
        let mut trunc = Tensor::zeros(&[4, 3]);
        for i in 0..3 {
            trunc.data_mut()[i * 3 + i] = 1.0;
        }
        p.set("head.fc2.w", trunc);
        assert_eq!(eval(&cfg, &p, &[-1.0, -2.0, -0.5, -3.0]), vec![0.0; 3]);
    }

    #[test]
    fn mish_close_to_relu_at_five() {
        let mish_cfg = head(Activation::Mish, Task::Attributes, 3);
        let relu_cfg = head(Activation::Relu, Task::Attributes, 3);
        let mut p = mish_cfg.init(&mut seeded(3)).unwrap();
        p.set("head.fc1.w", Tensor::identity(3));
        let mut trunc = Tensor::zeros(&[3, 3]);
        trunc.data_mut().copy_from_slice(Tensor::identity(3).data());
        p.set("head.fc2.w", trunc);
        let m = eval(&mish_cfg, &p, &[5.0; 3]);
        let r = eval(&relu_cfg, &p, &[5.0; 3]);
        for (a, b) in m.iter().zip(&r) {
            assert!((a - b).abs() < 1e-2);
            assert!(a != b);
        }
    }

    #[test]
    fn unknown_activation() {
        assert!("gelu".parse::<Activation>().is_err());
        assert_eq!("mish".parse::<Activation>().unwrap(), Activation::Mish);
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat_fuse(&[1.0, 2.0], &[3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(concat_fuse(&[], &[3.0]).is_err());
        let big = concat_fuse(&vec![0.5; 1024], &vec![1.5; 1024]).unwrap();
        assert_eq!(big.len(), 2048);
        assert_eq!(&big[..1024], &vec![0.5; 1024][..]);
        assert_eq!(&big[1024..], &vec![1.5; 1024][..]);
    }

    #[test]
    fn cross_attention_single_key_returns_value() {
        let cfg = CrossAttentionCfg {
            speech_dim: 3,
            text_dim: 2,
            model_dim: 4,
        };
        let p = cfg.init(&mut seeded(4)).unwrap();
        let s = Tensor::row(&[0.2, -0.7, 1.1]);
        let t = Tensor::row(&[1.0, -1.0]);
        let out = cross_attention_fuse(&cfg, &p, &s, &t).unwrap();
        let expect = s.matmul(p.get(XATTN_V).unwrap()).unwrap();
        assert_eq!(out, expect.data());
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let cfg = CrossAttentionCfg {
            speech_dim: 2,
            text_dim: 2,
            model_dim: 3,
        };
        let p = cfg.init(&mut seeded(5)).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(4, 2, [0.3, 0.9].repeat(4)).unwrap()).unwrap();
        let t = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap()).unwrap();
        let (_, attn) = cfg.forward_with_weights(&mut g, &p, s, t).unwrap();
        for w in g.value(attn).data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    fn gradcheck_store<F>(p: &ParamStore, build: F) -> f64
    where
        F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
    {
        check_gradients(
            p,
            |p| {
                let mut g = Graph::new();
                let l = build(&mut g, p)?;
                Ok(g.value(l).item())
            },
            |p| {
                let mut g = Graph::new();
                let l = build(&mut g, p)?;
                g.backward(l, p)
            },
            DEFAULT_STEP,
            DEFAULT_FLOOR,
        )
        .unwrap()
        .max_rel_err
    }

    #[test]
    fn cross_attention_gradcheck() {
        let cfg = CrossAttentionCfg {
            speech_dim: 3,
            text_dim: 2,
            model_dim: 4,
        };
        for seed in 0..5 {
            let p = cfg.init(&mut seeded(seed)).unwrap();
            let mut rng = seeded(seed + 50);
            let s = uniform_tensor(&mut rng, &[5, 3], -1.0, 1.0);
            let t = uniform_tensor(&mut rng, &[3, 2], -1.0, 1.0);
            let err = gradcheck_store(&p, |g, p| {
                let sv = g.constant(s.clone())?;
                let tv = g.constant(t.clone())?;
                let o = cfg.forward(g, p, sv, tv)?;
                let sq = g.square(o)?;
                g.sum(sq)
            });
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn head_gradcheck_both_activations() {
        for act in [Activation::Mish, Activation::Relu] {
            let cfg = head(act, Task::Categorical, 5);
            let p = cfg.init(&mut seeded(7)).unwrap();
            let x = uniform_tensor(&mut seeded(8), &[3, 5], -1.0, 1.0);
            let err = gradcheck_store(&p, |g, p| {
                let xv = g.constant(x.clone())?;
                let o = cfg.forward(g, p, xv)?;
                let ls = g.log_softmax(o, 1)?;
                let pk = g.pick(ls, &[1, 4, 7])?;
                g.sum(pk)
            });
            assert!(err < 1e-6, "{act}: {err}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn saturated_relu_and_mish_share_argmax(seed in 0u64..1000, lift in 10.0f64..40.0) {
                let mish_cfg = head(Activation::Mish, Task::Categorical, 6);
                let relu_cfg = head(Activation::Relu, Task::Categorical, 6);
                let mut p = mish_cfg.init(&mut seeded(seed)).unwrap();
                p.set("head.fc1.w", Tensor::zeros(&[6, 6]));
                p.set("head.fc1.b", uniform_tensor(&mut seeded(seed + 1), &[6], lift, lift + 5.0));
                let x = [0.3; 6];
                let argmax = |v: Vec<f64>| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                prop_assert_eq!(argmax(eval(&mish_cfg, &p, &x)), argmax(eval(&relu_cfg, &p, &x)));
            }
        }
    }
}

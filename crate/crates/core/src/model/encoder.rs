//! Toy modality encoders: one affine + Mish frame layer, the modality's pooling,
//! then an affine projection to a fixed-size embedding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pooling::{attentive_stat_pool, init_attentive_pool, mean_pool};
use super::{affine, init_affine};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            _ => Err(Error::invalid("modality", format!("expected speech|text, got `{s}`"))),
        }
    }
}

/// Encoder dimensions. Speech pools with attentive statistics (pooled width
/// `2 · hidden`), text with a mean (pooled width `hidden`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderCfg {
    pub modality: Modality,
    pub frame_dim: usize,
    pub hidden: usize,
    /// Attention width of the speech pooling layer; unused for text.
    pub attn_dim: usize,
    pub out_dim: usize,
}

/// Stand-in for the speech backbone.
pub type SpeechEncoderCfg = EncoderCfg;
/// Stand-in for the text backbone.
pub type TextEncoderCfg = EncoderCfg;

impl EncoderCfg {
    pub fn speech(frame_dim: usize, hidden: usize, attn_dim: usize, out_dim: usize) -> Result<Self> {
        Self {
            modality: Modality::Speech,
            frame_dim,
            hidden,
            attn_dim,
            out_dim,
        }
        .validated()
    }

    pub fn text(token_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        Self {
            modality: Modality::Text,
            frame_dim: token_dim,
            hidden,
            attn_dim: 1,
            out_dim,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.frame_dim == 0 || self.hidden == 0 || self.attn_dim == 0 || self.out_dim == 0 {
            return Err(Error::invalid("encoder", format!("all dims must be ≥ 1: {self:?}")));
        }
        Ok(self)
    }

    pub fn pooled_dim(&self) -> usize {
        match self.modality {
            Modality::Speech => 2 * self.hidden,
            Modality::Text => self.hidden,
        }
    }

    fn prefix(&self) -> &'static str {
        self.modality.name()
    }

    pub fn frame_prefix(&self) -> String {
        format!("{}.frame", self.prefix())
    }

    pub fn pool_prefix(&self) -> String {
        format!("{}.pool", self.prefix())
    }

    pub fn proj_prefix(&self) -> String {
        format!("{}.proj", self.prefix())
    }

    /// Names of every tensor owned by this encoder.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            format!("{}.w", self.frame_prefix()),
            format!("{}.b", self.frame_prefix()),
        ];
        if self.modality == Modality::Speech {
            for s in ["w", "b", "v", "k"] {
                names.push(format!("{}.{s}", self.pool_prefix()));
            }
        }
        names.push(format!("{}.w", self.proj_prefix()));
        names.push(format!("{}.b", self.proj_prefix()));
        names
    }

    pub fn init(&self, rng: &mut SeededRng) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        init_affine(&mut s, &self.frame_prefix(), self.frame_dim, self.hidden, rng)?;
        if self.modality == Modality::Speech {
            init_attentive_pool(&mut s, &self.pool_prefix(), self.hidden, self.attn_dim, rng)?;
        }
        init_affine(&mut s, &self.proj_prefix(), self.pooled_dim(), self.out_dim, rng)?;
        Ok(s)
    }

    /// Per-frame hidden states `Mish(X W + b)`, `T × hidden`.
    pub fn frame_states(&self, g: &mut Graph, params: &ParamStore, frames: &Tensor) -> Result<Var> {
        match frames.shape() {
            [_, d] if *d == self.frame_dim => {}
            s => {
                return Err(Error::shape(
                    "encoder_forward",
                    format!("{} frames must be T × {}, got {s:?}", self.modality, self.frame_dim),
                ))
            }
        }
        let x = g.constant(frames.clone())?;
        let h = affine(g, params, &self.frame_prefix(), x)?;
        g.mish(h)
    }

    /// Pools frame states and projects to the `1 × out_dim` embedding.
    pub fn pool_and_project(&self, g: &mut Graph, params: &ParamStore, states: Var) -> Result<Var> {
        let pooled = match self.modality {
            Modality::Speech => attentive_stat_pool(g, params, &self.pool_prefix(), states)?.pooled,
            Modality::Text => mean_pool(g, states)?,
        };
        affine(g, params, &self.proj_prefix(), pooled)
    }

    /// Fixed-size embedding of a `T × frame_dim` sequence.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, frames: &Tensor) -> Result<Var> {
        let h = self.frame_states(g, params, frames)?;
        self.pool_and_project(g, params, h)
    }
}

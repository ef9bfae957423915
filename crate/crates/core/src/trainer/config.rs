use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::DEFAULT_FOCAL_GAMMA;
use crate::model::{Activation, FusionKind, Modality, Task};
use crate::taxonomy::NUM_CLASSES;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const STAGE1_LEARNING_RATE: f64 = 1e-5;
pub const STAGE1_EPOCHS: usize = 20;
pub const STAGE2_LEARNING_RATE: f64 = 5e-6;
pub const STAGE2_EPOCHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Unweighted cross-entropy.
    Ce,
    /// Cross-entropy with inverse-frequency class weights.
    Wce,
    Focal,
    CccLoss,
    Mse,
}

impl LossKind {
    pub fn task(self) -> Task {
        match self {
            LossKind::Ce | LossKind::Wce | LossKind::Focal => Task::Categorical,
            LossKind::CccLoss | LossKind::Mse => Task::Attributes,
        }
    }

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Categorical => LossKind::Wce,
            Task::Attributes => LossKind::CccLoss,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Wce => "wce",
            LossKind::Focal => "focal",
            LossKind::CccLoss => "ccc_loss",
            LossKind::Mse => "mse",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "wce" => Ok(LossKind::Wce),
            "focal" => Ok(LossKind::Focal),
            "ccc_loss" | "ccc" => Ok(LossKind::CccLoss),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::invalid("loss", format!("expected ce|wce|focal|ccc_loss|mse, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Shuffled,
    Balanced,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Shuffled => "shuffled",
            SamplerKind::Balanced => "balanced",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffled" => Ok(SamplerKind::Shuffled),
            "balanced" => Ok(SamplerKind::Balanced),
            _ => Err(Error::invalid("sampler", format!("expected shuffled|balanced, got `{s}`"))),
        }
    }
}

/// Widths of the toy encoders and the cross-attention projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub hidden: usize,
    pub attn_dim: usize,
    pub embed_dim: usize,
    pub xattn_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            hidden: 16,
            attn_dim: 8,
            embed_dim: 16,
            xattn_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    /// Encoder trained in stage 1; ignored in stage 2.
    pub modality: Modality,
    pub task: Task,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub sampler: SamplerKind,
    /// Stage-2 fusion; ignored in stage 1.
    pub fusion: FusionKind,
    pub activation: Activation,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dims: ModelDims,
}

impl TrainConfig {
    pub fn stage1(modality: Modality, task: Task, seed: u64) -> Self {
        Self {
            stage: 1,
            modality,
            task,
            loss: LossKind::default_for(task),
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            sampler: SamplerKind::Shuffled,
            fusion: FusionKind::Concat,
            activation: Activation::Mish,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: STAGE1_LEARNING_RATE,
            epochs: STAGE1_EPOCHS,
            seed,
            dims: ModelDims::default(),
        }
    }

    pub fn stage2(fusion: FusionKind, task: Task, seed: u64) -> Self {
        Self {
            stage: 2,
            fusion,
            learning_rate: STAGE2_LEARNING_RATE,
            epochs: STAGE2_EPOCHS,
            ..Self::stage1(Modality::Speech, task, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage != 1 && self.stage != 2 {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.loss.task() != self.task {
            return bad(format!("loss `{}` does not apply to the {} task", self.loss, self.task));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be ≥ 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad(format!("focal_gamma must be ≥ 0, got {}", self.focal_gamma));
        }
        if self.sampler == SamplerKind::Balanced {
            if self.task != Task::Categorical {
                return bad("the balanced sampler needs categorical labels".into());
            }
            if self.batch_size % NUM_CLASSES != 0 {
                return bad(format!(
                    "balanced sampling needs batch_size divisible by {NUM_CLASSES}, got {}",
                    self.batch_size
                ));
            }
        }
        let d = self.dims;
        if d.hidden == 0 || d.attn_dim == 0 || d.embed_dim == 0 || d.xattn_dim == 0 {
            return bad(format!("model dims must be ≥ 1: {d:?}"));
        }
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::dataio::{decode_checkpoint, encode_checkpoint, read_file_bytes, write_file_bytes};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{CrossAttentionCfg, EncoderCfg, FusionHeadCfg, Modality, Task};
use crate::numerics::{ParamStore, Tensor};

/// Enough structure to rebuild the forward pass from the stored tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub speech: Option<EncoderCfg>,
    pub text: Option<EncoderCfg>,
    pub cross_attention: Option<CrossAttentionCfg>,
    pub head: FusionHeadCfg,
}

impl Architecture {
    pub fn encoder(&self, m: Modality) -> Option<&EncoderCfg> {
        match m {
            Modality::Speech => self.speech.as_ref(),
            Modality::Text => self.text.as_ref(),
        }
    }

    /// Every tensor name the forward pass reads.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for e in [&self.speech, &self.text].into_iter().flatten() {
            names.extend(e.param_names());
        }
        if let Some(x) = &self.cross_attention {
            names.extend(x.param_names());
        }
        names.extend(self.head.param_names());
        names
    }
}

/// A stage-1 checkpoint a stage-2 model was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCheckpoint {
    pub modality: Modality,
    /// SHA-256 of the source checkpoint's bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub task: Task,
    /// Modality of a stage-1 encoder.
    pub modality: Option<Modality>,
    pub arch: Architecture,
    pub config: TrainConfig,
    pub seed: u64,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub dev_metrics: Option<MetricsReport>,
    #[serde(default)]
    pub sources: Vec<SourceCheckpoint>,
    /// Order of the fused embeddings fed to the head.
    #[serde(default)]
    pub concat_order: Vec<Modality>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.params, &self.meta)
    }

    /// Decodes and checks that every tensor the architecture needs is present.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, params): (CheckpointMeta, ParamStore) = decode_checkpoint(bytes)?;
        let ckpt = Self { meta, params };
        ckpt.check_complete()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file_bytes(path)?).map_err(|e| match e {
            Error::Format { .. } | Error::Json(_) => Error::Checkpoint(format!("{}: {e}", path.display())),
            other => other,
        })
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    pub fn check_complete(&self) -> Result<()> {
        for name in self.meta.arch.param_names() {
            self.params.require(&name)?;
        }
        Ok(())
    }

    /// Ensures this is a stage-1 encoder of modality `m`, as stage 2 requires.
    pub fn require_stage1(&self, m: Modality) -> Result<&EncoderCfg> {
        if self.meta.stage != 1 {
            return Err(Error::Checkpoint(format!(
                "{m} encoder source must be a stage-1 checkpoint, got stage {}",
                self.meta.stage
            )));
        }
        if self.meta.modality != Some(m) {
            return Err(Error::Checkpoint(format!(
                "expected a {m} encoder, checkpoint holds {:?}",
                self.meta.modality
            )));
        }
        self.meta
            .arch
            .encoder(m)
            .ok_or_else(|| Error::Checkpoint(format!("stage-1 checkpoint has no {m} encoder")))
    }
}

/// SHA-256 over a tensor's shape and little-endian values.
pub fn tensor_sha256(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in t.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn tensor_digests<'a>(params: &ParamStore, names: impl IntoIterator<Item = &'a String>) -> Result<BTreeMap<String, String>> {
    names
        .into_iter()
        .map(|n| Ok((n.clone(), tensor_sha256(params.require(n)?))))
        .collect()
}

//! Two-stage training: modality encoders with a task head first, then a
//! fusion head over the frozen encoders. Adam, best-dev selection, inference.

mod adam;
mod checkpoint;
mod config;
mod fit;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{tensor_digests, tensor_sha256, Architecture, Checkpoint, CheckpointMeta, SourceCheckpoint};
pub use config::{
    LossKind, ModelDims, SamplerKind, TrainConfig, DEFAULT_BATCH_SIZE, STAGE1_EPOCHS, STAGE1_LEARNING_RATE,
    STAGE2_EPOCHS, STAGE2_LEARNING_RATE,
};
pub use fit::{decode_outputs, model_outputs, predict, score, train_stage1, train_stage2, DevScores, EpochLog, TrainOutcome};

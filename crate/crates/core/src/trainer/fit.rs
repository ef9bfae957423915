use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::checkpoint::{tensor_digests, Architecture, Checkpoint, CheckpointMeta, SourceCheckpoint};
use super::config::{LossKind, SamplerKind, TrainConfig};
use crate::dataio::{LabelRow, Split, UtteranceRecord};
use crate::error::{Error, Result};
use crate::losses::{
    ccc_loss, class_weights_from_counts, cross_entropy, focal_loss, mse_loss, weighted_cross_entropy, ClassWeights,
    FocalConfig,
};
use crate::metrics::{attribute_metrics, classification_metrics, MetricsReport};
use crate::model::{concat_fuse, CrossAttentionCfg, EncoderCfg, FusionHeadCfg, FusionKind, Modality, Task};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, seeded};
use crate::sampling::{balanced_batches, shuffled_batches, BatchPlan};
use crate::taxonomy::{AttributeVector, Emotion, NUM_CLASSES};

const INIT_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1_000;
const EVAL_CHUNK: usize = 64;

/// Dev scores logged per epoch; only the task's columns are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevScores {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average: Option<f64>,
}

impl DevScores {
    fn from_report(r: &MetricsReport) -> Self {
        let c = r.classification.as_ref();
        let a = r.attributes.as_ref();
        Self {
            f1_macro: c.map(|c| c.f1_macro),
            f1_micro: c.map(|c| c.f1_micro),
            accuracy: c.map(|c| c.accuracy),
            valence: a.map(|a| a.valence),
            arousal: a.map(|a| a.arousal),
            dominance: a.map(|a| a.dominance),
            average: a.map(|a| a.average),
        }
    }

    /// F1-macro for categorical runs, mean CCC for attribute runs.
    pub fn selection(&self) -> f64 {
        self.f1_macro.or(self.average).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: DevScores,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Digests of frozen tensors before and after a stage-2 run.
    pub frozen: Option<(BTreeMap<String, String>, BTreeMap<String, String>)>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.log {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Frozen-encoder output for one utterance, ready for the fusion head.
#[derive(Debug, Clone)]
enum FusedInput {
    /// Speech embedding then text embedding.
    Concat(Vec<f64>),
    /// Frame-level hidden states for cross-attention.
    States { speech: Tensor, text: Tensor },
}

fn frames_of(r: &UtteranceRecord, m: Modality) -> &Tensor {
    match m {
        Modality::Speech => &r.speech,
        Modality::Text => &r.text,
    }
}

fn has_label(r: &UtteranceRecord, task: Task) -> bool {
    match task {
        Task::Categorical => r.emotion.is_some(),
        Task::Attributes => r.attributes.is_some(),
    }
}

fn labelled<'a>(records: &'a [UtteranceRecord], split: Split, task: Task) -> Result<Vec<&'a UtteranceRecord>> {
    let out: Vec<_> = records.iter().filter(|r| r.split == split && has_label(r, task)).collect();
    if out.is_empty() {
        return Err(Error::invalid(
            "records",
            format!("the {split} split has no utterances labelled for the {task} task"),
        ));
    }
    Ok(out)
}

fn class_targets(batch: &[&UtteranceRecord]) -> Vec<usize> {
    batch.iter().map(|r| r.emotion.expect("filtered").index()).collect()
}

fn attribute_targets(batch: &[&UtteranceRecord]) -> Result<Tensor> {
    let data = batch
        .iter()
        .flat_map(|r| r.attributes.expect("filtered").to_array())
        .collect();
    Tensor::new(vec![batch.len(), 3], data)
}

/// Everything the batch loss needs besides the outputs.
struct LossSpec {
    kind: LossKind,
    weights: ClassWeights,
    focal: FocalConfig,
}

impl LossSpec {
    fn new(cfg: &TrainConfig, train: &[&UtteranceRecord]) -> Result<Self> {
        let weights = if cfg.loss == LossKind::Wce {
            let mut counts = [0usize; NUM_CLASSES];
            class_targets(train).into_iter().for_each(|c| counts[c] += 1);
            class_weights_from_counts(&counts)?
        } else {
            ClassWeights::uniform()
        };
        Ok(Self {
            kind: cfg.loss,
            weights,
            focal: FocalConfig {
                gamma: cfg.focal_gamma,
                alpha: None,
            },
        })
    }

    fn apply(&self, g: &mut Graph, out: Var, batch: &[&UtteranceRecord]) -> Result<Var> {
        match self.kind {
            LossKind::Ce => cross_entropy(g, out, &class_targets(batch)),
            LossKind::Wce => weighted_cross_entropy(g, out, &class_targets(batch), &self.weights),
            LossKind::Focal => focal_loss(g, out, &class_targets(batch), &self.focal),
            LossKind::CccLoss => ccc_loss(g, out, &attribute_targets(batch)?),
            LossKind::Mse => mse_loss(g, out, &attribute_targets(batch)?),
        }
    }
}

fn plan_epoch(cfg: &TrainConfig, train: &[&UtteranceRecord], epoch: usize) -> Result<BatchPlan> {
    let seed = derive_seed(cfg.seed, SAMPLER_STREAM + epoch as u64);
    let mut plan = match cfg.sampler {
        SamplerKind::Shuffled => shuffled_batches(train.len(), cfg.batch_size, seed)?,
        SamplerKind::Balanced => balanced_batches(&class_targets(train), cfg.batch_size, seed)?,
    };
    // a CCC needs two samples; fold a trailing singleton into its neighbour
    if cfg.loss == LossKind::CccLoss && plan.batches.len() > 1 && plan.batches.last().is_some_and(|b| b.len() < 2) {
        let last = plan.batches.pop().expect("non-empty");
        plan.batches.last_mut().expect("non-empty").extend(last);
    }
    Ok(plan)
}

/// Stage-1 forward: encoder per utterance, stacked, then the head.
fn encoder_head_forward(
    g: &mut Graph,
    arch: &Architecture,
    params: &ParamStore,
    enc: &EncoderCfg,
    batch: &[&UtteranceRecord],
) -> Result<Var> {
    let embs = batch
        .iter()
        .map(|r| enc.forward(g, params, frames_of(r, enc.modality)))
        .collect::<Result<Vec<_>>>()?;
    let x = g.concat(&embs, 0)?;
    arch.head.forward(g, params, x)
}

/// Stage-2 forward over precomputed frozen-encoder outputs.
fn fused_head_forward(g: &mut Graph, arch: &Architecture, params: &ParamStore, batch: &[&FusedInput]) -> Result<Var> {
    let x = match batch.first() {
        Some(FusedInput::Concat(first)) => {
            let width = first.len();
            let mut data = Vec::with_capacity(batch.len() * width);
            for f in batch {
                match f {
                    FusedInput::Concat(v) => data.extend_from_slice(v),
                    FusedInput::States { .. } => unreachable!("homogeneous batch"),
                }
            }
            g.constant(Tensor::new(vec![batch.len(), width], data)?)?
        }
        Some(FusedInput::States { .. }) => {
            let xattn = arch
                .cross_attention
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("cross-attention fusion without its config".into()))?;
            let rows = batch
                .iter()
                .map(|f| match f {
                    FusedInput::States { speech, text } => {
                        let s = g.constant(speech.clone())?;
                        let t = g.constant(text.clone())?;
                        xattn.forward(g, params, s, t)
                    }
                    FusedInput::Concat(_) => unreachable!("homogeneous batch"),
                })
                .collect::<Result<Vec<_>>>()?;
            g.concat(&rows, 0)?
        }
        None => return Err(Error::EmptySequence),
    };
    arch.head.forward(g, params, x)
}

fn encode_frozen(arch: &Architecture, params: &ParamStore, r: &UtteranceRecord) -> Result<FusedInput> {
    let (speech, text) = match (&arch.speech, &arch.text) {
        (Some(s), Some(t)) => (s, t),
        _ => return Err(Error::Checkpoint("fusion model needs both encoders".into())),
    };
    let mut g = Graph::new();
    if arch.cross_attention.is_some() {
        let s = speech.frame_states(&mut g, params, &r.speech)?;
        let t = text.frame_states(&mut g, params, &r.text)?;
        Ok(FusedInput::States {
            speech: g.value(s).clone(),
            text: g.value(t).clone(),
        })
    } else {
        let s = speech.forward(&mut g, params, &r.speech)?;
        let t = text.forward(&mut g, params, &r.text)?;
        Ok(FusedInput::Concat(concat_fuse(g.value(s).data(), g.value(t).data())?))
    }
}

fn check_features(arch: &Architecture, records: &[&UtteranceRecord]) -> Result<()> {
    for r in records {
        for enc in [&arch.speech, &arch.text].into_iter().flatten() {
            let t = frames_of(r, enc.modality);
            if t.shape()[1] != enc.frame_dim {
                return Err(Error::shape(
                    "predict",
                    format!(
                        "`{}` has {}-wide {} features, model expects {}",
                        r.id,
                        t.shape()[1],
                        enc.modality,
                        enc.frame_dim
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// Raw `N × out_dim` model outputs (logits or attribute values).
pub fn model_outputs(ckpt: &Checkpoint, records: &[&UtteranceRecord]) -> Result<Tensor> {
    let arch = &ckpt.meta.arch;
    check_features(arch, records)?;
    let mut data = Vec::with_capacity(records.len() * arch.head.out_dim());
    for chunk in records.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let out = if ckpt.meta.stage == 1 {
            let m = ckpt
                .meta
                .modality
                .ok_or_else(|| Error::Checkpoint("stage-1 checkpoint without modality".into()))?;
            let enc = arch
                .encoder(m)
                .ok_or_else(|| Error::Checkpoint(format!("stage-1 checkpoint has no {m} encoder")))?;
            encoder_head_forward(&mut g, arch, &ckpt.params, enc, chunk)?
        } else {
            let feats = chunk
                .iter()
                .map(|r| encode_frozen(arch, &ckpt.params, r))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FusedInput> = feats.iter().collect();
            fused_head_forward(&mut g, arch, &ckpt.params, &refs)?
        };
        data.extend_from_slice(g.value(out).data());
    }
    Tensor::new(vec![records.len(), arch.head.out_dim()], data)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Maps raw outputs to labels: argmax over the 8 logits, or the attribute
/// triple, optionally clamped to `[1, 7]`.
pub fn decode_outputs(task: Task, outputs: &Tensor, ids: &[(&str, Split)], clamp: bool) -> Result<Vec<LabelRow>> {
    let (n, w) = outputs.dims2().ok_or_else(|| Error::shape("decode_outputs", "outputs must be a matrix"))?;
    if n != ids.len() || w != task.out_dim() {
        return Err(Error::shape(
            "decode_outputs",
            format!("{n} × {w} outputs for {} ids and the {task} task", ids.len()),
        ));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &(id, split))| {
            let row = outputs.row_slice(i);
            let (emotion, attributes) = match task {
                Task::Categorical => (Some(Emotion::ALL[argmax(row)]), None),
                Task::Attributes => {
                    let v = AttributeVector::from_array([row[0], row[1], row[2]]);
                    (None, Some(if clamp { v.clamped().0 } else { v }))
                }
            };
            LabelRow {
                id: id.to_string(),
                split,
                emotion,
                attributes,
            }
        })
        .collect())
}

pub fn predict(ckpt: &Checkpoint, records: &[&UtteranceRecord], clamp: bool) -> Result<Vec<LabelRow>> {
    let out = model_outputs(ckpt, records)?;
    let ids: Vec<(&str, Split)> = records.iter().map(|r| (r.id.as_str(), r.split)).collect();
    decode_outputs(ckpt.meta.task, &out, &ids, clamp)
}

/// Metrics of predictions against the records' labels for `task`.
pub fn score(task: Task, pred: &[LabelRow], truth: &[&UtteranceRecord]) -> Result<MetricsReport> {
    match task {
        Task::Categorical => {
            let p: Vec<Emotion> = pred.iter().map(|r| r.emotion.expect("categorical prediction")).collect();
            let t: Vec<Emotion> = truth.iter().map(|r| r.emotion.expect("filtered")).collect();
            Ok(MetricsReport::new(Some(classification_metrics(&p, &t)?), None))
        }
        Task::Attributes => {
            let p: Vec<[f64; 3]> = pred.iter().map(|r| r.attributes.expect("attribute prediction").to_array()).collect();
            let t: Vec<[f64; 3]> = truth.iter().map(|r| r.attributes.expect("filtered").to_array()).collect();
            Ok(MetricsReport::new(None, Some(attribute_metrics(&p, &t)?)))
        }
    }
}

/// Shared epoch loop: step on `trainable`, evaluate on dev, keep the best.
fn fit<F, E>(
    cfg: &TrainConfig,
    params: &mut ParamStore,
    trainable: &[String],
    train: &[&UtteranceRecord],
    mut batch_loss: F,
    mut dev_report: E,
) -> Result<(Vec<EpochLog>, ParamStore, usize, MetricsReport)>
where
    F: FnMut(&mut Graph, &ParamStore, &[usize]) -> Result<Var>,
    E: FnMut(&ParamStore) -> Result<MetricsReport>,
{
    let mut adam = AdamState::default();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore, MetricsReport)> = None;
    for epoch in 1..=cfg.epochs {
        let plan = plan_epoch(cfg, train, epoch)?;
        let mut total = 0.0;
        for batch in plan.iter() {
            let mut g = Graph::new();
            let loss = batch_loss(&mut g, params, batch)?;
            total += g.value(loss).item();
            g.backward(loss, params)?;
            adam_step(params, trainable, &mut adam, cfg.learning_rate)?;
        }
        let report = dev_report(params)?;
        let dev = DevScores::from_report(&report);
        let score = dev.selection();
        let improved = best.as_ref().is_none_or(|(s, ..)| score > *s);
        if improved {
            best = Some((score, epoch, params.clone(), report));
        }
        log.push(EpochLog {
            epoch,
            train_loss: total / plan.len() as f64,
            dev,
            best: improved,
        });
    }
    let (_, epoch, kept, report) = best.expect("at least one epoch");
    Ok((log, kept, epoch, report))
}

/// Trains one modality encoder with a task head end to end.
pub fn train_stage1(cfg: &TrainConfig, records: &[UtteranceRecord]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != 1 {
        return Err(Error::Config(format!("train_stage1 needs stage = 1, got {}", cfg.stage)));
    }
    let train = labelled(records, Split::Train, cfg.task)?;
    let dev = labelled(records, Split::Dev, cfg.task)?;
    let frame_dim = frames_of(train[0], cfg.modality).shape()[1];
    let d = cfg.dims;
    let enc = match cfg.modality {
        Modality::Speech => EncoderCfg::speech(frame_dim, d.hidden, d.attn_dim, d.embed_dim)?,
        Modality::Text => EncoderCfg::text(frame_dim, d.hidden, d.embed_dim)?,
    };
    let head = FusionHeadCfg {
        fusion: FusionKind::Concat,
        activation: cfg.activation,
        task: cfg.task,
        input_dim: d.embed_dim,
    };
    let arch = Architecture {
        speech: (cfg.modality == Modality::Speech).then_some(enc),
        text: (cfg.modality == Modality::Text).then_some(enc),
        cross_attention: None,
        head,
    };
    let mut rng = seeded(derive_seed(cfg.seed, INIT_STREAM));
    let mut params = enc.init(&mut rng)?;
    params.merge(head.init(&mut rng)?)?;
    let trainable = arch.param_names();
    let loss = LossSpec::new(cfg, &train)?;

    let probe = Checkpoint {
        meta: CheckpointMeta {
            stage: 1,
            task: cfg.task,
            modality: Some(cfg.modality),
            arch: arch.clone(),
            config: cfg.clone(),
            seed: cfg.seed,
            best_epoch: 0,
            dev_metrics: None,
            sources: vec![],
            concat_order: vec![],
        },
        params: ParamStore::new(),
    };
    let (log, kept, best_epoch, report) = fit(
        cfg,
        &mut params,
        &trainable,
        &train,
        |g, p, idx| {
            let batch: Vec<&UtteranceRecord> = idx.iter().map(|&i| train[i]).collect();
            let out = encoder_head_forward(g, &arch, p, &enc, &batch)?;
            loss.apply(g, out, &batch)
        },
        |p| {
            let ckpt = Checkpoint {
                meta: probe.meta.clone(),
                params: p.clone(),
            };
            score(cfg.task, &predict(&ckpt, &dev, false)?, &dev)
        },
    )?;
    let mut meta = probe.meta;
    meta.best_epoch = best_epoch;
    meta.dev_metrics = Some(report);
    Ok(TrainOutcome {
        checkpoint: Checkpoint { meta, params: kept },
        log,
        frozen: None,
    })
}

/// Trains a fusion head on top of two frozen stage-1 encoders.
pub fn train_stage2(
    cfg: &TrainConfig,
    speech_ckpt: &Checkpoint,
    text_ckpt: &Checkpoint,
    records: &[UtteranceRecord],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != 2 {
        return Err(Error::Config(format!("train_stage2 needs stage = 2, got {}", cfg.stage)));
    }
    let speech = *speech_ckpt.require_stage1(Modality::Speech)?;
    let text = *text_ckpt.require_stage1(Modality::Text)?;
    let train = labelled(records, Split::Train, cfg.task)?;
    let dev = labelled(records, Split::Dev, cfg.task)?;

    let mut params = ParamStore::new();
    let mut frozen_names = Vec::new();
    for (ckpt, enc) in [(speech_ckpt, &speech), (text_ckpt, &text)] {
        for name in enc.param_names() {
            params.insert(name.clone(), ckpt.params.require(&name)?.clone())?;
            frozen_names.push(name);
        }
    }
    let before = tensor_digests(&params, &frozen_names)?;

    let mut rng = seeded(derive_seed(cfg.seed, INIT_STREAM));
    let cross_attention = match cfg.fusion {
        FusionKind::Concat => None,
        FusionKind::CrossAttention => Some(CrossAttentionCfg {
            speech_dim: speech.hidden,
            text_dim: text.hidden,
            model_dim: cfg.dims.xattn_dim,
        }),
    };
    let head = FusionHeadCfg {
        fusion: cfg.fusion,
        activation: cfg.activation,
        task: cfg.task,
        input_dim: match &cross_attention {
            None => speech.out_dim + text.out_dim,
            Some(x) => x.model_dim,
        },
    };
    let mut trainable = Vec::new();
    if let Some(x) = &cross_attention {
        params.merge(x.init(&mut rng)?)?;
        trainable.extend(x.param_names());
    }
    params.merge(head.init(&mut rng)?)?;
    trainable.extend(head.param_names());
    let arch = Architecture {
        speech: Some(speech),
        text: Some(text),
        cross_attention,
        head,
    };

    check_features(&arch, &train)?;
    check_features(&arch, &dev)?;
    let train_feats = train
        .iter()
        .map(|r| encode_frozen(&arch, &params, r))
        .collect::<Result<Vec<_>>>()?;
    let dev_feats = dev
        .iter()
        .map(|r| encode_frozen(&arch, &params, r))
        .collect::<Result<Vec<_>>>()?;
    let dev_ids: Vec<(&str, Split)> = dev.iter().map(|r| (r.id.as_str(), r.split)).collect();
    let loss = LossSpec::new(cfg, &train)?;

    let (log, kept, best_epoch, report) = fit(
        cfg,
        &mut params,
        &trainable,
        &train,
        |g, p, idx| {
            let feats: Vec<&FusedInput> = idx.iter().map(|&i| &train_feats[i]).collect();
            let batch: Vec<&UtteranceRecord> = idx.iter().map(|&i| train[i]).collect();
            let out = fused_head_forward(g, &arch, p, &feats)?;
            loss.apply(g, out, &batch)
        },
        |p| {
            let mut data = Vec::with_capacity(dev_feats.len() * head.out_dim());
            for chunk in dev_feats.chunks(EVAL_CHUNK) {
                let mut g = Graph::new();
                let refs: Vec<&FusedInput> = chunk.iter().collect();
                let out = fused_head_forward(&mut g, &arch, p, &refs)?;
                data.extend_from_slice(g.value(out).data());
            }
            let outputs = Tensor::new(vec![dev_feats.len(), head.out_dim()], data)?;
            score(cfg.task, &decode_outputs(cfg.task, &outputs, &dev_ids, false)?, &dev)
        },
    )?;

    let after = tensor_digests(&kept, &frozen_names)?;
    if before != after {
        return Err(Error::Graph {
            op: "train_stage2",
            detail: "a frozen encoder tensor changed during training".into(),
        });
    }
    let meta = CheckpointMeta {
        stage: 2,
        task: cfg.task,
        modality: None,
        arch,
        config: cfg.clone(),
        seed: cfg.seed,
        best_epoch,
        dev_metrics: Some(report),
        sources: vec![
            SourceCheckpoint {
                modality: Modality::Speech,
                sha256: speech_ckpt.sha256()?,
            },
            SourceCheckpoint {
                modality: Modality::Text,
                sha256: text_ckpt.sha256()?,
            },
        ],
        concat_order: vec![Modality::Speech, Modality::Text],
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { meta, params: kept },
        log,
        frozen: Some((before, after)),
    })
}

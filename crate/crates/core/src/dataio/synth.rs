//! Seeded synthetic utterances: every class gets a random unit direction per
//! modality; frames scatter around `separation · direction` with Gaussian
//! noise, and attributes scatter around a per-class anchor.

use serde::{Deserialize, Serialize};

use super::{Split, UtteranceRecord};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{normal, seeded, SeededRng};
use crate::taxonomy::{AttributeVector, Emotion, ATTR_MAX, ATTR_MIN, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::Rng;

/// `[arousal, valence, dominance]` per class, in A C D F H N S U order.
pub const DEFAULT_ANCHORS: [[f64; 3]; NUM_CLASSES] = [
    [6.0, 2.0, 5.5],
    [4.0, 2.5, 5.0],
    [4.5, 2.0, 4.5],
    [5.5, 2.0, 2.0],
    [5.5, 6.5, 5.0],
    [3.5, 4.0, 4.0],
    [2.0, 2.0, 2.5],
    [6.0, 5.0, 4.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Utterances per class, A C D F H N S U order.
    pub counts: [usize; NUM_CLASSES],
    pub speech_dim: usize,
    pub text_dim: usize,
    /// Inclusive range of speech frame counts.
    pub speech_frames: (usize, usize),
    /// Inclusive range of text token counts.
    pub text_tokens: (usize, usize),
    /// Norm of each class centre.
    pub separation: f64,
    /// Standard deviation of feature and attribute noise.
    pub noise: f64,
    pub anchors: [[f64; 3]; NUM_CLASSES],
    /// Per-class fractions assigned to train and dev; the rest is test1.
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            counts: [100; NUM_CLASSES],
            speech_dim: 16,
            text_dim: 16,
            speech_frames: (4, 12),
            text_tokens: (3, 8),
            separation: 1.5,
            noise: 0.3,
            anchors: DEFAULT_ANCHORS,
            train_fraction: 0.7,
            dev_fraction: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.counts.iter().filter(|&&c| c > 0).count() < 2 {
            return bad("synthetic data needs at least two non-empty classes".into());
        }
        if self.speech_dim == 0 || self.text_dim == 0 {
            return bad("speech_dim and text_dim must be ≥ 1".into());
        }
        for (name, (lo, hi)) in [("speech_frames", self.speech_frames), ("text_tokens", self.text_tokens)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range {lo}..={hi} must satisfy 1 ≤ min ≤ max"));
            }
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be > 0, got {}", self.noise));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be ≥ 0, got {}", self.separation));
        }
        if let Some(a) = self.anchors.iter().flatten().find(|a| !(ATTR_MIN..=ATTR_MAX).contains(*a)) {
            return bad(format!("anchor {a} outside [1,7]"));
        }
        let (t, d) = (self.train_fraction, self.dev_fraction);
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&d) || t + d > 1.0 + 1e-12 {
            return bad(format!("split fractions train={t} dev={d} must be in [0,1] and sum to ≤ 1"));
        }
        Ok(())
    }
}

fn unit_direction(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_frames(rng: &mut SeededRng, centre: &[f64], range: (usize, usize), cfg: &SynthConfig) -> Result<Tensor> {
    let t = rng.random_range(range.0..=range.1);
    let d = centre.len();
    let data = (0..t * d)
        .map(|i| (cfg.separation * centre[i % d] + cfg.noise * normal(rng)) as f32 as f64)
        .collect();
    Tensor::new(vec![t, d], data)
}

/// Deterministic in `cfg`: equal configs give equal records.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<UtteranceRecord>> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let speech_dirs: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|_| unit_direction(&mut rng, cfg.speech_dim)).collect();
    let text_dirs: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|_| unit_direction(&mut rng, cfg.text_dim)).collect();

    let mut plan: Vec<(usize, Split)> = Vec::new();
    for (c, &n) in cfg.counts.iter().enumerate() {
        let n_train = ((n as f64 * cfg.train_fraction).round() as usize).min(n);
        let n_dev = ((n as f64 * cfg.dev_fraction).round() as usize).min(n - n_train);
        for i in 0..n {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test1
            };
            plan.push((c, split));
        }
    }
    plan.shuffle(&mut rng);

    plan.into_iter()
        .enumerate()
        .map(|(i, (c, split))| {
            let speech = sample_frames(&mut rng, &speech_dirs[c], cfg.speech_frames, cfg)?;
            let text = sample_frames(&mut rng, &text_dirs[c], cfg.text_tokens, cfg)?;
            let attrs = cfg.anchors[c].map(|a| (a + cfg.noise * normal(&mut rng)).clamp(ATTR_MIN, ATTR_MAX));
            Ok(UtteranceRecord {
                id: format!("utt{i:05}"),
                split,
                speech,
                text,
                emotion: Some(Emotion::ALL[c]),
                attributes: Some(AttributeVector::from_array(attrs)),
            })
        })
        .collect()
}

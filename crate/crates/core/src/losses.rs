//! Class-imbalance losses (weighted CE, focal) and the concordance correlation
//! coefficient in metric and loss form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::taxonomy::{Emotion, NUM_CLASSES};

/// Per-class weights for weighted cross-entropy; strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() != NUM_CLASSES {
            return Err(Error::invalid("class_weights", format!("need {NUM_CLASSES} weights, got {}", w.len())));
        }
        if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("class_weights", "weights must be finite and > 0"));
        }
        Ok(Self(w))
    }

    pub fn uniform() -> Self {
        Self(vec![1.0; NUM_CLASSES])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Inverse-frequency weights `N / (K · n_c)`.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<ClassWeights> {
    if counts.len() != NUM_CLASSES {
        return Err(Error::invalid("counts", format!("need {NUM_CLASSES} counts, got {}", counts.len())));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ClassAbsent(Emotion::ALL[c].code()));
    }
    let total: usize = counts.iter().sum();
    let k = NUM_CLASSES as f64;
    ClassWeights::new(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    /// Per-class α; `None` means uniform α = 1.
    pub alpha: Option<Vec<f64>>,
}

pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_FOCAL_GAMMA,
            alpha: None,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be ≥ 0, got {}", self.gamma)));
        }
        if let Some(a) = &self.alpha {
            ClassWeights::new(a.clone())?;
        }
        Ok(())
    }
}

fn check_targets(g: &Graph, logits: Var, targets: &[usize]) -> Result<()> {
    match g.shape(logits) {
        [b, k] if *k == NUM_CLASSES && *b == targets.len() => {}
        s => {
            return Err(Error::shape(
                "loss",
                format!("logits {s:?} for {} targets over {NUM_CLASSES} classes", targets.len()),
            ))
        }
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= NUM_CLASSES) {
        return Err(Error::ClassOutOfRange(bad));
    }
    Ok(())
}

/// `log p_t` per row, `B × 1`.
fn target_log_probs(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    check_targets(g, logits, targets)?;
    let ls = g.log_softmax(logits, 1)?;
    g.pick(ls, targets)
}

fn mean_nll(g: &mut Graph, per_sample: Var) -> Result<Var> {
    let nll = g.neg(per_sample)?;
    g.mean_all(nll)
}

/// Unweighted mean cross-entropy.
pub fn cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let lp = target_log_probs(g, logits, targets)?;
    mean_nll(g, lp)
}

/// `Σ w_{y_i} · (−log p_{t,i}) / Σ w_{y_i}`.
pub fn weighted_cross_entropy(g: &mut Graph, logits: Var, targets: &[usize], w: &ClassWeights) -> Result<Var> {
    let lp = target_log_probs(g, logits, targets)?;
    let total: f64 = targets.iter().map(|&t| w.0[t]).sum();
    let norm: Vec<f64> = targets.iter().map(|&t| -w.0[t] / total).collect();
    let wv = g.constant(Tensor::new(vec![targets.len(), 1], norm)?)?;
    let weighted = g.mul(lp, wv)?;
    g.sum(weighted)
}

/// Batch mean of `α_{y_i} (1 − p_{t,i})^γ · (−log p_{t,i})`.
///
/// With `γ = 0` and uniform α the modulating and α factors are skipped, so the
/// result is computed by exactly the same ops as [`cross_entropy`].
pub fn focal_loss(g: &mut Graph, logits: Var, targets: &[usize], cfg: &FocalConfig) -> Result<Var> {
    cfg.validate()?;
    let lp = target_log_probs(g, logits, targets)?;
    let mut per = lp;
    if cfg.gamma != 0.0 {
        let p = g.exp(lp)?;
        let q = g.scale(p, -1.0)?;
        let q = g.add_scalar(q, 1.0)?;
        let m = g.powf(q, cfg.gamma)?;
        per = g.mul(per, m)?;
    }
    if let Some(alpha) = &cfg.alpha {
        let a: Vec<f64> = targets.iter().map(|&t| alpha[t]).collect();
        let av = g.constant(Tensor::new(vec![targets.len(), 1], a)?)?;
        per = g.mul(per, av)?;
    }
    mean_nll(g, per)
}

/// Denominator below which CCC is undefined.
pub const CCC_DEGENERATE: f64 = 1e-15;

/// Concordance correlation coefficient with population moments:
/// `2 s_xy / (s_x² + s_y² + (x̄ − ȳ)²)`.
pub fn ccc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("ccc", format!("length mismatch {} vs {}", pred.len(), truth.len())));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::invalid("ccc", format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mx = pred.iter().sum::<f64>() / nf;
    let my = truth.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in pred.iter().zip(truth) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let denom = sxx / nf + syy / nf + (mx - my) * (mx - my);
    if denom < CCC_DEGENERATE {
        return Err(Error::DegenerateCcc);
    }
    Ok(2.0 * (sxy / nf) / denom)
}

fn check_regression(g: &Graph, pred: Var, truth: &Tensor, op: &'static str) -> Result<usize> {
    if g.shape(pred) != truth.shape() || truth.rank() != 2 {
        return Err(Error::shape(op, format!("pred {:?} vs truth {:?}", g.shape(pred), truth.shape())));
    }
    Ok(truth.shape()[0])
}

/// `1 − mean_j CCC(pred[:, j], truth[:, j])`, differentiable in `pred`.
pub fn ccc_loss(g: &mut Graph, pred: Var, truth: &Tensor) -> Result<Var> {
    let b = check_regression(g, pred, truth, "ccc_loss")?;
    if b < 2 {
        return Err(Error::invalid("ccc_loss", format!("need a batch of at least 2, got {b}")));
    }
    let cols = truth.shape()[1];
    for j in 0..cols {
        let p: Vec<f64> = (0..b).map(|i| g.value(pred).get2(i, j)).collect();
        let t: Vec<f64> = (0..b).map(|i| truth.get2(i, j)).collect();
        ccc(&p, &t)?;
    }

    let t = g.constant(truth.clone())?;
    let mp = g.mean(pred, 0)?;
    let mt = g.mean(t, 0)?;
    let mpb = g.broadcast_rows(mp, b)?;
    let mtb = g.broadcast_rows(mt, b)?;
    let dp = g.sub(pred, mpb)?;
    let dt = g.sub(t, mtb)?;
    let cross = g.mul(dp, dt)?;
    let cov = g.mean(cross, 0)?;
    let dp2 = g.square(dp)?;
    let vp = g.mean(dp2, 0)?;
    let dt2 = g.square(dt)?;
    let vt = g.mean(dt2, 0)?;
    let gap = g.sub(mp, mt)?;
    let gap = g.square(gap)?;
    let denom = g.add(vp, vt)?;
    let denom = g.add(denom, gap)?;
    let num = g.scale(cov, 2.0)?;
    let per_col = g.div(num, denom)?;
    let mean_ccc = g.mean_all(per_col)?;
    let neg = g.neg(mean_ccc)?;
    g.add_scalar(neg, 1.0)
}

/// Mean squared error over all entries.
pub fn mse_loss(g: &mut Graph, pred: Var, truth: &Tensor) -> Result<Var> {
    check_regression(g, pred, truth, "mse_loss")?;
    let t = g.constant(truth.clone())?;
    let d = g.sub(pred, t)?;
    let d2 = g.square(d)?;
    g.mean_all(d2)
}

//! Browser bindings for the demo page: activation curves, focal loss against
//! the target probability, and a binned CCC scatter.

use rand::Rng;
use serlab::losses::{focal_loss, FocalConfig};
use serlab::metrics::{binned_ccc, BinCcc};
use serlab::numerics::{mish_grad_scalar, mish_scalar, Graph, Tensor};
use serlab::rng::{normal, seeded};
use serlab::taxonomy::{ATTR_MAX, ATTR_MIN, NUM_CLASSES};
use wasm_bindgen::prelude::*;

fn js(e: serlab::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `n` evenly spaced points over `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Rows `[x, mish, relu, mish']` flattened.
pub fn activation_table(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    grid(lo, hi, n)
        .into_iter()
        .flat_map(|x| [x, mish_scalar(x), x.max(0.0), mish_grad_scalar(x)])
        .collect()
}

/// Loss of a single sample whose target class has probability `p_t`, spread
/// evenly over the other seven classes.
pub fn focal_at(p_t: f64, gamma: f64, alpha: f64) -> serlab::Result<f64> {
    let rest = (1.0 - p_t) / (NUM_CLASSES - 1) as f64;
    let mut z = vec![rest.ln(); NUM_CLASSES];
    z[0] = p_t.ln();
    let mut g = Graph::new();
    let logits = g.constant(Tensor::matrix(1, NUM_CLASSES, z)?)?;
    let cfg = FocalConfig {
        gamma,
        alpha: Some(vec![alpha; NUM_CLASSES]),
    };
    cfg.validate()?;
    let l = focal_loss(&mut g, logits, &[0], &cfg)?;
    Ok(g.value(l).item())
}

/// Rows `[p_t, focal, cross-entropy]` for `p_t` in `(0, 1)`.
pub fn focal_table(gamma: f64, alpha: f64, n: usize) -> serlab::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * n);
    for p in grid(0.01, 0.99, n) {
        let f = focal_at(p, gamma, alpha)?;
        let ce = focal_at(p, 0.0, 1.0)?;
        out.extend([p, f, ce]);
    }
    Ok(out)
}

/// Synthetic regression output that shrinks toward the scale midpoint, the
/// way an under-confident model would. Flattened `[truth, pred]` pairs.
pub fn scatter(seed: u64, n: usize, shrink: f64, noise: f64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mid = (ATTR_MIN + ATTR_MAX) / 2.0;
    (0..n)
        .flat_map(|_| {
            let t: f64 = rng.random_range(ATTR_MIN..=ATTR_MAX);
            let p = mid + (1.0 - shrink) * (t - mid) + noise * normal(&mut rng);
            [t, p]
        })
        .collect()
}

pub fn bins(points: &[f64], edges: &[f64]) -> serlab::Result<Vec<BinCcc>> {
    let truth: Vec<f64> = points.iter().step_by(2).copied().collect();
    let pred: Vec<f64> = points.iter().skip(1).step_by(2).copied().collect();
    binned_ccc(&pred, &truth, edges)
}

#[wasm_bindgen]
pub fn activation_curves(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    activation_table(lo, hi, n)
}

#[wasm_bindgen]
pub fn focal_curves(gamma: f64, alpha: f64, n: usize) -> Result<Vec<f64>, JsError> {
    focal_table(gamma, alpha, n).map_err(js)
}

#[wasm_bindgen]
pub fn scatter_points(seed: u32, n: usize, shrink: f64, noise: f64) -> Vec<f64> {
    scatter(seed.into(), n, shrink, noise)
}

/// JSON array of `{lo, hi, closed, n, status, value?}` per bin.
#[wasm_bindgen]
pub fn binned_ccc_json(points: &[f64], edges: &[f64]) -> Result<String, JsError> {
    let b = bins(points, edges).map_err(js)?;
    serde_json::to_string(&b).map_err(|e| JsError::new(&e.to_string()))
}

/// Global CCC of the scatter.
#[wasm_bindgen]
pub fn global_ccc(points: &[f64]) -> Result<f64, JsError> {
    let b = bins(points, &[ATTR_MIN, ATTR_MAX]).map_err(js)?;
    b[0].value().ok_or_else(|| JsError::new("too few points for CCC"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_hit_known_points() {
        let t = activation_table(-1.0, 1.0, 3);
        assert_eq!(t.len(), 12);
        assert_eq!(&t[4..8], &[0.0, 0.0, 0.0, 0.6]);
        assert!((t[9] - 0.865098).abs() < 1e-6);
    }

    #[test]
    fn focal_matches_closed_form() {
        for &(p, gamma) in &[(0.9, 2.0), (0.3, 1.0), (0.5, 0.0)] {
            let want = -(1.0f64 - p).powf(gamma) * p.ln();
            assert!((focal_at(p, gamma, 1.0).unwrap() - want).abs() < 1e-12);
        }
        let t = focal_table(2.0, 1.0, 5).unwrap();
        assert!(t.chunks(3).all(|r| r[1] <= r[2]));
    }

    #[test]
    fn zero_gamma_is_cross_entropy() {
        for p in [0.05, 0.25, 0.8] {
            assert!((focal_at(p, 0.0, 1.0).unwrap() + f64::ln(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn one_bin_is_global() {
        let pts = scatter(3, 200, 0.4, 0.5);
        assert_eq!(pts.len(), 400);
        let b = bins(&pts, &[1.0, 7.0]).unwrap();
        let three = bins(&pts, &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(three.iter().map(|b| b.n).sum::<usize>(), 200);
        assert!(serde_json::to_string(&three).unwrap().contains("\"status\""));
    }
}

//! Sequence pooling: attentive statistics for speech frames, mean for text tokens.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{uniform_tensor, SeededRng};

/// Variance floor under the square root of the weighted standard deviation.
pub const STAT_EPS: f64 = 1e-9;

/// Pooled vector together with the attention distribution that produced it.
#[derive(Debug, Clone, Copy)]
pub struct PoolOutput {
    /// `1 × 2D`: weighted mean followed by weighted standard deviation.
    pub pooled: Var,
    /// `T × 1` attention weights.
    pub weights: Var,
}

/// Parameter names for an attentive pooling layer under `prefix`.
pub struct AttentivePoolNames {
    pub w: String,
    pub b: String,
    pub v: String,
    pub k: String,
}

impl AttentivePoolNames {
    pub fn new(prefix: &str) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            v: format!("{prefix}.v"),
            k: format!("{prefix}.k"),
        }
    }

    pub fn all(&self) -> [&str; 4] {
        [&self.w, &self.b, &self.v, &self.k]
    }
}

/// Initializes `W: D×A`, `b: A`, `v: A×1`, `k: 1`.
pub fn init_attentive_pool(
    store: &mut ParamStore,
    prefix: &str,
    dim: usize,
    attn_dim: usize,
    rng: &mut SeededRng,
) -> Result<()> {
    let n = AttentivePoolNames::new(prefix);
    let bw = 1.0 / (dim as f64).sqrt();
    let bv = 1.0 / (attn_dim as f64).sqrt();
    store.insert(n.w, uniform_tensor(rng, &[dim, attn_dim], -bw, bw))?;
    store.insert(n.b, Tensor::zeros(&[attn_dim]))?;
    store.insert(n.v, uniform_tensor(rng, &[attn_dim, 1], -bv, bv))?;
    store.insert(n.k, Tensor::zeros(&[1]))?;
    Ok(())
}

/// Attentive statistics pooling over the rows of `frames` (`T × D`).
///
/// Scores are `e_t = vᵀ tanh(W h_t + b) + k`, weights `α = softmax(e)`, and the
/// output is `[Σ α_t h_t ; sqrt(max(Σ α_t h_t² − μ², 0) + ε)]`.
pub fn attentive_stat_pool(g: &mut Graph, params: &ParamStore, prefix: &str, frames: Var) -> Result<PoolOutput> {
    let t = frames_len(g, frames)?;
    let n = AttentivePoolNames::new(prefix);
    let w = g.param(&n.w, params)?;
    let b = g.param(&n.b, params)?;
    let v = g.param(&n.v, params)?;
    let k = g.param(&n.k, params)?;

    let hidden = g.matmul(frames, w)?;
    let hidden = g.add_row(hidden, b)?;
    let hidden = g.tanh(hidden)?;
    let scores = g.matmul(hidden, v)?;
    let kb = g.broadcast_scalar(k, &[t, 1])?;
    let scores = g.add(scores, kb)?;
    let weights = g.softmax(scores, 0)?;
    let pooled = weighted_stats(g, frames, weights)?;
    Ok(PoolOutput { pooled, weights })
}

/// Weighted mean and standard deviation of `frames` under column weights `weights` (`T × 1`).
pub fn weighted_stats(g: &mut Graph, frames: Var, weights: Var) -> Result<Var> {
    let wt = g.transpose(weights)?;
    let mean = g.matmul(wt, frames)?;
    let sq = g.square(frames)?;
    let second = g.matmul(wt, sq)?;
    let mean_sq = g.square(mean)?;
    let var = g.sub(second, mean_sq)?;
    let var = g.relu(var)?;
    let var = g.add_scalar(var, STAT_EPS)?;
    let std = g.sqrt(var)?;
    g.concat(&[mean, std], 1)
}

/// Columnwise mean of `frames` (`T × D`), as a `1 × D` row.
pub fn mean_pool(g: &mut Graph, frames: Var) -> Result<Var> {
    frames_len(g, frames)?;
    g.mean(frames, 0)
}

fn frames_len(g: &Graph, frames: Var) -> Result<usize> {
    match g.shape(frames) {
        [0, _] => Err(Error::EmptySequence),
        [t, _] => Ok(*t),
        s => Err(Error::shape("pool", format!("expected T × D frames, got {s:?}"))),
    }
}

/// Builds a `T × D` tensor from frame rows, rejecting an empty sequence.
pub fn frames_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let first = rows.first().ok_or(Error::EmptySequence)?;
    let d = first.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::shape("frames", format!("ragged frame of width {} vs {d}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Tensor::matrix(rows.len(), d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, DEFAULT_FLOOR, DEFAULT_STEP};
    use crate::rng::seeded;

    fn pool_store(d: usize, a: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        init_attentive_pool(&mut s, "pool", d, a, &mut seeded(seed)).unwrap();
        s
    }

    fn run_pool(s: &ParamStore, frames: Tensor) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let f = g.constant(frames).unwrap();
        let out = attentive_stat_pool(&mut g, s, "pool", f).unwrap();
        (g.value(out.pooled).data().to_vec(), g.value(out.weights).data().to_vec())
    }

    #[test]
    fn single_frame_gives_frame_and_eps_std() {
        let s = pool_store(3, 4, 1);
        let (out, w) = run_pool(&s, Tensor::row(&[0.3, -1.2, 2.0]));
        assert_eq!(w, vec![1.0]);
        assert_eq!(&out[..3], &[0.3, -1.2, 2.0]);
        for v in &out[3..] {
            assert!((v - STAT_EPS.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_v_gives_plain_statistics() {
        let mut s = pool_store(2, 3, 2);
        s.set("pool.v", Tensor::zeros(&[3, 1]));
        let frames = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (out, w) = run_pool(&s, frames);
        assert_eq!(w, vec![0.5, 0.5]);
        let expect_std = (0.25f64 + STAT_EPS).sqrt();
        let expect = [0.5, 0.5, expect_std, expect_std];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn zero_v_matches_unweighted_stats_random() {
        let mut rng = seeded(3);
        let mut s = pool_store(4, 5, 3);
        s.set("pool.v", Tensor::zeros(&[5, 1]));
        let frames = uniform_tensor(&mut rng, &[7, 4], -2.0, 2.0);
        let (out, _) = run_pool(&s, frames.clone());
        for c in 0..4 {
            let col: Vec<f64> = (0..7).map(|r| frames.get2(r, c)).collect();
            let m = col.iter().sum::<f64>() / 7.0;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 7.0;
            assert!((out[c] - m).abs() < 1e-12);
            assert!((out[4 + c] - (var + STAT_EPS).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one_and_std_floor() {
        let mut rng = seeded(4);
        let s = pool_store(3, 4, 4);
        for t in 1..6 {
            let frames = uniform_tensor(&mut rng, &[t, 3], -3.0, 3.0);
            let (out, w) = run_pool(&s, frames);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out[3..].iter().all(|&v| v >= STAT_EPS.sqrt()));
        }
    }

    #[test]
    fn identical_frames_are_count_invariant() {
        let s = pool_store(2, 2, 5);
        for t in 1..5 {
            let frames = Tensor::matrix(t, 2, [0.7, -0.4].repeat(t)).unwrap();
            let (out, _) = run_pool(&s, frames.clone());
            assert!((out[0] - 0.7).abs() < 1e-12 && (out[1] + 0.4).abs() < 1e-12);
            assert!(out[2..].iter().all(|v| (v - STAT_EPS.sqrt()).abs() < 1e-9));
            let mut g = Graph::new();
            let f = g.constant(frames).unwrap();
            let m = mean_pool(&mut g, f).unwrap();
            assert!((g.value(m).data()[0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_pool_examples() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::matrix(2, 2, vec![2.0, 4.0, 4.0, 8.0]).unwrap()).unwrap();
        let m = mean_pool(&mut g, f).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 6.0]);
        let f2 = g.constant(Tensor::matrix(2, 2, vec![4.0, 8.0, 2.0, 4.0]).unwrap()).unwrap();
        let m2 = mean_pool(&mut g, f2).unwrap();
        assert_eq!(g.value(m2).data(), g.value(m).data());
        let one = g.constant(Tensor::row(&[1.5, 2.5])).unwrap();
        let m3 = mean_pool(&mut g, one).unwrap();
        assert_eq!(g.value(m3).data(), &[1.5, 2.5]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert!(matches!(frames_tensor(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn attentive_pool_gradcheck() {
        for seed in 0..5 {
            let mut s = pool_store(3, 4, seed);
            let mut rng = seeded(100 + seed);
            s.insert("frames", uniform_tensor(&mut rng, &[5, 3], -1.5, 1.5)).unwrap();
            let build = |g: &mut Graph, p: &ParamStore| -> Result<Var> {
                let f = g.param("frames", p)?;
                let out = attentive_stat_pool(g, p, "pool", f)?;
                let sq = g.square(out.pooled)?;
                let s1 = g.sum(sq)?;
                let s2 = g.sum(out.pooled)?;
                g.add(s1, s2)
            };
            let r = check_gradients(
                &s,
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
            .unwrap();
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
    }
}

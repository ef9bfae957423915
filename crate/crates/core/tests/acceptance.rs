//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use serlab::dataio::{
    decode_checkpoint, decode_embeddings, encode_checkpoint, encode_embeddings, gen_synthetic, in_split,
    parse_labels, read_dataset, read_predictions, render_labels, write_dataset, write_predictions, EmbeddingRecord,
    LabelRow, Split, SynthConfig, UtteranceRecord,
};
use serlab::llmproto::{
    build_attribute_prompt, build_categorical_prompt, parse_attribute_response, run_llm_eval, CallError,
    ChatBackend, LlmEndpointConfig, LlmRun,
};
use serlab::losses::{ccc, ccc_loss, cross_entropy, focal_loss, weighted_cross_entropy, ClassWeights, FocalConfig};
use serlab::metrics::{binned_ccc, classification_metrics, evaluate_rows, TableShape};
use serlab::model::pooling::init_attentive_pool;
use serlab::model::{
    attentive_stat_pool, Activation, CrossAttentionCfg, EncoderCfg, FusionHeadCfg, FusionKind, Modality, Task,
};
use serlab::numerics::gradcheck::{check_gradients, DEFAULT_FLOOR, DEFAULT_STEP};
use serlab::numerics::{mish_grad_scalar, mish_scalar, Graph, ParamStore, Tensor, Var};
use serlab::rng::{seeded, uniform_tensor, SeededRng};
use serlab::sampling::balanced_batches;
use serlab::taxonomy::{Emotion, NUM_CLASSES};
use serlab::trainer::{
    predict, score, tensor_sha256, train_stage1, train_stage2, Checkpoint, LossKind, ModelDims, TrainConfig,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: serlab::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- gradients

const GRAD_SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-6;

fn grad_err<F>(params: &ParamStore, build: F) -> Result<f64, String>
where
    F: Fn(&mut Graph, &ParamStore) -> serlab::Result<Var>,
{
    let r = lib(check_gradients(
        params,
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
    ))?;
    ensure(r.checked > 0, || "no parameters checked".into())?;
    Ok(r.max_rel_err)
}

fn store(rng: &mut SeededRng, entries: &[(&str, &[usize])], lo: f64, hi: f64) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, shape) in entries {
        s.insert(*name, uniform_tensor(rng, shape, lo, hi)).unwrap();
    }
    s
}

/// Fixed-weight sum so every output element reaches the loss differently.
fn project(g: &mut Graph, x: Var) -> serlab::Result<Var> {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
    let w = g.constant(Tensor::new(shape, w)?)?;
    let p = g.mul(x, w)?;
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> serlab::Result<Var>>;

/// One named case: a parameter store for the seed and a scalar loss over it.
struct GradCase {
    name: &'static str,
    setup: fn(&mut SeededRng) -> (ParamStore, Build),
}

fn unary(op: fn(&mut Graph, Var) -> serlab::Result<Var>, lo: f64, hi: f64) -> impl Fn(&mut SeededRng) -> (ParamStore, Build) {
    move |rng| {
        let s = store(rng, &[("x", &[3, 4])], lo, hi);
        let b: Build = Box::new(move |g, p| {
            let x = g.param("x", p)?;
            let y = op(g, x)?;
            project(g, y)
        });
        (s, b)
    }
}

macro_rules! unary_case {
    ($name:literal, $op:expr, $lo:expr, $hi:expr) => {
        GradCase {
            name: $name,
            setup: |rng| unary($op, $lo, $hi)(rng),
        }
    };
}

fn binary(rng: &mut SeededRng, lo: f64, hi: f64) -> ParamStore {
    let mut s = store(rng, &[("a", &[3, 4])], -1.0, 1.0);
    s.insert("b", uniform_tensor(rng, &[3, 4], lo, hi)).unwrap();
    s
}

fn labels(rng: &mut SeededRng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..NUM_CLASSES)).collect()
}

fn grad_cases() -> Vec<GradCase> {
    vec![
        unary_case!("tanh", |g, x| g.tanh(x), -2.0, 2.0),
        unary_case!("exp", |g, x| g.exp(x), -1.0, 1.0),
        unary_case!("log", |g, x| g.log(x), 0.5, 2.0),
        unary_case!("sigmoid", |g, x| g.sigmoid(x), -3.0, 3.0),
        unary_case!("softplus", |g, x| g.softplus(x), -3.0, 3.0),
        unary_case!("mish", |g, x| g.mish(x), -3.0, 3.0),
        unary_case!("relu", |g, x| g.relu(x), -2.0, 2.0),
        unary_case!("square", |g, x| g.square(x), -2.0, 2.0),
        unary_case!("sqrt", |g, x| g.sqrt(x), 0.5, 2.0),
        unary_case!("powf", |g, x| g.powf(x, 1.7), 0.5, 2.0),
        unary_case!("scale", |g, x| g.scale(x, -2.5), -1.0, 1.0),
        unary_case!("add_scalar", |g, x| g.add_scalar(x, 0.3), -1.0, 1.0),
        unary_case!("neg", |g, x| g.neg(x), -1.0, 1.0),
        unary_case!("softmax", |g, x| g.softmax(x, 1), -2.0, 2.0),
        unary_case!("softmax_axis0", |g, x| g.softmax(x, 0), -2.0, 2.0),
        unary_case!("log_softmax", |g, x| g.log_softmax(x, 1), -2.0, 2.0),
        unary_case!("mean_axis0", |g, x| g.mean(x, 0), -1.0, 1.0),
        unary_case!("mean_axis1", |g, x| g.mean(x, 1), -1.0, 1.0),
        unary_case!("mean_all", |g, x| g.mean_all(x), -1.0, 1.0),
        unary_case!("sum", |g, x| g.sum(x), -1.0, 1.0),
        unary_case!("transpose", |g, x| g.transpose(x), -1.0, 1.0),
        unary_case!("reshape", |g, x| g.reshape(x, &[2, 6]), -1.0, 1.0),
        unary_case!("slice_cols", |g, x| g.slice_cols(x, 1, 3), -1.0, 1.0),
        unary_case!("pick", |g, x| g.pick(x, &[3, 0, 2]), -1.0, 1.0),
        GradCase {
            name: "add",
            setup: |rng| (binary(rng, -1.0, 1.0), Box::new(|g, p| bin(g, p, Graph::add))),
        },
        GradCase {
            name: "sub",
            setup: |rng| (binary(rng, -1.0, 1.0), Box::new(|g, p| bin(g, p, Graph::sub))),
        },
        GradCase {
            name: "mul",
            setup: |rng| (binary(rng, -1.0, 1.0), Box::new(|g, p| bin(g, p, Graph::mul))),
        },
        GradCase {
            name: "div",
            setup: |rng| (binary(rng, 0.5, 2.0), Box::new(|g, p| bin(g, p, Graph::div))),
        },
        GradCase {
            name: "matmul",
            setup: |rng| {
                let s = store(rng, &[("a", &[3, 4]), ("b", &[4, 2])], -1.0, 1.0);
                (s, Box::new(|g, p| {
                    let (a, b) = (g.param("a", p)?, g.param("b", p)?);
                    let y = g.matmul(a, b)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "concat",
            setup: |rng| {
                let s = store(rng, &[("a", &[3, 2]), ("b", &[3, 4])], -1.0, 1.0);
                (s, Box::new(|g, p| {
                    let (a, b) = (g.param("a", p)?, g.param("b", p)?);
                    let y = g.concat(&[a, b], 1)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "concat_axis0",
            setup: |rng| {
                let s = store(rng, &[("a", &[2, 3]), ("b", &[1, 3])], -1.0, 1.0);
                (s, Box::new(|g, p| {
                    let (a, b) = (g.param("a", p)?, g.param("b", p)?);
                    let y = g.concat(&[a, b], 0)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "broadcast_rows",
            setup: |rng| {
                let s = store(rng, &[("r", &[1, 4])], -1.0, 1.0);
                (s, Box::new(|g, p| {
                    let r = g.param("r", p)?;
                    let y = g.broadcast_rows(r, 3)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "broadcast_scalar",
            setup: |rng| {
                let s = store(rng, &[("k", &[1])], -1.0, 1.0);
                (s, Box::new(|g, p| {
                    let k = g.param("k", p)?;
                    let y = g.broadcast_scalar(k, &[3, 2])?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "add_row",
            setup: |rng| {
                let s = store(rng, &[("x", &[3, 4]), ("b", &[4])], -1.0, 1.0);
                (s, Box::new(|g, p| {
                    let (x, b) = (g.param("x", p)?, g.param("b", p)?);
                    let y = g.add_row(x, b)?;
                    let y = g.tanh(y)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "attentive_stat_pool",
            setup: |rng| {
                let mut s = store(rng, &[("h", &[5, 3])], -1.0, 1.0);
                init_attentive_pool(&mut s, "pool", 3, 4, rng).unwrap();
                s.set("pool.b", uniform_tensor(rng, &[4], -0.5, 0.5));
                s.set("pool.k", uniform_tensor(rng, &[1], -0.5, 0.5));
                (s, Box::new(|g, p| {
                    let h = g.param("h", p)?;
                    let out = attentive_stat_pool(g, p, "pool", h)?;
                    project(g, out.pooled)
                }))
            },
        },
        GradCase {
            name: "speech_encoder",
            setup: |rng| {
                let cfg = EncoderCfg::speech(3, 4, 3, 2).unwrap();
                let s = cfg.init(rng).unwrap();
                let frames = uniform_tensor(rng, &[4, 3], -1.0, 1.0);
                (s, Box::new(move |g, p| {
                    let y = cfg.forward(g, p, &frames)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "text_encoder",
            setup: |rng| {
                let cfg = EncoderCfg::text(3, 4, 2).unwrap();
                let s = cfg.init(rng).unwrap();
                let frames = uniform_tensor(rng, &[3, 3], -1.0, 1.0);
                (s, Box::new(move |g, p| {
                    let y = cfg.forward(g, p, &frames)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "cross_attention",
            setup: |rng| {
                let cfg = CrossAttentionCfg {
                    speech_dim: 3,
                    text_dim: 2,
                    model_dim: 4,
                };
                let mut s = cfg.init(rng).unwrap();
                s.insert("speech", uniform_tensor(rng, &[5, 3], -1.0, 1.0)).unwrap();
                s.insert("text", uniform_tensor(rng, &[3, 2], -1.0, 1.0)).unwrap();
                (s, Box::new(move |g, p| {
                    let (sp, tx) = (g.param("speech", p)?, g.param("text", p)?);
                    let y = cfg.forward(g, p, sp, tx)?;
                    project(g, y)
                }))
            },
        },
        GradCase {
            name: "categorical_head_focal",
            setup: |rng| {
                let (s, x, cfg) = head_setup(rng, Task::Categorical, Activation::Mish);
                let y = labels(rng, 4);
                (s, Box::new(move |g, p| {
                    let xv = g.constant(x.clone())?;
                    let logits = cfg.forward(g, p, xv)?;
                    focal_loss(g, logits, &y, &FocalConfig::default())
                }))
            },
        },
        GradCase {
            name: "categorical_head_wce",
            setup: |rng| {
                let (s, x, cfg) = head_setup(rng, Task::Categorical, Activation::Relu);
                let y = labels(rng, 4);
                let w = ClassWeights::new((1..=8).map(|i| i as f64 / 3.0).collect()).unwrap();
                (s, Box::new(move |g, p| {
                    let xv = g.constant(x.clone())?;
                    let logits = cfg.forward(g, p, xv)?;
                    weighted_cross_entropy(g, logits, &y, &w)
                }))
            },
        },
        GradCase {
            name: "attribute_head_ccc",
            setup: |rng| {
                let (s, x, cfg) = head_setup(rng, Task::Attributes, Activation::Mish);
                let truth = uniform_tensor(rng, &[4, 3], 1.0, 7.0);
                (s, Box::new(move |g, p| {
                    let xv = g.constant(x.clone())?;
                    let pred = cfg.forward(g, p, xv)?;
                    ccc_loss(g, pred, &truth)
                }))
            },
        },
        GradCase {
            name: "focal_loss_alpha",
            setup: |rng| {
                let s = store(rng, &[("z", &[5, NUM_CLASSES])], -2.0, 2.0);
                let y = labels(rng, 5);
                let alpha: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.random_range(0.2..2.0)).collect();
                let gamma = rng.random_range(0.5..3.0);
                (s, Box::new(move |g, p| {
                    let z = g.param("z", p)?;
                    let cfg = FocalConfig {
                        gamma,
                        alpha: Some(alpha.clone()),
                    };
                    focal_loss(g, z, &y, &cfg)
                }))
            },
        },
        GradCase {
            name: "ccc_loss",
            setup: |rng| {
                let s = store(rng, &[("p", &[6, 3])], 1.0, 7.0);
                let truth = uniform_tensor(rng, &[6, 3], 1.0, 7.0);
                (s, Box::new(move |g, p| {
                    let x = g.param("p", p)?;
                    ccc_loss(g, x, &truth)
                }))
            },
        },
    ]
}

fn bin(g: &mut Graph, p: &ParamStore, op: fn(&mut Graph, Var, Var) -> serlab::Result<Var>) -> serlab::Result<Var> {
    let (a, b) = (g.param("a", p)?, g.param("b", p)?);
    let y = op(g, a, b)?;
    project(g, y)
}

fn head_setup(rng: &mut SeededRng, task: Task, activation: Activation) -> (ParamStore, Tensor, FusionHeadCfg) {
    let cfg = FusionHeadCfg {
        fusion: FusionKind::Concat,
        activation,
        task,
        input_dim: 5,
    };
    let s = cfg.init(rng).unwrap();
    (s, uniform_tensor(rng, &[4, 5], -1.0, 1.0), cfg)
}

fn c1_gradients() -> Check {
    let start = Instant::now();
    let cases = grad_cases();
    let mut worst = (0.0, "", 0);
    for case in &cases {
        for seed in 0..GRAD_SEEDS {
            let mut rng = seeded(seed);
            let (s, build) = (case.setup)(&mut rng);
            let err = grad_err(&s, build)?;
            if err > worst.0 {
                worst = (err, case.name, seed);
            }
            ensure(err < GRAD_TOL, || format!("{} seed {seed}: rel err {err:e}", case.name))?;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!(
        "{} cases × {GRAD_SEEDS} seeds, worst {:.1e} ({} seed {}), {:.1?}",
        cases.len(),
        worst.0,
        worst.1,
        worst.2,
        t
    ))
}

// ---------------------------------------------------------------- losses

fn eval_loss(logits: &Tensor, f: impl Fn(&mut Graph, Var) -> serlab::Result<Var>) -> Result<f64, String> {
    let mut g = Graph::new();
    let z = lib(g.constant(logits.clone()))?;
    let l = lib(f(&mut g, z))?;
    Ok(g.value(l).item())
}

fn c2_loss_identities() -> Check {
    let mut rng = seeded(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = rng.random_range(1..=16);
        let logits = uniform_tensor(&mut rng, &[b, NUM_CLASSES], -5.0, 5.0);
        let y = labels(&mut rng, b);
        let ce = eval_loss(&logits, |g, z| cross_entropy(g, z, &y))?;
        let focal = eval_loss(&logits, |g, z| focal_loss(g, z, &y, &FocalConfig { gamma: 0.0, alpha: None }))?;
        let focal_ones = eval_loss(&logits, |g, z| {
            focal_loss(g, z, &y, &FocalConfig {
                gamma: 0.0,
                alpha: Some(vec![1.0; NUM_CLASSES]),
            })
        })?;
        let wce = eval_loss(&logits, |g, z| weighted_cross_entropy(g, z, &y, &ClassWeights::uniform()))?;
        let k = rng.random_range(0.1..10.0);
        let wce_k = eval_loss(&logits, |g, z| {
            weighted_cross_entropy(g, z, &y, &ClassWeights::new(vec![k; NUM_CLASSES]).unwrap())
        })?;
        for v in [focal, focal_ones, wce, wce_k] {
            worst = worst.max((v - ce).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max |Δ| {worst:e}"))?;
    Ok(format!("1000 batches, max |Δ| {worst:.1e}"))
}

fn c3_ccc_oracle() -> Check {
    let mut rng = seeded(3);
    for _ in 0..100 {
        let n = rng.random_range(2..50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..7.0)).collect();
        let same = lib(ccc(&x, &x))?;
        ensure((same - 1.0).abs() < 1e-12, || format!("ccc(x,x) = {same}"))?;
        let c = rng.random_range(1.0..7.0);
        let flat = lib(ccc(&x, &vec![c; n]))?;
        ensure(flat.abs() < 1e-12, || format!("ccc(x,const) = {flat}"))?;
    }
    ensure(ccc(&[4.0; 5], &[4.0; 5]).is_err(), || "equal constants must be degenerate".into())?;
    let v = lib(ccc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]))?;
    ensure((v - 4.0 / 7.0).abs() <= 1e-12, || format!("ccc([1,2,3],[2,3,4]) = {v}"))?;
    for _ in 0..100 {
        let n = rng.random_range(2..200);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..=7.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-1.5..1.5)).collect();
        let bins = lib(binned_ccc(&pred, &truth, &[1.0, 7.0]))?;
        let global = lib(ccc(&pred, &truth))?;
        ensure(bins.len() == 1 && bins[0].value() == Some(global), || {
            format!("one bin {:?} vs global {global}", bins.first().and_then(|b| b.value()))
        })?;
    }
    Ok(format!("ccc([1,2,3],[2,3,4]) = {v:.15}"))
}

fn c4_closed_forms() -> Check {
    // 8 classes, target logit ln 63, others 0 → p_t = 63 / 70 = 0.9.
    let mut z = vec![0.0; NUM_CLASSES];
    z[0] = 63f64.ln();
    let logits = lib(Tensor::matrix(1, NUM_CLASSES, z))?;
    let f = eval_loss(&logits, |g, z| focal_loss(g, z, &[0], &FocalConfig { gamma: 2.0, alpha: None }))?;
    ensure((f - 0.0010536).abs() <= 1e-7, || format!("focal(p_t=0.9) = {f}"))?;
    let m = mish_scalar(1.0);
    ensure((m - 0.865098).abs() <= 1e-6, || format!("mish(1) = {m}"))?;
    let d = mish_grad_scalar(0.0);
    ensure((d - 0.6).abs() <= 1e-9, || format!("mish'(0) = {d}"))?;

    let mut s = ParamStore::new();
    s.insert("x", Tensor::scalar(0.0)).unwrap();
    let mut g = Graph::new();
    let x = lib(g.param("x", &s))?;
    let y = lib(g.mish(x))?;
    lib(g.backward(y, &mut s))?;
    let dg = s.grad("x").unwrap().item();
    ensure((dg - 0.6).abs() <= 1e-9, || format!("graph mish'(0) = {dg}"))?;
    Ok(format!("focal {f:.7}, mish(1) {m:.6}, mish'(0) {d}"))
}

fn c5_micro_equals_accuracy() -> Check {
    let mut rng = seeded(5);
    for i in 0..1000 {
        let n = rng.random_range(1..300);
        let k = rng.random_range(2..=NUM_CLASSES);
        let draw = |rng: &mut SeededRng| Emotion::ALL[rng.random_range(0..k)];
        let truth: Vec<Emotion> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<Emotion> = (0..n).map(|_| draw(&mut rng)).collect();
        let r = lib(classification_metrics(&pred, &truth))?;
        ensure(r.f1_micro == r.accuracy, || format!("labeling {i}: {} vs {}", r.f1_micro, r.accuracy))?;
    }
    Ok("1000 labelings".into())
}

fn c6_balanced_sampler() -> Check {
    let mut batches = 0;
    for seed in 0..100u64 {
        let mut rng = seeded(1_000 + seed);
        let mut y = Vec::new();
        for c in 0..NUM_CLASSES {
            y.extend(std::iter::repeat(c).take(rng.random_range(1..60)));
        }
        let plan = lib(balanced_batches(&y, 32, seed))?;
        ensure(plan.len() == y.len().div_ceil(32), || format!("plan {seed}: {} batches", plan.len()))?;
        for b in plan.iter() {
            let mut counts = [0usize; NUM_CLASSES];
            b.iter().for_each(|&i| counts[y[i]] += 1);
            ensure(counts == [4; NUM_CLASSES], || format!("plan {seed}: class counts {counts:?}"))?;
            batches += 1;
        }
    }
    Ok(format!("100 plans, {batches} batches of 4 per class"))
}

// ---------------------------------------------------------------- training

fn small_dims() -> ModelDims {
    ModelDims {
        hidden: 6,
        attn_dim: 4,
        embed_dim: 6,
        xattn_dim: 6,
    }
}

fn quick_stage1(m: Modality, task: Task, seed: u64, data: &[UtteranceRecord]) -> Result<Checkpoint, String> {
    let mut c = TrainConfig::stage1(m, task, seed);
    c.learning_rate = 1e-2;
    c.epochs = 2;
    c.dims = small_dims();
    Ok(lib(train_stage1(&c, data))?.checkpoint)
}

fn c7_freeze() -> Check {
    let mut tensors = 0;
    for seed in 0..5u64 {
        let data = lib(gen_synthetic(&SynthConfig {
            counts: [16; 8],
            speech_dim: 6,
            text_dim: 5,
            train_fraction: 0.75,
            dev_fraction: 0.25,
            seed,
            ..SynthConfig::default()
        }))?;
        let s = quick_stage1(Modality::Speech, Task::Categorical, seed, &data)?;
        let t = quick_stage1(Modality::Text, Task::Categorical, seed + 100, &data)?;
        let fusion = [FusionKind::Concat, FusionKind::CrossAttention][seed as usize % 2];
        let task = [Task::Attributes, Task::Categorical][(seed as usize / 2) % 2];
        let mut c = TrainConfig::stage2(fusion, task, seed);
        c.learning_rate = 1e-2;
        c.epochs = 2;
        c.dims = small_dims();
        let o = lib(train_stage2(&c, &s, &t, &data))?;
        for src in [&s, &t] {
            for (name, tensor) in src.params.iter().filter(|(n, _)| !n.starts_with("head.")) {
                let after = o.checkpoint.params.get(name).ok_or(format!("run {seed}: {name} missing"))?;
                ensure(tensor_sha256(tensor) == tensor_sha256(after), || format!("run {seed}: {name} changed"))?;
                tensors += 1;
            }
        }
        let (before, after) = o.frozen.ok_or("stage-2 run reported no frozen digests")?;
        ensure(before == after, || format!("run {seed}: recorded digests differ"))?;
    }
    Ok(format!("5 runs, {tensors} frozen tensors unchanged"))
}

fn c8_end_to_end() -> Check {
    let start = Instant::now();
    // Default noise is σ = 0.3 and separation 1.5 = 5σ; 300 per class split 250 / 50.
    let cfg = SynthConfig {
        counts: [300; NUM_CLASSES],
        train_fraction: 5.0 / 6.0,
        dev_fraction: 1.0 / 6.0,
        seed: 8,
        ..SynthConfig::default()
    };
    let data = lib(gen_synthetic(&cfg))?;
    let (train, dev) = (in_split(&data, Split::Train).len(), in_split(&data, Split::Dev).len());
    ensure(train == 2000 && dev == 400, || format!("split {train}/{dev}"))?;

    let mut c1 = TrainConfig::stage1(Modality::Speech, Task::Categorical, 8);
    c1.learning_rate = 1e-2;
    let speech = lib(train_stage1(&c1, &data))?;
    let best_f1 = speech.log.iter().filter_map(|e| e.dev.f1_micro).fold(0.0, f64::max);
    ensure(best_f1 >= 0.95, || format!("stage-1 dev F1-micro {best_f1}"))?;
    c1.modality = Modality::Text;
    let text = lib(train_stage1(&c1, &data))?;

    let mut c2 = TrainConfig::stage2(FusionKind::Concat, Task::Attributes, 8);
    c2.activation = Activation::Mish;
    c2.learning_rate = 1e-2;
    let fused = lib(train_stage2(&c2, &speech.checkpoint, &text.checkpoint, &data))?;
    let best_val = fused.log.iter().filter_map(|e| e.dev.valence).fold(f64::NEG_INFINITY, f64::max);
    ensure(best_val >= 0.9, || format!("stage-2 dev valence CCC {best_val}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(300), || format!("took {t:?}"))?;
    Ok(format!(
        "stage-1 F1-micro {best_f1:.3} in {} epochs, valence CCC {best_val:.3} in {} epochs, {t:.1?} (lr 1e-2)",
        c1.epochs, c2.epochs
    ))
}

fn minority_recall(pred: &[LabelRow], dev: &[&UtteranceRecord], majority: Emotion) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for (r, p) in dev.iter().zip(pred) {
        if r.emotion != Some(majority) {
            total += 1;
            hit += usize::from(r.emotion == p.emotion);
        }
    }
    hit as f64 / total as f64
}

fn c9_imbalance() -> Check {
    let majority = Emotion::ALL[5];
    let (mut recall_wins, mut micro_wins) = (0, 0);
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let mut counts = [50; NUM_CLASSES];
        counts[majority.index()] = 1000;
        let data = lib(gen_synthetic(&SynthConfig {
            counts,
            separation: 0.3,
            train_fraction: 0.6,
            dev_fraction: 0.4,
            seed,
            ..SynthConfig::default()
        }))?;
        let dev = in_split(&data, Split::Dev);
        let run = |loss: LossKind| -> Result<(f64, f64), String> {
            let mut c = TrainConfig::stage1(Modality::Speech, Task::Categorical, seed);
            c.loss = loss;
            c.learning_rate = 1e-2;
            c.epochs = 10;
            let o = lib(train_stage1(&c, &data))?;
            let pred = lib(predict(&o.checkpoint, &dev, false))?;
            let micro = lib(score(Task::Categorical, &pred, &dev))?.classification.unwrap().f1_micro;
            Ok((minority_recall(&pred, &dev, majority), micro))
        };
        let (ce_recall, _) = run(LossKind::Ce)?;
        let (_, wce_micro) = run(LossKind::Wce)?;
        let (focal_recall, focal_micro) = run(LossKind::Focal)?;
        recall_wins += usize::from(focal_recall >= ce_recall);
        micro_wins += usize::from(focal_micro >= wce_micro);
        detail.push(format!("{focal_recall:.2}/{ce_recall:.2}"));
    }
    ensure(recall_wins == 5 && micro_wins >= 3, || {
        format!("recall focal≥ce {recall_wins}/5, micro focal≥wce {micro_wins}/5 ({})", detail.join(" "))
    })?;
    Ok(format!(
        "minority recall focal≥ce {recall_wins}/5 [{}], F1-micro focal≥wce {micro_wins}/5",
        detail.join(" ")
    ))
}

/// gen-synth → stage 1 ×2 → stage 2 → predict → evaluate, all through files.
fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let data = lib(gen_synthetic(&SynthConfig {
        counts: [20; 8],
        speech_dim: 6,
        text_dim: 5,
        seed: 10,
        ..SynthConfig::default()
    }))?;
    let data_dir = dir.join("data");
    lib(write_dataset(&data_dir, &data))?;
    let data = lib(read_dataset(&data_dir))?;

    let stage1 = |m: Modality| -> Result<Checkpoint, String> {
        let ck = quick_stage1(m, Task::Attributes, 10, &data)?;
        let p = dir.join(format!("{}.fckp", m.name()));
        lib(ck.save(&p))?;
        lib(Checkpoint::load(&p))
    };
    let (s, t) = (stage1(Modality::Speech)?, stage1(Modality::Text)?);
    let mut c = TrainConfig::stage2(FusionKind::Concat, Task::Attributes, 10);
    c.learning_rate = 1e-2;
    c.epochs = 2;
    c.dims = small_dims();
    let fused = lib(train_stage2(&c, &s, &t, &data))?;
    lib(fused.checkpoint.save(&dir.join("fused.fckp")))?;
    let fused = lib(Checkpoint::load(&dir.join("fused.fckp")))?;

    let dev = in_split(&data, Split::Dev);
    lib(write_predictions(&dir.join("predictions.csv"), &lib(predict(&fused, &dev, true))?))?;
    let pred = lib(read_predictions(&dir.join("predictions.csv")))?;
    let truth: Vec<LabelRow> = dev.iter().map(|r| r.label_row()).collect();
    let report = lib(evaluate_rows(&pred, &truth, Some(Split::Dev)))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("report.json"), json).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("report.csv"), report.csv_row(TableShape::Table1)).map_err(|e| e.to_string())?;

    let mut out = BTreeMap::new();
    for name in ["speech.fckp", "text.fckp", "fused.fckp", "predictions.csv", "report.json", "report.csv"] {
        out.insert(name.to_string(), std::fs::read(dir.join(name)).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn c10_determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (pipeline(a.path())?, pipeline(b.path())?);
    for (name, bytes) in &ra {
        ensure(rb.get(name) == Some(bytes), || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files bit-identical", ra.len()))
}

// ---------------------------------------------------------------- formats

fn f32_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let t = uniform_tensor(rng, shape, -1e3, 1e3);
    t.map(|v| v as f32 as f64)
}

fn random_id(rng: &mut SeededRng) -> String {
    let n = rng.random_range(1..12);
    (0..n).map(|_| char::from(rng.random_range(b'!'..=b'~'))).collect::<String>() + "é"
}

fn c11_formats() -> Check {
    let mut rng = seeded(11);
    for i in 0..1000 {
        let dim = rng.random_range(1..8);
        let records: Vec<EmbeddingRecord> = (0..rng.random_range(0..5))
            .map(|j| {
                let t = rng.random_range(1..6);
                EmbeddingRecord::new(format!("{}-{j}", random_id(&mut rng)), f32_tensor(&mut rng, &[t, dim]))
            })
            .collect();
        let bytes = lib(encode_embeddings(dim, &records))?;
        let back = lib(decode_embeddings(&bytes))?;
        ensure(back.dim == dim && back.records == records, || format!("FEMB payload {i} changed"))?;
        ensure(lib(encode_embeddings(dim, &back.records))? == bytes, || format!("FEMB payload {i} re-encodes differently"))?;

        let mut params = ParamStore::new();
        for j in 0..rng.random_range(0..5) {
            let shape: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..5)).collect();
            let mut t = uniform_tensor(&mut rng, &shape, -1.0, 1.0);
            t.data_mut()[0] = f64::from_bits(rng.random::<u64>() & !(0x7ff << 52));
            params.insert(format!("{}.{j}", random_id(&mut rng)), t).unwrap();
        }
        let meta = random_id(&mut rng);
        let bytes = lib(encode_checkpoint(&params, &meta))?;
        let (meta2, params2): (String, ParamStore) = lib(decode_checkpoint(&bytes))?;
        ensure(meta2 == meta && params2 == params, || format!("FCKP payload {i} changed"))?;
        ensure(lib(encode_checkpoint(&params2, &meta2))? == bytes, || format!("FCKP payload {i} re-encodes differently"))?;
    }

    let header = "id,split,emotion,arousal,valence,dominance\n";
    let ok = format!("{header}u1,train,H,4,5,6\n");
    lib(parse_labels(&ok, "labels.csv"))?;
    let range = format!("{header}u1,train,H,4,5,6\nu2,dev,N,4,7.5,3\n");
    let e = parse_labels(&range, "labels.csv").err().ok_or("out-of-range valence accepted")?.to_string();
    ensure(e.contains(":3:") && e.contains("valence"), || format!("range error: {e}"))?;
    let code = format!("{header}u1,train,H,4,5,6\nu2,dev,N,4,5,3\nu3,test1,X,,,\n");
    let e = parse_labels(&code, "labels.csv").err().ok_or("unknown emotion code accepted")?.to_string();
    ensure(e.contains(":4:") && e.contains("`X`"), || format!("code error: {e}"))?;
    Ok("1000 FEMB + 1000 FCKP payloads bit-exact; CSV errors carry line numbers".into())
}

// ---------------------------------------------------------------- LLM protocol

/// Answers from a fixed table and counts every call.
struct MockEndpoint {
    calls: AtomicUsize,
}

impl ChatBackend for MockEndpoint {
    fn complete(&self, prompt: &str) -> Result<String, CallError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let n = prompt.len() % 5;
        Ok(format!("[{}.5, {}.0, 4.25]", 1 + n, 2 + n))
    }
}

fn prediction_set(run: &LlmRun) -> Result<String, String> {
    let rows: Vec<LabelRow> = run
        .outcomes
        .iter()
        .map(|o| LabelRow {
            id: o.id.clone(),
            split: Split::Test1,
            emotion: o.emotion,
            attributes: o.attributes,
        })
        .collect();
    lib(render_labels(&rows))
}

fn c12_llm_protocol() -> Check {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let read = |f: &str| std::fs::read_to_string(golden.join(f)).map_err(|e| format!("{f}: {e}"));
    let transcript = "I can't believe it!";
    ensure(lib(build_categorical_prompt(transcript))? == read("categorical_prompt.txt")?, || {
        "categorical prompt differs from golden".into()
    })?;
    ensure(lib(build_attribute_prompt(transcript))? == read("attribute_prompt.txt")?, || {
        "attribute prompt differs from golden".into()
    })?;
    let p = lib(parse_attribute_response("[1.0, 2.3, 4.7]"))?;
    ensure(p.value.to_array() == [1.0, 2.3, 4.7] && !p.clamped, || format!("parsed {:?}", p.value))?;

    let dir = tempfile::tempdir().unwrap();
    let cfg = LlmEndpointConfig {
        cache_path: Some(dir.path().join("cache.jsonl")),
        ..LlmEndpointConfig::default()
    };
    let items: Vec<(String, String)> = (0..25).map(|i| (format!("utt{i:02}"), "so ".repeat(i + 1))).collect();
    let endpoint = MockEndpoint { calls: AtomicUsize::new(0) };
    let first = lib(run_llm_eval(&endpoint, &cfg, Task::Attributes, &items))?;
    ensure(first.network_calls == 25, || format!("first run made {} calls", first.network_calls))?;
    let offline = MockEndpoint { calls: AtomicUsize::new(0) };
    let replay = lib(run_llm_eval(&offline, &cfg, Task::Attributes, &items))?;
    let calls = offline.calls.load(Ordering::SeqCst);
    ensure(calls == 0 && replay.network_calls == 0, || format!("replay made {calls} calls"))?;
    ensure(replay.cache_hits == 25, || format!("{} cache hits", replay.cache_hits))?;
    ensure(prediction_set(&first)? == prediction_set(&replay)?, || "replayed predictions differ".into())?;
    Ok("golden prompts match, cached replay identical with 0 network calls".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("gradient suite", c1_gradients),
        ("loss identities", c2_loss_identities),
        ("ccc oracle", c3_ccc_oracle),
        ("focal and mish closed forms", c4_closed_forms),
        ("f1-micro equals accuracy", c5_micro_equals_accuracy),
        ("balanced sampler", c6_balanced_sampler),
        ("freeze contract", c7_freeze),
        ("synthetic end-to-end", c8_end_to_end),
        ("imbalance direction", c9_imbalance),
        ("pipeline determinism", c10_determinism),
        ("format round trips", c11_formats),
        ("llm protocol", c12_llm_protocol),
    ];
    // The gradient suite is timed, so it runs alone; the rest run side by side.
    let guarded = |f: fn() -> Check| std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
    let mut results = vec![guarded(criteria[0].1)];
    results.extend(std::thread::scope(|s| {
        let handles: Vec<_> = criteria[1..].iter().map(|&(_, f)| s.spawn(move || guarded(f))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
    }));
    let mut failed = 0;
    for (i, ((name, _), r)) in criteria.iter().zip(&results).enumerate() {
        match r {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

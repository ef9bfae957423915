//! Experiment grids. Runs share only the read-only dataset, so they can run
//! on separate threads without affecting each other's bytes.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serlab::dataio::{in_split, UtteranceRecord};
use serlab::metrics::{evaluate_rows, MetricsReport, TableShape};
use serlab::model::{Activation, FusionKind, Modality, Task};
use serlab::trainer::{predict, train_stage1, train_stage2, Checkpoint, LossKind, SamplerKind, TrainConfig};

use crate::args::{Grid, SweepArgs};
use crate::cmd::{dataset_files, load_dataset, table_csv, MODEL_FILE};
use crate::manifest::{ManifestBuilder, MANIFEST_FILE};
use crate::CliError;

type Job<'a, T> = Box<dyn FnOnce() -> serlab::Result<T> + Send + 'a>;

/// Runs `jobs` on up to `n` threads; results keep the job order.
fn run_pool<T: Send>(jobs: Vec<Job<'_, T>>, n: usize) -> serlab::Result<Vec<T>> {
    let slots: Vec<Mutex<Option<Job<'_, T>>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<serlab::Result<T>>>> = slots.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..n.max(1).min(slots.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(slot) = slots.get(i) else { break };
                let job = slot.lock().unwrap().take().expect("each job runs once");
                *results[i].lock().unwrap() = Some(job());
            });
        }
    });
    results.into_iter().map(|r| r.into_inner().unwrap().expect("every job ran")).collect()
}

#[derive(Serialize)]
struct SweepRow {
    setting: String,
    report: MetricsReport,
}

fn stage1_cfg(a: &SweepArgs, m: Modality, task: Task) -> TrainConfig {
    let mut c = TrainConfig::stage1(m, task, a.seed.expect("clap requires --seed"));
    c.batch_size = a.batch_size;
    c.learning_rate = a.stage1_lr;
    c.epochs = a.stage1_epochs;
    c.focal_gamma = a.focal_gamma;
    c
}

fn stage2_cfg(a: &SweepArgs, fusion: FusionKind, act: Activation, task: Task) -> TrainConfig {
    let mut c = TrainConfig::stage2(fusion, task, a.seed.expect("clap requires --seed"));
    c.batch_size = a.batch_size;
    c.learning_rate = a.stage2_lr;
    c.epochs = a.stage2_epochs;
    c.activation = act;
    c
}

fn score_on(ckpt: &Checkpoint, records: &[UtteranceRecord], a: &SweepArgs) -> serlab::Result<MetricsReport> {
    let eval = in_split(records, a.split);
    let truth: Vec<_> = eval.iter().map(|r| r.label_row()).collect();
    evaluate_rows(&predict(ckpt, &eval, true)?, &truth, Some(a.split))
}

fn merge(cat: &MetricsReport, attr: &MetricsReport) -> MetricsReport {
    let mut r = MetricsReport::new(cat.classification.clone(), attr.attributes.clone());
    r.notes.extend(cat.notes.iter().chain(&attr.notes).filter(|n| !r.notes.contains(n)).cloned().collect::<Vec<_>>());
    r
}

fn save(ckpt: &Checkpoint, out: &Path, name: &str, m: &mut ManifestBuilder) -> Result<(), CliError> {
    let p = out.join("runs").join(name).join(MODEL_FILE);
    ckpt.save(&p)?;
    m.artifact(p);
    Ok(())
}

fn table1(a: &SweepArgs, records: &[UtteranceRecord], m: &mut ManifestBuilder) -> Result<Vec<SweepRow>, CliError> {
    let tasks = [Task::Categorical, Task::Attributes];
    let mut jobs: Vec<Job<'_, Checkpoint>> = Vec::new();
    for task in tasks {
        for modality in [Modality::Speech, Modality::Text] {
            let cfg = stage1_cfg(a, modality, task);
            jobs.push(Box::new(move || Ok(train_stage1(&cfg, records)?.checkpoint)));
        }
    }
    let stage1 = run_pool(jobs, a.parallel)?;
    for (i, task) in tasks.iter().enumerate() {
        save(&stage1[2 * i], &a.out, &format!("stage1-speech-{task}"), m)?;
        save(&stage1[2 * i + 1], &a.out, &format!("stage1-text-{task}"), m)?;
    }

    let fusions = [
        ("Cross Attention", "cross-attn", FusionKind::CrossAttention, Activation::Relu),
        ("Concat", "concat-relu", FusionKind::Concat, Activation::Relu),
        ("Concat (Mish)", "concat-mish", FusionKind::Concat, Activation::Mish),
    ];
    let mut jobs: Vec<Job<'_, Checkpoint>> = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        for &(_, _, fusion, act) in &fusions {
            let cfg = stage2_cfg(a, fusion, act, *task);
            let (s, t) = (&stage1[2 * i], &stage1[2 * i + 1]);
            jobs.push(Box::new(move || Ok(train_stage2(&cfg, s, t, records)?.checkpoint)));
        }
    }
    let stage2 = run_pool(jobs, a.parallel)?;

    let mut rows = vec![SweepRow {
        setting: "Baseline (speech only)".into(),
        report: merge(&score_on(&stage1[0], records, a)?, &score_on(&stage1[2], records, a)?),
    }];
    for (j, (name, slug, ..)) in fusions.iter().enumerate() {
        let (cat, attr) = (&stage2[j], &stage2[fusions.len() + j]);
        save(cat, &a.out, &format!("stage2-{slug}-categorical"), m)?;
        save(attr, &a.out, &format!("stage2-{slug}-attributes"), m)?;
        rows.push(SweepRow {
            setting: name.to_string(),
            report: merge(&score_on(cat, records, a)?, &score_on(attr, records, a)?),
        });
    }
    Ok(rows)
}

fn table2(a: &SweepArgs, records: &[UtteranceRecord], m: &mut ManifestBuilder) -> Result<Vec<SweepRow>, CliError> {
    let schemas = [
        ("WCE", "wce", LossKind::Wce, SamplerKind::Shuffled),
        ("Balanced Sample", "balanced", LossKind::Ce, SamplerKind::Balanced),
        ("Focal Loss", "focal", LossKind::Focal, SamplerKind::Shuffled),
    ];
    let jobs: Vec<Job<'_, Checkpoint>> = schemas
        .iter()
        .map(|&(_, _, loss, sampler)| {
            let mut cfg = stage1_cfg(a, Modality::Speech, Task::Categorical);
            cfg.loss = loss;
            cfg.sampler = sampler;
            Box::new(move || Ok(train_stage1(&cfg, records)?.checkpoint)) as Job<'_, Checkpoint>
        })
        .collect();
    let models = run_pool(jobs, a.parallel)?;
    let mut rows = Vec::new();
    for ((name, slug, ..), ckpt) in schemas.iter().zip(&models) {
        save(ckpt, &a.out, &format!("stage1-speech-{slug}"), m)?;
        rows.push(SweepRow {
            setting: name.to_string(),
            report: score_on(ckpt, records, a)?,
        });
    }
    Ok(rows)
}

pub fn sweep_cmd(a: &SweepArgs, argv: &[String]) -> Result<(), CliError> {
    if a.parallel == 0 {
        return Err(CliError::Validation("--parallel: must be ≥ 1".into()));
    }
    let records = load_dataset("data", &a.data)?;
    let mut m = ManifestBuilder::new(argv, "sweep", a, a.seed);
    dataset_files(&a.data).into_iter().for_each(|p| m.input(p));
    let (rows, shape, stem) = match a.grid {
        Grid::Table1 => (table1(a, &records, &mut m)?, TableShape::Table1, "table1"),
        Grid::Table2 => (table2(a, &records, &mut m)?, TableShape::Table2, "table2"),
    };
    let pairs: Vec<(String, MetricsReport)> = rows.iter().map(|r| (r.setting.clone(), r.report.clone())).collect();
    let csv = table_csv(shape, &pairs);
    print!("{csv}");
    let csv_path = a.out.join(format!("{stem}.csv"));
    serlab::dataio::write_file_bytes(&csv_path, csv.as_bytes())?;
    let json_path = a.out.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n";
    serlab::dataio::write_file_bytes(&json_path, json.as_bytes())?;
    m.artifact(csv_path);
    m.artifact(json_path);
    m.finish(&a.out.join(MANIFEST_FILE))?;
    Ok(())
}

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serlab::dataio::{
    gen_synthetic, in_split, read_dataset, read_labels, read_predictions, write_dataset, write_file_bytes,
    write_predictions, LabelRow, Split, SynthConfig, UtteranceRecord, LABELS_FILE, SPEECH_FILE, TEXT_FILE,
};
use serlab::llmproto::{build_prompt, run_llm_eval, FailureKind, HttpChatBackend, LlmEndpointConfig, LlmRun};
use serlab::metrics::{binned_ccc, compare_models, evaluate_rows, prediction_stats, BinValue, MetricsReport, TableShape};
use serlab::taxonomy::{Attribute, Emotion};
use serlab::trainer::{predict, train_stage1, train_stage2, Checkpoint, LossKind, ModelDims, TrainConfig, TrainOutcome};

use crate::args::*;
use crate::manifest::{changed_artifacts, changed_inputs, read_manifest, ManifestBuilder, MANIFEST_FILE};
use crate::CliError;

pub const MODEL_FILE: &str = "model.fckp";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const DEV_REPORT_JSON: &str = "dev_report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const LLM_PREDICTIONS: &str = "predictions.csv";
pub const LLM_RUN_JSON: &str = "llm_run.json";

/// Fails with a message naming `flag` when `path` does not exist.
pub fn require_path(flag: &str, path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("--{flag}: {} does not exist", path.display())));
    }
    Ok(())
}

pub fn dataset_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join(SPEECH_FILE), dir.join(TEXT_FILE), dir.join(LABELS_FILE)]
}

pub fn load_dataset(flag: &str, dir: &Path) -> Result<Vec<UtteranceRecord>, CliError> {
    for f in dataset_files(dir) {
        require_path(flag, &f)?;
    }
    Ok(read_dataset(dir)?)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("serializable") + "\n";
    Ok(write_file_bytes(path, text.as_bytes())?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_file_bytes(path, text.as_bytes())?)
}

/// `name,<columns>` header plus one row.
pub fn table_csv(shape: TableShape, rows: &[(String, MetricsReport)]) -> String {
    let mut s = format!("setting,{}\n", shape.header());
    for (name, r) in rows {
        s.push_str(&format!("{},{}\n", csv_cell(name), r.csv_row(shape)));
    }
    s
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn gen_synth(a: &GenSynthArgs, argv: &[String]) -> Result<(), CliError> {
    let counts: [usize; 8] = a
        .counts
        .clone()
        .try_into()
        .map_err(|_| CliError::Validation("--counts: expected 8 comma-separated values".into()))?;
    let cfg = SynthConfig {
        counts,
        speech_dim: a.speech_dim,
        text_dim: a.text_dim,
        speech_frames: (a.min_frames, a.max_frames),
        text_tokens: (a.min_tokens, a.max_tokens),
        separation: a.separation,
        noise: a.noise,
        train_fraction: a.train_fraction,
        dev_fraction: a.dev_fraction,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let records = gen_synthetic(&cfg)?;
    let mut m = ManifestBuilder::new(argv, "gen-synth", a, Some(a.seed));
    for p in write_dataset(&a.out, &records)? {
        m.artifact(p);
    }
    let cfg_path = a.out.join("synth_config.json");
    write_json(&cfg_path, &cfg)?;
    m.artifact(cfg_path);
    m.finish(&a.out.join(MANIFEST_FILE))?;
    eprintln!("wrote {} utterances to {}", records.len(), a.out.display());
    Ok(())
}

fn apply_common(cfg: &mut TrainConfig, c: &TrainCommon) {
    cfg.loss = c.loss.unwrap_or(LossKind::default_for(c.task));
    cfg.focal_gamma = c.focal_gamma;
    cfg.sampler = c.sampler;
    cfg.batch_size = c.batch_size;
    cfg.activation = c.activation;
}

fn save_outcome(o: &TrainOutcome, out: &Path, m: &mut ManifestBuilder) -> Result<(), CliError> {
    let model = out.join(MODEL_FILE);
    o.checkpoint.save(&model)?;
    let log = out.join(TRAIN_LOG_FILE);
    write_text(&log, &o.log_jsonl()?)?;
    let report = out.join(DEV_REPORT_JSON);
    write_json(&report, &o.checkpoint.meta.dev_metrics)?;
    for p in [model, log, report] {
        m.artifact(p);
    }
    Ok(())
}

fn print_dev(o: &TrainOutcome) {
    if let Some(r) = &o.checkpoint.meta.dev_metrics {
        eprintln!("best epoch {}; dev {}", o.checkpoint.meta.best_epoch, r.csv_row(TableShape::Table1));
    }
}

pub fn train_stage1_cmd(a: &Stage1Args, argv: &[String]) -> Result<(), CliError> {
    let seed = a.common.seed.expect("clap requires --seed");
    let records = load_dataset("data", &a.common.data)?;
    let mut cfg = TrainConfig::stage1(a.modality, a.common.task, seed);
    apply_common(&mut cfg, &a.common);
    cfg.learning_rate = a.learning_rate;
    cfg.epochs = a.epochs;
    cfg.dims = ModelDims {
        hidden: a.hidden,
        attn_dim: a.attn_dim,
        embed_dim: a.embed_dim,
        ..ModelDims::default()
    };
    let o = train_stage1(&cfg, &records)?;
    let mut m = ManifestBuilder::new(argv, "train-stage1", a, Some(seed));
    dataset_files(&a.common.data).into_iter().for_each(|p| m.input(p));
    save_outcome(&o, &a.common.out, &mut m)?;
    m.finish(&a.common.out.join(MANIFEST_FILE))?;
    print_dev(&o);
    Ok(())
}

pub fn train_stage2_cmd(a: &Stage2Args, argv: &[String]) -> Result<(), CliError> {
    let seed = a.common.seed.expect("clap requires --seed");
    require_path("speech", &a.speech)?;
    require_path("text", &a.text)?;
    let records = load_dataset("data", &a.common.data)?;
    let speech = Checkpoint::load(&a.speech)?;
    let text = Checkpoint::load(&a.text)?;
    let mut cfg = TrainConfig::stage2(a.fusion, a.common.task, seed);
    apply_common(&mut cfg, &a.common);
    cfg.learning_rate = a.learning_rate;
    cfg.epochs = a.epochs;
    cfg.dims.xattn_dim = a.xattn_dim;
    let o = train_stage2(&cfg, &speech, &text, &records)?;
    let mut m = ManifestBuilder::new(argv, "train-stage2", a, Some(seed));
    dataset_files(&a.common.data).into_iter().for_each(|p| m.input(p));
    m.input(&a.speech);
    m.input(&a.text);
    save_outcome(&o, &a.common.out, &mut m)?;
    m.finish(&a.common.out.join(MANIFEST_FILE))?;
    print_dev(&o);
    Ok(())
}

/// `preds.csv` → `preds.manifest.json`.
pub fn sidecar_manifest(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn predict_cmd(a: &PredictArgs, argv: &[String]) -> Result<(), CliError> {
    require_path("model", &a.model)?;
    let records = load_dataset("data", &a.data)?;
    let ckpt = Checkpoint::load(&a.model)?;
    let rows = predict(&ckpt, &in_split(&records, a.split), !a.no_clamp)?;
    write_predictions(&a.out, &rows)?;
    let mut m = ManifestBuilder::new(argv, "predict", a, Some(ckpt.meta.seed));
    dataset_files(&a.data).into_iter().for_each(|p| m.input(p));
    m.input(&a.model);
    m.artifact(&a.out);
    m.finish(&sidecar_manifest(&a.out))?;
    eprintln!("wrote {} predictions to {}", rows.len(), a.out.display());
    Ok(())
}

/// The explicit split, else the one split every prediction row shares.
fn eval_split(explicit: Option<Split>, pred: &[LabelRow]) -> Option<Split> {
    explicit.or_else(|| {
        let first = pred.first()?.split;
        pred.iter().all(|r| r.split == first).then_some(first)
    })
}

fn write_report(
    out: &Option<PathBuf>,
    csv: &str,
    report: &MetricsReport,
    mut m: ManifestBuilder,
) -> Result<(), CliError> {
    if let Some(dir) = out {
        let (c, j) = (dir.join(REPORT_CSV), dir.join(REPORT_JSON));
        write_text(&c, csv)?;
        write_json(&j, report)?;
        m.artifact(c);
        m.artifact(j);
        m.finish(&dir.join(MANIFEST_FILE))?;
    }
    Ok(())
}

pub fn evaluate_cmd(a: &EvaluateArgs, argv: &[String]) -> Result<(), CliError> {
    require_path("pred", &a.pred)?;
    require_path("labels", &a.labels)?;
    let pred = read_predictions(&a.pred)?;
    let truth = read_labels(&a.labels)?;
    let report = evaluate_rows(&pred, &truth, eval_split(a.split, &pred))?;
    let csv = table_csv(a.shape, &[(a.name.clone(), report.clone())]);
    print!("{csv}");
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    let mut m = ManifestBuilder::new(argv, "evaluate", a, None);
    m.input(&a.pred);
    m.input(&a.labels);
    write_report(&a.out, &csv, &report, m)
}

/// `(pred, truth, emotion)` for one attribute over ids present in both files.
fn joined(
    pred: &[LabelRow],
    truth: &[LabelRow],
    attr: Attribute,
    split: Option<Split>,
) -> (Vec<f64>, Vec<f64>, Vec<Option<Emotion>>) {
    let by_id: HashMap<&str, &LabelRow> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for t in truth.iter().filter(|t| split.is_none_or(|s| t.split == s)) {
        if let (Some(p), Some(ta)) = (by_id.get(t.id.as_str()).and_then(|p| p.attributes), t.attributes) {
            out.0.push(p.get(attr));
            out.1.push(ta.get(attr));
            out.2.push(t.emotion);
        }
    }
    out
}

pub fn bins_cmd(a: &BinsArgs, argv: &[String]) -> Result<(), CliError> {
    require_path("pred", &a.pred)?;
    require_path("labels", &a.labels)?;
    let (p, t, _) = joined(&read_predictions(&a.pred)?, &read_labels(&a.labels)?, a.attribute.attribute(), a.split);
    let bins = binned_ccc(&p, &t, &a.edges)?;
    println!("range,n,ccc");
    for b in &bins {
        let v = match b.result {
            BinValue::Ccc { value } => format!("{value:.3}"),
            BinValue::Insufficient => "insufficient".into(),
            BinValue::Degenerate => "degenerate".into(),
        };
        println!("\"{}\",{},{v}", b.label(), b.n);
    }
    if let Some(out) = &a.out {
        write_json(out, &bins)?;
        let mut m = ManifestBuilder::new(argv, "analyze bins", a, None);
        m.input(&a.pred);
        m.input(&a.labels);
        m.artifact(out);
        m.finish(&sidecar_manifest(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsRow {
    attribute: &'static str,
    source: &'static str,
    n: usize,
    mean: f64,
    std: f64,
}

pub fn stats_cmd(a: &StatsArgs, argv: &[String]) -> Result<(), CliError> {
    require_path("pred", &a.pred)?;
    let pred = read_predictions(&a.pred)?;
    let mut rows = Vec::new();
    let mut m = ManifestBuilder::new(argv, "analyze stats", a, None);
    m.input(&a.pred);
    for attr in Attribute::ALL {
        let mut sources: Vec<(&'static str, Vec<f64>)> = Vec::new();
        if let Some(lp) = &a.labels {
            require_path("labels", lp)?;
            let (p, t, _) = joined(&pred, &read_labels(lp)?, attr, a.split);
            sources.push(("prediction", p));
            sources.push(("truth", t));
        } else {
            let p = pred
                .iter()
                .filter(|r| a.split.is_none_or(|s| r.split == s))
                .filter_map(|r| r.attributes.map(|v| v.get(attr)))
                .collect();
            sources.push(("prediction", p));
        }
        for (source, v) in sources {
            let s = prediction_stats(&v)?;
            println!("{},{source},{s}", attr.name());
            rows.push(StatsRow {
                attribute: attr.name(),
                source,
                n: v.len(),
                mean: s.mean,
                std: s.std,
            });
        }
    }
    if let Some(lp) = &a.labels {
        m.input(lp);
    }
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
        m.artifact(out);
        m.finish(&sidecar_manifest(out))?;
    }
    Ok(())
}

pub fn compare_cmd(a: &CompareArgs, argv: &[String]) -> Result<(), CliError> {
    for (f, p) in [("pred-a", &a.pred_a), ("pred-b", &a.pred_b), ("labels", &a.labels)] {
        require_path(f, p)?;
    }
    let truth = read_labels(&a.labels)?;
    let attr = a.attribute.attribute();
    let index = |p: &Path| -> Result<HashMap<String, LabelRow>, CliError> {
        Ok(read_predictions(p)?.into_iter().map(|r| (r.id.clone(), r)).collect())
    };
    let (pa, pb) = (index(&a.pred_a)?, index(&a.pred_b)?);
    let (mut xa, mut xb, mut t, mut emo) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in truth.iter().filter(|r| a.split.is_none_or(|s| r.split == s)) {
        let (Some(ta), Some(e)) = (r.attributes, r.emotion) else { continue };
        let get = |m: &HashMap<String, LabelRow>| m.get(&r.id).and_then(|p| p.attributes);
        let (Some(va), Some(vb)) = (get(&pa), get(&pb)) else { continue };
        xa.push(va.get(attr));
        xb.push(vb.get(attr));
        t.push(ta.get(attr));
        emo.push(e);
    }
    let c = compare_models(&xa, &xb, &t, &emo)?;
    print!("{}", c.render());
    if let Some(out) = &a.out {
        write_json(out, &c)?;
        let mut m = ManifestBuilder::new(argv, "analyze compare", a, None);
        m.input(&a.pred_a);
        m.input(&a.pred_b);
        m.input(&a.labels);
        m.artifact(out);
        m.finish(&sidecar_manifest(out))?;
    }
    Ok(())
}

pub fn prompt_cmd(a: &PromptArgs) -> Result<(), CliError> {
    print!("{}", build_prompt(a.task, &a.transcript)?);
    Ok(())
}

pub fn read_transcripts(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let bad = |line: u64, why: String| CliError::Validation(format!("--transcripts: {}:{line}: {why}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| bad(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "transcript"] {
        return Err(bad(1, format!("header must be `id,transcript`, got `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(bad(line, format!("expected 2 fields, got {}", rec.len())));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn failure_label(f: &FailureKind) -> &'static str {
    match f {
        FailureKind::Parse { .. } => "parse",
        FailureKind::Http { .. } => "http",
        FailureKind::Transport { .. } => "transport",
        FailureKind::Protocol { .. } => "protocol",
        FailureKind::Prompt { .. } => "prompt",
    }
}

pub fn llm_run_cmd(a: &LlmRunArgs, argv: &[String]) -> Result<(), CliError> {
    require_path("transcripts", &a.transcripts)?;
    let items = read_transcripts(&a.transcripts)?;
    let cfg = LlmEndpointConfig {
        base_url: a.base_url.clone(),
        model: a.model.clone(),
        timeout_secs: a.timeout,
        max_retries: a.max_retries,
        retry_backoff_ms: a.retry_backoff_ms,
        cache_path: a.cache.clone(),
        parallelism: a.parallelism,
    };
    let backend = HttpChatBackend::new(&cfg)?;
    let run = run_llm_eval(&backend, &cfg, a.task, &items)?;
    let rows: Vec<LabelRow> = run
        .parsed()
        .map(|o| LabelRow {
            id: o.id.clone(),
            split: a.split,
            emotion: o.emotion,
            attributes: o.attributes,
        })
        .collect();
    let preds = a.out.join(LLM_PREDICTIONS);
    write_predictions(&preds, &rows)?;
    let run_json = a.out.join(LLM_RUN_JSON);
    write_json(&run_json, &run)?;
    let mut m = ManifestBuilder::new(argv, "llm run", a, None);
    m.input(&a.transcripts);
    m.artifact(&preds);
    m.finish(&a.out.join(MANIFEST_FILE))?;
    let mut kinds: Vec<(&str, usize)> = Vec::new();
    for f in run.failures().filter_map(|o| o.failure.as_ref()) {
        match kinds.iter_mut().find(|(k, _)| *k == failure_label(f)) {
            Some((_, n)) => *n += 1,
            None => kinds.push((failure_label(f), 1)),
        }
    }
    eprintln!(
        "{} parsed, {} failed {:?}, {} clamped; {} network calls, {} cache hits",
        rows.len(),
        run.failures().count(),
        kinds,
        run.clamp_count(),
        run.network_calls,
        run.cache_hits
    );
    Ok(())
}

pub fn llm_score_cmd(a: &LlmScoreArgs, argv: &[String]) -> Result<(), CliError> {
    let preds_path = a.run.join(LLM_PREDICTIONS);
    let run_path = a.run.join(LLM_RUN_JSON);
    require_path("run", &preds_path)?;
    require_path("run", &run_path)?;
    require_path("labels", &a.labels)?;
    let run: LlmRun = serde_json::from_slice(&std::fs::read(&run_path).map_err(|e| CliError::Runtime(e.to_string()))?)
        .map_err(|e| CliError::Validation(format!("--run: {}: {e}", run_path.display())))?;
    let pred = read_predictions(&preds_path)?;
    let mut report = evaluate_rows(&pred, &read_labels(&a.labels)?, eval_split(a.split, &pred))?;
    let failed = run.failures().count();
    if failed > 0 {
        report.notes.push(format!("{failed} of {} replies failed and are excluded", run.outcomes.len()));
    }
    if run.clamp_count() > 0 {
        report.notes.push(format!("{} attribute replies were clamped to [1,7]", run.clamp_count()));
    }
    let csv = table_csv(a.shape, &[(format!("llm:{}", a.run.display()), report.clone())]);
    print!("{csv}");
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    let mut m = ManifestBuilder::new(argv, "llm score", a, None);
    m.input(&preds_path);
    m.input(&run_path);
    m.input(&a.labels);
    write_report(&a.out, &csv, &report, m)
}

pub fn replay_cmd(a: &ReplayArgs) -> Result<(), CliError> {
    require_path("manifest", &a.manifest)?;
    let m = read_manifest(&a.manifest)?;
    let stale = changed_inputs(&m);
    if !stale.is_empty() {
        return Err(CliError::Validation(format!("--manifest: inputs changed since the run: {}", stale.join(", "))));
    }
    let mut argv = vec!["serlab".to_string()];
    argv.extend(m.argv.iter().cloned());
    crate::run(argv.into_iter().map(Into::into).collect())?;
    let changed = changed_artifacts(&m)?;
    if !changed.is_empty() {
        return Err(CliError::Runtime(format!("replay produced different bytes for: {}", changed.join(", "))));
    }
    eprintln!("replay reproduced {} artifacts; output hash {}", m.artifacts.len(), m.output_hash);
    Ok(())
}

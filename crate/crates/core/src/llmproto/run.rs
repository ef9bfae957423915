use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::{CallError, ChatBackend};
use super::{build_prompt, parse_attribute_response, parse_categorical_response};
use crate::error::{Error, Result};
use crate::model::Task;
use crate::taxonomy::{AttributeVector, Emotion};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first for transport errors and 5xx replies.
    pub max_retries: u32,
    /// Pause before retry `k` is `k · retry_backoff_ms`.
    pub retry_backoff_ms: u64,
    pub cache_path: Option<PathBuf>,
    pub parallelism: usize,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "llama-3.2-3b-instruct".into(),
            timeout_secs: 60.0,
            max_retries: 2,
            retry_backoff_ms: 500,
            cache_path: None,
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!("timeout must be > 0 seconds, got {}", self.timeout_secs)));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be ≥ 1".into()));
        }
        if self.base_url.is_empty() || self.model.is_empty() {
            return Err(Error::Config("base_url and model must be set".into()));
        }
        Ok(())
    }
}

/// One cache line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub prompt_sha256: String,
    pub raw: String,
    /// Unix seconds at write time.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FailureKind {
    /// The reply arrived but did not parse; `raw` is kept for disclosure.
    Parse { raw: String },
    Http { status: u16, body: String },
    Transport { message: String },
    Protocol { message: String },
    Prompt { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOutcome {
    pub id: String,
    pub prompt_sha256: String,
    pub emotion: Option<Emotion>,
    pub attributes: Option<AttributeVector>,
    pub clamped: bool,
    pub from_cache: bool,
    pub failure: Option<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRun {
    pub task: Task,
    /// Same order as the input.
    pub outcomes: Vec<LlmOutcome>,
    pub network_calls: usize,
    pub cache_hits: usize,
}

impl LlmRun {
    pub fn failures(&self) -> impl Iterator<Item = &LlmOutcome> {
        self.outcomes.iter().filter(|o| o.failure.is_some())
    }

    pub fn parsed(&self) -> impl Iterator<Item = &LlmOutcome> {
        self.outcomes.iter().filter(|o| o.failure.is_none())
    }

    pub fn clamp_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.clamped).count()
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Reads a JSONL cache into `(id, prompt_sha256) → raw`. A missing file is an
/// empty cache; the first entry for a key wins.
pub fn load_cache(path: &Path) -> Result<HashMap<(String, String), String>> {
    let mut map = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(map),
        Err(e) => return Err(Error::io(path, e)),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Csv {
            path: path.display().to_string(),
            line: i + 1,
            reason: format!("bad cache entry: {e}"),
        })?;
        map.entry((entry.id, entry.prompt_sha256)).or_insert(entry.raw);
    }
    Ok(map)
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn call_with_retries(backend: &dyn ChatBackend, prompt: &str, cfg: &LlmEndpointConfig, calls: &AtomicUsize) -> std::result::Result<String, CallError> {
    let mut attempt = 0;
    loop {
        calls.fetch_add(1, Ordering::Relaxed);
        match backend.complete(prompt) {
            Err(e) if e.retryable() && attempt < cfg.max_retries => {
                attempt += 1;
                std::thread::sleep(Duration::from_millis(cfg.retry_backoff_ms * attempt as u64));
            }
            r => return r,
        }
    }
}

fn interpret(task: Task, raw: &str, outcome: &mut LlmOutcome) {
    let parsed = match task {
        Task::Categorical => parse_categorical_response(raw).map(|e| outcome.emotion = Some(e)),
        Task::Attributes => parse_attribute_response(raw).map(|p| {
            outcome.attributes = Some(p.value);
            outcome.clamped = p.clamped;
        }),
    };
    if parsed.is_err() {
        outcome.failure = Some(FailureKind::Parse { raw: raw.to_string() });
    }
}

/// Prompts the endpoint once per `(id, transcript)`, consulting and appending
/// to the cache. Per-id failures never abort the run.
pub fn run_llm_eval(
    backend: &dyn ChatBackend,
    cfg: &LlmEndpointConfig,
    task: Task,
    items: &[(String, String)],
) -> Result<LlmRun> {
    cfg.validate()?;
    let cache = match &cfg.cache_path {
        Some(p) => load_cache(p)?,
        None => HashMap::new(),
    };
    let writer = match &cfg.cache_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let f = OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?;
            Some(Mutex::new(f))
        }
        None => None,
    };
    let write_error: Mutex<Option<Error>> = Mutex::new(None);
    let calls = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<LlmOutcome>>> = items.iter().map(|_| Mutex::new(None)).collect();

    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some((id, transcript)) = items.get(i) else { break };
        let mut out = LlmOutcome {
            id: id.clone(),
            prompt_sha256: String::new(),
            emotion: None,
            attributes: None,
            clamped: false,
            from_cache: false,
            failure: None,
        };
        match build_prompt(task, transcript) {
            Err(e) => out.failure = Some(FailureKind::Prompt { message: e.to_string() }),
            Ok(prompt) => {
                out.prompt_sha256 = prompt_sha256(&prompt);
                let key = (id.clone(), out.prompt_sha256.clone());
                let raw = if let Some(raw) = cache.get(&key) {
                    out.from_cache = true;
                    Ok(raw.clone())
                } else {
                    call_with_retries(backend, &prompt, cfg, &calls)
                };
                match raw {
                    Ok(raw) => {
                        if let (Some(w), false) = (&writer, out.from_cache) {
                            let entry = CacheEntry {
                                id: id.clone(),
                                prompt_sha256: out.prompt_sha256.clone(),
                                raw: raw.clone(),
                                timestamp: now_secs(),
                            };
                            let line = serde_json::to_string(&entry).expect("cache entry serializes") + "\n";
                            let mut f = w.lock().unwrap();
                            if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                                let path = cfg.cache_path.as_deref().unwrap_or(Path::new(""));
                                write_error.lock().unwrap().get_or_insert(Error::io(path, e));
                            }
                        }
                        interpret(task, &raw, &mut out);
                    }
                    Err(CallError::Http { status, body }) => out.failure = Some(FailureKind::Http { status, body }),
                    Err(CallError::Transport(message)) => out.failure = Some(FailureKind::Transport { message }),
                    Err(CallError::Protocol(message)) => out.failure = Some(FailureKind::Protocol { message }),
                }
            }
        }
        *results[i].lock().unwrap() = Some(out);
    };

    let workers = cfg.parallelism.min(items.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(&work);
        }
    });
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    let outcomes: Vec<LlmOutcome> = results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every item visited"))
        .collect();
    let cache_hits = outcomes.iter().filter(|o| o.from_cache).count();
    Ok(LlmRun {
        task,
        outcomes,
        network_calls: calls.into_inner(),
        cache_hits,
    })
}

//! Batch simulation and the artifacts it leaves on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::db::DomainDatabase;
use crate::dialogue::{run_dialogue, DialogueLog, Termination};
use crate::engine::{EngineConfig, ExemplarMode, Session};
use crate::eval::{aggregate, analyze_trace, issue_histogram, score_dialogue, CorpusMetrics, DialogueScore, IssueKind, MetricsDisplay, TraceIssue};
use crate::llm::{CompletionBackend, CostError, CostLedger, HttpBackend, HttpConfig, PriceTable};
use crate::rules::RuleBackend;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{generate_goal, AgendaUser};

pub const LOG_FILE: &str = "dialogues.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const ISSUES_JSON: &str = "issues.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad configuration or arguments.
    #[error("{0}")]
    Usage(String),
    #[error("backend failure in dialogue {index}: {message}")]
    Backend { index: usize, message: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("malformed log record at line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Cost(#[from] CostError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    /// The deterministic rule policy; no network.
    Scripted,
    /// An OpenAI-style chat endpoint from the environment.
    Http { model: String },
    /// A replay fixture; every dialogue replays the same scenario.
    Fixture { scenario: String },
}

impl BackendChoice {
    pub fn model(&self) -> &str {
        match self {
            BackendChoice::Http { model } => model,
            _ => "scripted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dialogues: usize,
    pub seed: u64,
    pub backend: BackendChoice,
    pub exemplar: ExemplarMode,
    pub max_steps: usize,
    pub max_turns: usize,
    pub out_dir: PathBuf,
    pub prices: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub jobs: usize,
    /// Run dialogues last to first; results must not change.
    #[serde(default)]
    pub reverse: bool,
}

impl RunConfig {
    pub fn new(dialogues: usize, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        let engine = EngineConfig::default();
        RunConfig {
            dialogues,
            seed,
            backend: BackendChoice::Scripted,
            exemplar: ExemplarMode::Generic,
            max_steps: engine.max_steps,
            max_turns: crate::dialogue::DEFAULT_MAX_TURNS,
            out_dir: out_dir.into(),
            prices: None,
            db: None,
            jobs: 1,
            reverse: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.dialogues == 0 {
            return Err(RunError::Usage("dialogue count must be at least 1".into()));
        }
        if self.max_steps == 0 || self.max_turns == 0 || self.jobs == 0 {
            return Err(RunError::Usage("max steps, max turns and jobs must be positive".into()));
        }
        for path in [&self.prices, &self.db].into_iter().flatten() {
            if !path.exists() {
                return Err(RunError::Usage(format!("{} does not exist", path.display())));
            }
        }
        if let BackendChoice::Fixture { scenario } = &self.backend {
            resolve_scenario(scenario)?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.dialogues as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    fn engine(&self) -> EngineConfig {
        EngineConfig { max_steps: self.max_steps, model: self.backend.model().to_string(), ..EngineConfig::default() }
    }
}

/// A bundled scenario name or a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<Scenario, RunError> {
    let path = Path::new(name_or_path);
    let found = if path.exists() { Scenario::load(path) } else { Scenario::bundled_named(name_or_path) };
    found.map_err(|e| match e {
        ScenarioError::Unknown(n) => RunError::Usage(format!(
            "unknown scenario '{n}'; bundled: {}",
            Scenario::bundled_names().join(", ")
        )),
        other => RunError::Usage(other.to_string()),
    })
}

/// One line of the dialogue log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub index: usize,
    pub seed: u64,
    pub model: String,
    pub log: DialogueLog,
    pub score: Option<DialogueScore>,
    pub issues: Vec<TraceIssue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: CorpusMetrics,
    pub display: MetricsDisplay,
    pub scored: usize,
    pub failed: usize,
    pub cost: CostLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuesReport {
    /// The booking-intent check is a lexicon heuristic.
    pub note: String,
    pub histogram: BTreeMap<IssueKind, usize>,
    pub dialogues: Vec<DialogueIssues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueIssues {
    pub index: usize,
    pub issues: Vec<TraceIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub metrics: Option<CorpusMetrics>,
    #[serde(with = "rust_decimal::serde::str")]
    pub total_cost: Decimal,
    pub failures: usize,
}

struct Batch {
    config: RunConfig,
    db: Arc<DomainDatabase>,
    backend: Option<Arc<dyn CompletionBackend>>,
    scenario: Option<Scenario>,
}

impl Batch {
    fn new(config: &RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let db = match &config.db {
            Some(path) => DomainDatabase::load(path).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?,
            None => DomainDatabase::bundled(),
        };
        let db = Arc::new(db);
        let (backend, scenario): (Option<Arc<dyn CompletionBackend>>, _) = match &config.backend {
            BackendChoice::Scripted => (Some(Arc::new(RuleBackend::new(db.clone()))), None),
            BackendChoice::Http { .. } => {
                let http = HttpConfig::from_env()
                    .and_then(HttpBackend::new)
                    .map_err(|e| RunError::Usage(e.to_string()))?;
                (Some(Arc::new(http)), None)
            }
            BackendChoice::Fixture { scenario } => (None, Some(resolve_scenario(scenario)?)),
        };
        if let Some(s) = &scenario {
            s.validate(&db).map_err(|e| RunError::Usage(e.to_string()))?;
        }
        Ok(Batch { config: config.clone(), db, backend, scenario })
    }

    /// Everything about dialogue `index` derives from its seed.
    fn run_one(&self, index: usize) -> DialogueRecord {
        let seed = self.config.seed.wrapping_add(index as u64);
        let engine = self.config.engine();
        let outcome = match &self.scenario {
            Some(scenario) => {
                let domains = scenario.goal.domain_names();
                let mut session = Session::with_mode(self.db.clone(), self.config.exemplar, Some(&domains), engine);
                let mut user = scenario.user(self.db.clone());
                let backend = scenario.backend();
                run_dialogue(&mut session, &mut user, &backend, self.config.max_turns.min(scenario.turns.len()))
            }
            None => {
                let goal = generate_goal(&self.db, seed);
                let domains = goal.domain_names();
                let mut session = Session::with_mode(self.db.clone(), self.config.exemplar, Some(&domains), engine);
                let mut user = AgendaUser::new(goal.clone(), self.db.clone(), seed);
                let backend = self.backend.as_ref().expect("non-fixture batches carry a backend");
                run_dialogue(&mut session, &mut user, backend.as_ref(), self.config.max_turns)
            }
        };
        let (log, error) = match outcome {
            Ok(log) => (log, None),
            Err(failure) => (failure.log, Some(failure.message)),
        };
        let score = score_dialogue(&log.goal, &log, &self.db).ok();
        let issues = analyze_trace(&log, &self.db);
        DialogueRecord { index, seed, model: self.config.backend.model().to_string(), log, score, issues, error }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(io_err(format!("writing {}", path.display())))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Metrics over scored records; cost covers every record.
pub fn build_reports(records: &[DialogueRecord], prices: &PriceTable) -> Result<(Option<MetricsReport>, IssuesReport), RunError> {
    let mut cost = CostLedger::new();
    for r in records {
        cost.accumulate(&r.model, r.log.usage, prices)?;
    }
    let scores: Vec<DialogueScore> = records.iter().filter_map(|r| r.score).collect();
    let metrics = aggregate(&scores, cost.total).ok().map(|metrics| MetricsReport {
        display: metrics.display(),
        metrics,
        scored: scores.len(),
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        cost: cost.clone(),
    });
    let issues = IssuesReport {
        note: "PrematureBooking uses a booking-intent word list and is a heuristic.".into(),
        histogram: issue_histogram(records.iter().flat_map(|r| &r.issues)),
        dialogues: records
            .iter()
            .filter(|r| !r.issues.is_empty())
            .map(|r| DialogueIssues { index: r.index, issues: r.issues.clone() })
            .collect(),
    };
    Ok((metrics, issues))
}

pub fn render_metrics_text(report: &Option<MetricsReport>, issues: &IssuesReport) -> String {
    let mut out = String::new();
    match report {
        Some(r) => {
            out.push_str(&r.metrics.render_table());
            if r.failed > 0 {
                let _ = writeln!(out, "({} dialogue(s) ended in a backend failure)", r.failed);
            }
        }
        None => out.push_str("no scored dialogues\n"),
    }
    out.push_str("\nTrace issues (PrematureBooking is a lexicon heuristic):\n");
    for (kind, n) in &issues.histogram {
        let _ = writeln!(out, "  {kind:<17} {n}");
    }
    out
}

/// The built-in table unless a TOML price file is given.
pub fn load_prices(path: Option<&Path>) -> Result<PriceTable, RunError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(format!("reading {}", p.display())))?;
            Ok(PriceTable::from_toml(&text)?)
        }
        None => Ok(PriceTable::default()),
    }
}

/// Recomputes the metrics text of an existing log.
pub fn report(path: &Path, prices: &PriceTable) -> Result<String, RunError> {
    let records = read_records(path)?;
    let (metrics, issues) = build_reports(&records, prices)?;
    Ok(render_metrics_text(&metrics, &issues))
}

/// Runs the batch, writing the log as dialogues finish, then the reports
/// and the manifest. A fatal backend error stops scheduling new
/// dialogues; everything finished so far is on disk.
pub fn run_batch(config: &RunConfig) -> Result<RunManifest, RunError> {
    let batch = Batch::new(config)?;
    let prices = load_prices(config.prices.as_deref())?;
    prices.get(config.backend.model())?;
    fs::create_dir_all(&config.out_dir).map_err(io_err(format!("creating {}", config.out_dir.display())))?;
    let started_at = now();
    let log_path = config.out_dir.join(LOG_FILE);
    let file = File::create(&log_path).map_err(io_err(format!("creating {}", log_path.display())))?;
    let writer = Mutex::new(BufWriter::new(file));
    let abort = AtomicBool::new(false);

    let mut order: Vec<usize> = (0..config.dialogues).collect();
    if config.reverse {
        order.reverse();
    }
    let emit = |index: usize| -> Result<Option<DialogueRecord>, RunError> {
        if abort.load(Ordering::SeqCst) {
            return Ok(None);
        }
        let record = batch.run_one(index);
        if record.error.is_some() {
            abort.store(true, Ordering::SeqCst);
        }
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut w = writer.lock().expect("log writer lock");
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(io_err(format!("writing {}", log_path.display())))?;
        info!(index, seed = record.seed, "dialogue finished");
        Ok(Some(record))
    };
    let results: Vec<Result<Option<DialogueRecord>, RunError>> = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| RunError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| order.par_iter().map(|&i| emit(i)).collect())
    } else {
        order.iter().map(|&i| emit(i)).collect()
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by_key(|r| r.index);

    let (metrics, issues) = build_reports(&records, &prices)?;
    if let Some(m) = &metrics {
        write_json(&config.out_dir.join(METRICS_JSON), m)?;
    }
    write_json(&config.out_dir.join(ISSUES_JSON), &issues)?;
    fs::write(config.out_dir.join(METRICS_TXT), render_metrics_text(&metrics, &issues))
        .map_err(io_err("writing metrics report"))?;

    let failures: Vec<&DialogueRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    let manifest = RunManifest {
        config: config.clone(),
        seeds: config.seeds(),
        started_at,
        finished_at: now(),
        total_cost: metrics.as_ref().map(|m| m.cost.total).unwrap_or_default(),
        metrics: metrics.map(|m| m.metrics),
        failures: failures.len(),
    };
    write_json(&config.out_dir.join(MANIFEST_JSON), &manifest)?;
    if let Some(first) = failures.first() {
        warn!(index = first.index, "batch aborted by backend failure");
        return Err(RunError::Backend {
            index: first.index,
            message: first.error.clone().unwrap_or_default(),
        });
    }
    Ok(manifest)
}

/// Reads a dialogue log; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<DialogueRecord>, RunError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| serde_json::from_str(&text).map_err(|e| RunError::Record { line, message: e.to_string() }))
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, RunError> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(format!("reading {}", path.display())))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Human-readable traces, optionally only dialogues with an issue kind.
pub fn export_traces(path: &Path, filter: Option<IssueKind>) -> Result<String, RunError> {
    let mut out = String::new();
    for record in read_records(path)? {
        if filter.is_some_and(|k| !record.issues.iter().any(|i| i.kind == k)) {
            continue;
        }
        let _ = writeln!(out, "=== dialogue {} (seed {})", record.index, record.seed);
        let _ = writeln!(out, "goal: {}", record.log.goal);
        for issue in &record.issues {
            let _ = writeln!(out, "issue: {} at turn {}: {}", issue.kind, issue.turn, issue.evidence);
        }
        for (t, turn) in record.log.turns.iter().enumerate() {
            let _ = writeln!(out, "--- turn {t}");
            let _ = writeln!(out, "User: {}", turn.user);
            if let Some(trace) = &turn.trace {
                for step in &trace.steps {
                    let _ = writeln!(out, "{step}");
                }
            }
            let _ = writeln!(out, "System: {}", turn.system);
        }
        let end = match &record.log.termination {
            Termination::UserDone => "user ended the dialogue".to_string(),
            Termination::MaxTurns => "turn cap reached".to_string(),
            Termination::BackendFailure { message } => format!("backend failure: {message}"),
        };
        let _ = writeln!(out, "=== end: {end}\n");
    }
    Ok(out)
}

/// A seeded uniform sample of `k` records, kept in file order.
pub fn sample_dialogues(path: &Path, k: usize, seed: u64, out: &Path) -> Result<usize, RunError> {
    let lines = read_lines(path)?;
    if k > lines.len() {
        return Err(RunError::Usage(format!("cannot sample {k} of {} records", lines.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, lines.len(), k).into_vec();
    picked.sort_unstable();
    let file = File::create(out).map_err(io_err(format!("creating {}", out.display())))?;
    let mut w = BufWriter::new(file);
    for i in &picked {
        writeln!(w, "{}", lines[*i].1).map_err(io_err(format!("writing {}", out.display())))?;
    }
    w.flush().map_err(io_err(format!("writing {}", out.display())))?;
    Ok(picked.len())
}

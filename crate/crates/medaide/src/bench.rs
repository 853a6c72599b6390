//! Benchmark runner, ablation matrix and stage-granularity sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use medaide_core::gateway::HashEmbedder;
use medaide_core::metrics::{bert_score_like, bleu_n, gleu, intent_f1, meteor_lite, rouge_l, MetricError};
use medaide_core::pipeline::{PipelineError, Recognizer};
use medaide_core::text::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, Overrides};
use crate::engine::{Engine, EngineError};
use crate::formats::{self, BenchmarkInstance, FormatError};
use crate::http::HttpTransport;

pub const METRICS: [&str; 6] = ["bleu_1", "bleu_2", "meteor_lite", "bert_score", "rouge_l", "gleu"];
const HEADERS: [&str; 6] = ["BLEU-1", "BLEU-2", "Meteor-lite", "BERT-Score", "ROUGE-L", "GLEU"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub stage: String,
    pub gold_intents: Vec<String>,
    pub predicted_intents: Vec<String>,
    pub stages_run: Vec<String>,
    pub standardizer_sweeps: usize,
    pub response: String,
    /// Metric name to score on the 0-100 scale.
    pub scores: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub label: String,
    pub no_rie: bool,
    pub recognizer: Recognizer,
    pub decision_analysis: bool,
    pub stages: usize,
    pub profile: String,
    pub config: serde_json::Value,
    /// SHA-256 over the fields above.
    pub hash: String,
}

impl Fingerprint {
    pub fn of(engine: &Engine, label: &str) -> Self {
        let c = &engine.config;
        let config = serde_json::to_value(c).expect("config serializes");
        let mut fp = Fingerprint {
            label: label.to_string(),
            no_rie: c.pipeline.no_rie,
            recognizer: c.pipeline.recognizer,
            decision_analysis: c.pipeline.decision_analysis,
            stages: engine.pipeline.plan.granularity(),
            profile: c.backend.profile.as_str().to_string(),
            config,
            hash: String::new(),
        };
        fp.hash = sha256_hex(serde_json::to_string(&fp).expect("fingerprint serializes").as_bytes());
        fp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fingerprint: Fingerprint,
    /// Corpus means per metric; errored instances count as 0.
    pub means: BTreeMap<String, f64>,
    pub intent_f1: f64,
    pub instances: Vec<InstanceScore>,
    /// Error category to count.
    pub error_tally: BTreeMap<String, usize>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn category(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::EmptyQuery => "empty-query",
        PipelineError::Standardize(_) => "standardize",
        PipelineError::Context(_) => "context",
        PipelineError::Intent(_) => "intent",
        PipelineError::Protocol(_) => "protocol",
    }
}

fn score_text(candidate: &str, reference: &str, embedder: &HashEmbedder) -> Result<BTreeMap<String, f64>, MetricError> {
    let values = [
        bleu_n(candidate, reference, 1)?,
        bleu_n(candidate, reference, 2)?,
        meteor_lite(candidate, reference)?,
        bert_score_like(candidate, reference, embedder)?,
        rouge_l(candidate, reference)?,
        gleu(candidate, reference)?,
    ];
    Ok(METRICS.iter().map(|m| m.to_string()).zip(values).collect())
}

fn zeros() -> BTreeMap<String, f64> {
    METRICS.iter().map(|m| (m.to_string(), 0.0)).collect()
}

fn evaluate(engine: &Engine, instance: &BenchmarkInstance, embedder: &HashEmbedder) -> (InstanceScore, Option<&'static str>) {
    let mut score = InstanceScore {
        id: instance.id.clone(),
        stage: instance.stage.clone(),
        gold_intents: instance.intents.clone(),
        predicted_intents: Vec::new(),
        stages_run: Vec::new(),
        standardizer_sweeps: 0,
        response: String::new(),
        scores: zeros(),
        error: None,
    };
    match engine.run(&instance.query, None, None) {
        Ok(c) => {
            score.predicted_intents = c.activation.activated;
            score.stages_run = c.stages;
            score.standardizer_sweeps = c.standardized.sweeps;
            match score_text(&c.response, &instance.reference, embedder) {
                Ok(s) => score.scores = s,
                Err(e) => {
                    score.error = Some(format!("metric: {e}"));
                    score.response = c.response;
                    return (score, Some("metric"));
                }
            }
            score.response = c.response;
            (score, None)
        }
        Err(e) => {
            score.error = Some(e.to_string());
            (score, Some(category(&e)))
        }
    }
}

/// Runs every instance through `engine`, fanning out over at most
/// `pipeline.parallelism` threads. The report does not depend on the
/// thread count.
pub fn run_benchmark(engine: &Engine, instances: &[BenchmarkInstance], label: &str) -> MetricReport {
    let embedder = HashEmbedder::new(engine.config.embedding.dimension, engine.config.embedding.seed);
    let workers = engine.config.pipeline.parallelism.min(instances.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, InstanceScore, Option<&'static str>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(instance) = instances.get(i) else { break };
                let (score, err) = evaluate(engine, instance, &embedder);
                results.lock().expect("bench results").push((i, score, err));
            });
        }
    });
    let mut results = results.into_inner().expect("bench results");
    results.sort_by_key(|r| r.0);

    let mut error_tally = BTreeMap::new();
    for (_, _, err) in &results {
        if let Some(c) = err {
            *error_tally.entry(c.to_string()).or_insert(0) += 1;
        }
    }
    let instances: Vec<InstanceScore> = results.into_iter().map(|r| r.1).collect();
    let n = instances.len().max(1) as f64;
    let means = METRICS
        .iter()
        .map(|m| (m.to_string(), instances.iter().map(|i| i.scores[*m]).sum::<f64>() / n))
        .collect();
    let predicted: Vec<Vec<String>> = instances.iter().map(|i| i.predicted_intents.clone()).collect();
    let gold: Vec<Vec<String>> = instances.iter().map(|i| i.gold_intents.clone()).collect();
    let f1 = intent_f1(&predicted, &gold).expect("aligned by construction");
    MetricReport { fingerprint: Fingerprint::of(engine, label), means, intent_f1: f1, instances, error_tally }
}

/// Plain-text table, one row per report, metrics in the usual column
/// order.
pub fn render_table(reports: &[MetricReport]) -> String {
    let width = reports.iter().map(|r| r.fingerprint.label.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}", "Setting");
    for h in HEADERS {
        out.push_str(&format!("  {h:>11}"));
    }
    out.push_str(&format!("  {:>9}  {:>6}\n", "Intent-F1", "Errors"));
    for r in reports {
        out.push_str(&format!("{:<width$}", r.fingerprint.label));
        for m in METRICS {
            out.push_str(&format!("  {:>11.2}", r.means[m]));
        }
        let errors: usize = r.error_tally.values().sum();
        out.push_str(&format!("  {:>9.4}  {:>6}\n", r.intent_f1, errors));
    }
    out
}

/// One ablation setting. Unset fields keep the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationCell {
    pub name: String,
    pub no_rie: bool,
    pub recognizer: Option<Recognizer>,
    pub no_decision_analysis: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationMatrix {
    pub cells: Vec<AblationCell>,
    /// Stage granularities; empty means the configured one.
    #[serde(default)]
    pub stages: Vec<usize>,
}

impl AblationMatrix {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let m: AblationMatrix = serde_json::from_str(&formats::read_text(path)?)
            .map_err(|e| FormatError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
        let mut names = std::collections::BTreeSet::new();
        for c in &m.cells {
            if c.name.is_empty() || !c.name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
                return Err(FormatError::Invalid { path: path.to_path_buf(), message: format!("bad cell name {:?}", c.name) });
            }
            if !names.insert(c.name.as_str()) {
                return Err(FormatError::Invalid { path: path.to_path_buf(), message: format!("duplicate cell {:?}", c.name) });
            }
        }
        Ok(m)
    }

    /// The stage sweep: the full pipeline at every granularity in `stages`.
    pub fn sweep(stages: impl IntoIterator<Item = usize>) -> Self {
        Self { cells: vec![AblationCell { name: "full".into(), ..AblationCell::default() }], stages: stages.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStatus {
    pub cell: String,
    pub stages: Option<usize>,
    pub report: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub reports: Vec<MetricReport>,
    pub statuses: Vec<CellStatus>,
}

impl AblationOutcome {
    pub fn failed(&self) -> usize {
        self.statuses.iter().filter(|s| s.error.is_some()).count()
    }
}

/// Runs every cell at every granularity and writes
/// `<out_dir>/<cell>[-s<k>].json` plus `summary.txt`.
pub fn run_ablation(
    base: &EngineConfig,
    matrix: &AblationMatrix,
    instances: &[BenchmarkInstance],
    out_dir: &Path,
    transport: Option<std::sync::Arc<dyn HttpTransport>>,
) -> Result<AblationOutcome, EngineError> {
    let stages: Vec<Option<usize>> =
        if matrix.stages.is_empty() { vec![None] } else { matrix.stages.iter().copied().map(Some).collect() };
    let mut reports = Vec::new();
    let mut statuses = Vec::new();
    for &k in &stages {
        for cell in &matrix.cells {
            let mut config = base.clone();
            config.apply(&Overrides {
                stages: k,
                no_rie: cell.no_rie,
                recognizer: cell.recognizer,
                no_decision_analysis: cell.no_decision_analysis,
                ..Overrides::default()
            });
            let label = match k {
                Some(k) => format!("{}-s{k}", cell.name),
                None => cell.name.clone(),
            };
            let built = match &transport {
                Some(t) => Engine::build_with(config, t.clone()),
                None => Engine::build(config),
            };
            let engine = match built {
                Ok(e) => e,
                Err(e) => {
                    statuses.push(CellStatus { cell: cell.name.clone(), stages: k, report: None, error: Some(e.to_string()) });
                    continue;
                }
            };
            let report = run_benchmark(&engine, instances, &label);
            let path = out_dir.join(format!("{label}.json"));
            formats::write_atomic(&path, report.to_json().as_bytes())?;
            statuses.push(CellStatus { cell: cell.name.clone(), stages: k, report: Some(path), error: None });
            reports.push(report);
        }
    }
    formats::write_atomic(&out_dir.join("summary.txt"), render_table(&reports).as_bytes())?;
    Ok(AblationOutcome { reports, statuses })
}

//! Command-line surface. Exit codes: 0 success, 1 usage, 2 configuration,
//! 3 pipeline or backend failure.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use medaide_core::intent::Smoothing;
use medaide_core::pipeline::{Consultation, Recognizer};
use medaide_core::protocol::{PatientProfile, VisitRecord};
use medaide_core::retrieval::StoreKind;

use crate::bench::{render_table, run_ablation, run_benchmark, AblationMatrix};
use crate::config::{EngineConfig, Overrides, Profile};
use crate::engine::{self, Engine, EngineError};
use crate::formats;
use crate::http::HttpTransport;
use crate::stores::StoreError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "medaide", version, about = "Medical consultation orchestration engine")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalFlags {
    /// Engine configuration file (TOML).
    #[arg(long, global = true, default_value = "medaide.toml")]
    pub config: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Stage granularity, 2 to 6.
    #[arg(long, global = true)]
    pub stages: Option<usize>,
    /// Intent activation threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Cosine threshold for every knowledge store.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Skip extraction and match intents on the raw query.
    #[arg(long, global = true)]
    pub no_rie: bool,
    #[arg(long, global = true, value_parser = parse_recognizer)]
    pub recognizer: Option<Recognizer>,
    /// Concatenate stage outputs instead of integrating and synthesizing.
    #[arg(long, global = true)]
    pub no_decision_analysis: bool,
    /// Print intermediate results.
    #[arg(long, global = true)]
    pub explain: bool,
    /// Seed of the hash embedder.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn parse_recognizer(s: &str) -> Result<Recognizer, String> {
    match s {
        "prototype" => Ok(Recognizer::Prototype),
        "prompt" => Ok(Recognizer::Prompt),
        other => Err(format!("unknown recognizer {other:?} (expected prototype or prompt)")),
    }
}

fn parse_store(s: &str) -> Result<StoreKind, String> {
    StoreKind::parse(s).ok_or_else(|| format!("unknown store {s:?} (expected guidelines, cases or medications)"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and store it under the data directory.
    Ingest {
        #[arg(value_parser = parse_store)]
        store: StoreKind,
        corpus: PathBuf,
    },
    /// Build and persist the inverted index of an ingested store.
    Index {
        #[arg(value_parser = parse_store)]
        store: StoreKind,
    },
    /// Answer one query.
    Run {
        query: String,
        /// Patient profile id to load.
        #[arg(long)]
        patient: Option<String>,
        /// Also write the session trace to this file.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Interactive consultation; one query per line.
    Chat {
        /// Patient profile id; the profile is saved after every turn.
        #[arg(long)]
        patient: Option<String>,
    },
    /// Score a benchmark file.
    Bench {
        benchmark: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Run an ablation matrix over a benchmark file.
    Ablate {
        matrix: PathBuf,
        benchmark: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print logged trace events as JSONL.
    ExportTrace {
        #[arg(long)]
        session: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl GlobalFlags {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            profile: self.profile,
            stages: self.stages,
            threshold: self.threshold,
            tau: self.tau,
            no_rie: self.no_rie,
            recognizer: self.recognizer,
            no_decision_analysis: self.no_decision_analysis,
            seed: self.seed,
        }
    }
}

pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command. `transport`
/// replaces the HTTP transport of every backend when given.
pub fn run<I, T>(args: I, io: &mut Io<'_>, transport: Option<Arc<dyn HttpTransport>>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(io.out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(io.err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, io, transport) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(flags: &GlobalFlags) -> Result<EngineConfig, EngineError> {
    let mut config = EngineConfig::load(&flags.config)?;
    config.apply(&flags.overrides());
    Ok(config)
}

fn build(config: EngineConfig, transport: &Option<Arc<dyn HttpTransport>>) -> Result<Engine, EngineError> {
    match transport {
        Some(t) => Engine::build_with(config, t.clone()),
        None => Engine::build(config),
    }
}

fn out_err(e: std::io::Error) -> EngineError {
    EngineError::Backend(format!("writing output: {e}"))
}

fn execute(cli: &Cli, io: &mut Io<'_>, transport: Option<Arc<dyn HttpTransport>>) -> Result<(), EngineError> {
    let config = load_config(&cli.global)?;
    match &cli.command {
        Command::Ingest { store, corpus } => {
            let s = engine::ingest(&config, *store, corpus)?;
            writeln!(io.out, "ingested {} documents into {} ({})", s.documents, s.store, s.path.display()).map_err(out_err)
        }
        Command::Index { store } => {
            let (file, path) = engine::index(&config, *store)?;
            let st = &file.stats;
            writeln!(
                io.out,
                "indexed {}: doc_count {}, term_count {}, posting_count {} ({})",
                file.store,
                st.doc_count,
                st.term_count,
                st.posting_count,
                path.display()
            )
            .map_err(out_err)
        }
        Command::Run { query, patient, trace_out } => {
            let engine = build(config, &transport)?;
            let profile = match patient {
                Some(id) => Some(engine.profiles.get(id)?),
                None => None,
            };
            let c = engine.run(query, profile.as_ref(), None)?;
            engine.traces.append(&c.trace)?;
            if let Some(path) = trace_out {
                formats::write_atomic(path, c.trace.to_jsonl().as_bytes())?;
            }
            write_consultation(io.out, &engine, &c, cli.global.explain).map_err(out_err)
        }
        Command::Chat { patient } => {
            let engine = build(config, &transport)?;
            chat(&engine, patient.as_deref(), cli.global.explain, io)
        }
        Command::Bench { benchmark, out, label } => {
            let engine = build(config, &transport)?;
            let instances = formats::load_benchmark(benchmark, engine.pipeline.matcher.taxonomy())?;
            let report = run_benchmark(&engine, &instances, label);
            if let Some(path) = out {
                formats::write_atomic(path, report.to_json().as_bytes())?;
            }
            write!(io.out, "{}", render_table(std::slice::from_ref(&report))).map_err(out_err)
        }
        Command::Ablate { matrix, benchmark, out_dir } => {
            let m = AblationMatrix::load(matrix)?;
            let taxonomy = match &config.paths.taxonomy {
                Some(p) => formats::load_taxonomy(&config.resolve(p))?,
                None => Default::default(),
            };
            let instances = formats::load_benchmark(benchmark, &taxonomy)?;
            let outcome = run_ablation(&config, &m, &instances, out_dir, transport)?;
            write!(io.out, "{}", render_table(&outcome.reports)).map_err(out_err)?;
            for s in &outcome.statuses {
                if let Some(e) = &s.error {
                    writeln!(io.err, "cell {} (stages {:?}) failed: {e}", s.cell, s.stages).map_err(out_err)?;
                }
            }
            match outcome.failed() {
                0 => Ok(()),
                n => Err(EngineError::Backend(format!("{n} ablation cell(s) failed"))),
            }
        }
        Command::ExportTrace { session, out } => {
            let store = crate::stores::TraceStore::new(&config.traces_path());
            let events = store.events(session.as_deref())?;
            let mut text = String::new();
            for e in &events {
                text.push_str(&serde_json::to_string(e).expect("trace events serialize"));
                text.push('\n');
            }
            match out {
                Some(path) => formats::write_atomic(path, text.as_bytes()).map_err(EngineError::from),
                None => io.out.write_all(text.as_bytes()).map_err(out_err),
            }
        }
    }
}

fn write_consultation(out: &mut dyn Write, engine: &Engine, c: &Consultation, explain: bool) -> std::io::Result<()> {
    writeln!(out, "session: {}", c.session)?;
    writeln!(out, "stages: {}", c.stages.join(", "))?;
    if explain {
        write_explain(out, engine, c)?;
    }
    writeln!(out, "---")?;
    writeln!(out, "{}", c.response)
}

fn write_explain(out: &mut dyn Write, engine: &Engine, c: &Consultation) -> std::io::Result<()> {
    writeln!(out, "standardized: {} (sweeps {}, converged {})", c.standardized.text, c.standardized.sweeps, c.standardized.converged)?;
    writeln!(out, "refined: {}", c.refined.merged_text)?;
    let elements: Vec<String> = c.elements.elements.iter().map(|e| format!("{}:{}", e.kind.as_str(), e.surface)).collect();
    writeln!(out, "elements: {}", elements.join(", "))?;
    let a = &c.activation;
    writeln!(out, "intents (threshold {:.6}{}):", a.threshold_used, if a.fallback_applied { ", fallback" } else { "" })?;
    for (intent, p) in engine.pipeline.matcher.taxonomy().intents().iter().zip(&a.probabilities) {
        let mark = if a.activated.contains(&intent.id) { " *" } else { "" };
        writeln!(out, "  {:<24} {:.6}{mark}", intent.id, p)?;
    }
    if a.probabilities.is_empty() {
        writeln!(out, "  activated: {}", a.activated.join(", "))?;
    }
    Ok(())
}

fn chat(engine: &Engine, patient: Option<&str>, explain: bool, io: &mut Io<'_>) -> Result<(), EngineError> {
    let mut profile = match patient {
        Some(id) => match engine.profiles.get(id) {
            Ok(p) => p,
            Err(StoreError::NotFound(_)) => PatientProfile::new(id),
            Err(e) => return Err(e.into()),
        },
        None => PatientProfile::new("guest"),
    };
    // Prompts see the profile as loaded; turns are logged as visits for later sessions.
    let snapshot = profile.clone();
    let mut smoothing = Smoothing::default();
    let mut last: Option<Consultation> = None;
    let mut turn = 0;
    let mut line = String::new();
    loop {
        line.clear();
        if io.input.read_line(&mut line).map_err(|e| EngineError::Backend(format!("reading input: {e}")))? == 0 {
            return Ok(());
        }
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" => return Ok(()),
            "/intents" => {
                match &last {
                    Some(c) => writeln!(io.out, "{}", c.activation.activated.join(", ")),
                    None => writeln!(io.out, "(no turn yet)"),
                }
                .map_err(out_err)?;
                continue;
            }
            "/trace" => {
                match &last {
                    Some(c) => write!(io.out, "{}", c.trace.to_jsonl()),
                    None => writeln!(io.out, "(no turn yet)"),
                }
                .map_err(out_err)?;
                continue;
            }
            "/profile" => {
                writeln!(io.out, "{}", serde_json::to_string_pretty(&profile).expect("profile serializes")).map_err(out_err)?;
                continue;
            }
            t if t.starts_with('/') => {
                writeln!(io.err, "unknown command {t} (try /intents, /trace, /profile, /quit)").map_err(out_err)?;
                continue;
            }
            _ => {}
        }
        turn += 1;
        let session = format!("{}-t{turn}", medaide_core::pipeline::session_id(text));
        match engine.run_session(&session, text, Some(&snapshot), Some(&mut smoothing)) {
            Ok(c) => {
                engine.traces.append(&c.trace)?;
                write_consultation(io.out, engine, &c, explain).map_err(out_err)?;
                writeln!(io.out).map_err(out_err)?;
                profile.visits.push(VisitRecord { date: format!("turn {turn}"), summary: text.to_string() });
                if patient.is_some() {
                    engine.profiles.upsert(&profile)?;
                }
                last = Some(c);
            }
            Err(e) => {
                writeln!(io.err, "error: {e}").map_err(out_err)?;
            }
        }
    }
}

/// Entry point used by the binary.
pub fn main_from_env() -> u8 {
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    let mut io = Io { input: &mut input, out: &mut out, err: &mut err };
    let code = run(std::env::args_os(), &mut io, None);
    let _ = io.out.flush();
    code
}

/// Convenience for tests: runs with empty stdin and captures output.
pub fn run_captured(args: &[&str], stdin: &str, transport: Option<Arc<dyn HttpTransport>>) -> (u8, String, String) {
    let mut input = std::io::Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = {
        let mut io = Io { input: &mut input, out: &mut out, err: &mut err };
        let args: Vec<&str> = std::iter::once("medaide").chain(args.iter().copied()).collect();
        run(args, &mut io, transport)
    };
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

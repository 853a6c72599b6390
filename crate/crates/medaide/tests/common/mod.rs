#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use medaide::cli::run_captured;
use medaide::http::{HttpResponse, HttpTransport};
use medaide_core::gateway::GatewayError;
use serde_json::Value;

/// Three clauses, a leading connective, a contraction, a digit and a
/// stray space before the comma.
pub const GOLDEN_QUERY: &str =
    "and Ive had a fever and a dry cough for 3 days , what could cause it and can I take ibuprofen tablets";

pub const CHAT_SCRIPT: &str = "I have a headache and nausea\nI have a headache and nausea\n/intents\n/quit\n";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Copies the fixture tree into `dst`, leaving out generated state and the
/// frozen goldens.
pub fn copy_fixtures(dst: &Path, with_cassette: bool) {
    copy_dir(&fixtures(), dst, &|name| {
        name == "data" || name == "golden" || (!with_cassette && name == "cassette.jsonl")
    });
}

fn copy_dir(src: &Path, dst: &Path, skip: &dyn Fn(&str) -> bool) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        if skip(&name) {
            continue;
        }
        let to = dst.join(&name);
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to, &|_| false);
        } else {
            fs::copy(entry.path(), to).unwrap();
        }
    }
}

/// Transport that counts calls and never reaches the network.
#[derive(Default)]
pub struct NoNetwork {
    pub calls: AtomicUsize,
}

impl HttpTransport for NoNetwork {
    fn post_json(&self, url: &str, _bearer: Option<&str>, _body: &Value) -> Result<HttpResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(GatewayError::Transport { status: 0, body: format!("network disabled in tests ({url})") })
    }
}

pub struct Output {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
    pub network_calls: usize,
}

/// Runs the CLI against `dir/config.toml`; `{dir}` in arguments expands
/// to `dir`.
pub fn cli(dir: &Path, args: &[&str], stdin: &str) -> Output {
    let net = Arc::new(NoNetwork::default());
    let config = dir.join("config.toml");
    let expanded: Vec<String> = args.iter().map(|a| a.replace("{dir}", &dir.to_string_lossy())).collect();
    let mut full = vec!["--config", config.to_str().unwrap()];
    full.extend(expanded.iter().map(String::as_str));
    let (code, stdout, stderr) = run_captured(&full, stdin, Some(net.clone()));
    Output { code, stdout, stderr, network_calls: net.calls.load(Ordering::SeqCst) }
}

/// One frozen invocation: golden file name, arguments, stdin.
pub struct GoldenCase {
    pub name: &'static str,
    pub args: Vec<&'static str>,
    pub stdin: &'static str,
}

pub fn golden_cases() -> Vec<GoldenCase> {
    vec![
        GoldenCase {
            name: "run.stdout",
            args: vec!["--threshold", "0", "run", GOLDEN_QUERY, "--trace-out", "{dir}/run.trace.jsonl"],
            stdin: "",
        },
        GoldenCase { name: "run-explain.stdout", args: vec!["--explain", "run", GOLDEN_QUERY], stdin: "" },
        GoldenCase {
            name: "bench.stdout",
            args: vec!["bench", "{dir}/bench.jsonl", "--out", "{dir}/bench.json"],
            stdin: "",
        },
        GoldenCase { name: "chat.stdout", args: vec!["chat"], stdin: CHAT_SCRIPT },
    ]
}

/// Files a golden case leaves next to the config, frozen alongside stdout.
pub const GOLDEN_ARTIFACTS: [&str; 2] = ["run.trace.jsonl", "bench.json"];

pub fn golden(name: &str) -> String {
    fs::read_to_string(fixtures().join("golden").join(name)).unwrap_or_else(|e| panic!("golden/{name}: {e}"))
}

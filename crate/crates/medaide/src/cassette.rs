//! Record/replay of model traffic keyed by canonical request hashes.
//!
//! A cassette file is JSONL, one `{"hash", "request", "reply"}` record per
//! line. Chat replies are stored as the [`ChatReply`] JSON, embeddings as
//! `{"embedding": [..]}`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use medaide_core::gateway::{
    canonical_hash, embed_canonical, ChatBackend, ChatReply, ChatRequest, Embedder, EmbeddingVector, GatewayError,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::formats::{read_jsonl, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Hits come from the cassette, misses go to the inner backend and are
    /// appended.
    Record,
    /// Every lookup must hit; nothing reaches the inner backend.
    Replay,
    /// Everything goes to the inner backend; nothing is stored.
    Passthrough,
}

impl FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(format!("unknown cassette mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteRecord {
    pub hash: String,
    pub request: Value,
    pub reply: Value,
}

#[derive(Debug, Default)]
struct Tape {
    records: Vec<CassetteRecord>,
    index: HashMap<String, usize>,
}

#[derive(Debug)]
pub struct Cassette {
    mode: CassetteMode,
    path: Option<PathBuf>,
    tape: Mutex<Tape>,
}

impl Cassette {
    pub fn in_memory(mode: CassetteMode) -> Self {
        Self { mode, path: None, tape: Mutex::new(Tape::default()) }
    }

    /// Loads `path`. A missing file is an error in replay mode and an empty
    /// tape otherwise. Every record's hash is checked against its request.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, FormatError> {
        let mut tape = Tape::default();
        if path.exists() || mode == CassetteMode::Replay {
            for (line, record) in read_jsonl::<CassetteRecord>(path)? {
                if canonical_hash(&record.request) != record.hash {
                    return Err(FormatError::Line {
                        path: path.to_path_buf(),
                        line,
                        message: format!("hash {} does not match its request", record.hash),
                    });
                }
                if !tape.index.contains_key(&record.hash) {
                    let at = tape.records.len();
                    tape.index.insert(record.hash.clone(), at);
                    tape.records.push(record);
                }
            }
        }
        Ok(Self { mode, path: Some(path.to_path_buf()), tape: Mutex::new(tape) })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tape.lock().expect("cassette lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<CassetteRecord> {
        self.tape.lock().expect("cassette lock").records.clone()
    }

    pub fn lookup(&self, hash: &str) -> Option<Value> {
        let tape = self.tape.lock().expect("cassette lock");
        tape.index.get(hash).map(|&i| tape.records[i].reply.clone())
    }

    fn append(&self, record: CassetteRecord) -> Result<(), GatewayError> {
        let mut tape = self.tape.lock().expect("cassette lock");
        if tape.index.contains_key(&record.hash) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&record).map_err(|e| GatewayError::Malformed(e.to_string()))?;
            let io = |e: std::io::Error| GatewayError::Transport { status: 0, body: format!("{}: {e}", path.display()) };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io)?;
            }
            let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            writeln!(file, "{line}").map_err(io)?;
        }
        let at = tape.records.len();
        tape.index.insert(record.hash.clone(), at);
        tape.records.push(record);
        Ok(())
    }

    /// The shared lookup/record path for chat and embed.
    fn serve(
        &self,
        request: Value,
        inner: Option<impl FnOnce() -> Result<Value, GatewayError>>,
    ) -> Result<Value, GatewayError> {
        let hash = canonical_hash(&request);
        let miss = || GatewayError::ReplayMiss { hash: hash.clone(), request: request.to_string() };
        match self.mode {
            CassetteMode::Passthrough => inner.ok_or_else(miss)?(),
            CassetteMode::Replay => self.lookup(&hash).ok_or_else(miss),
            CassetteMode::Record => {
                if let Some(hit) = self.lookup(&hash) {
                    return Ok(hit);
                }
                let reply = inner.ok_or_else(miss)?()?;
                self.append(CassetteRecord { hash: hash.clone(), request: request.clone(), reply: reply.clone() })?;
                Ok(reply)
            }
        }
    }
}

pub struct CassetteChat {
    cassette: Arc<Cassette>,
    inner: Option<Arc<dyn ChatBackend>>,
}

impl CassetteChat {
    pub fn new(cassette: Arc<Cassette>, inner: Option<Arc<dyn ChatBackend>>) -> Self {
        Self { cassette, inner }
    }

    pub fn cassette(&self) -> &Arc<Cassette> {
        &self.cassette
    }
}

impl ChatBackend for CassetteChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        request.validate()?;
        let inner = self.inner.as_ref().map(|b| {
            move || {
                let reply = b.chat(request)?;
                serde_json::to_value(reply).map_err(|e| GatewayError::Malformed(e.to_string()))
            }
        });
        let value = self.cassette.serve(request.canonical(), inner)?;
        serde_json::from_value(value).map_err(|e| GatewayError::Malformed(format!("cassette chat reply: {e}")))
    }
}

pub struct CassetteEmbedder {
    cassette: Arc<Cassette>,
    model: String,
    dimension: usize,
    inner: Option<Arc<dyn Embedder>>,
}

impl CassetteEmbedder {
    pub fn new(cassette: Arc<Cassette>, model: &str, dimension: usize, inner: Option<Arc<dyn Embedder>>) -> Self {
        Self { cassette, model: model.to_string(), dimension, inner }
    }
}

impl Embedder for CassetteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let inner = self.inner.as_ref().map(|e| {
            move || {
                let v = e.embed(text)?;
                Ok(json!({"embedding": v.values}))
            }
        });
        let value = self.cassette.serve(embed_canonical(&self.model, text), inner)?;
        let values: Vec<f64> = value
            .get("embedding")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| GatewayError::Malformed("cassette embedding reply".into()))?;
        if values.len() != self.dimension {
            return Err(GatewayError::DimensionMismatch { expected: self.dimension, found: values.len() });
        }
        Ok(EmbeddingVector::new(values, format!("cassette:{}", self.model)))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

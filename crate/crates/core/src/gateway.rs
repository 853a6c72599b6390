//! Backend-neutral chat and embedding access.
//!
//! The engine talks to models only through [`ChatBackend`] and [`Embedder`].
//! This module carries the request/reply types, the canonical request hash
//! that cassettes and traces key on, and the backends that need no IO: the
//! scripted [`MockChat`], the [`HashEmbedder`], and the in-memory view of the
//! binary embedding file ([`KeyedVectors`], [`FileEmbedder`]).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::text::{collapse_whitespace, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: 0.0, max_tokens: 512 }
    }

    /// Checks the message-shape invariants: at least one message and the
    /// first non-system message comes from the user.
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.iter().find(|m| m.role != Role::System) {
            None => Err(GatewayError::InvalidRequest("no user message".into())),
            Some(m) if m.role != Role::User => {
                Err(GatewayError::InvalidRequest("first non-system message must be from the user".into()))
            }
            Some(_) => Ok(()),
        }
    }

    /// The canonical JSON form: sorted keys, compact separators, message
    /// contents with normalized line endings and no trailing whitespace.
    pub fn canonical(&self) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": normalize_content(&m.content)}))
            .collect();
        json!({
            "kind": "chat",
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    pub fn hash(&self) -> String {
        canonical_hash(&self.canonical())
    }

    /// Concatenated message contents, used by the mock to match scripts.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
}

/// Canonical form of an embedding request, shared by the HTTP backend and
/// the cassette.
pub fn embed_canonical(model: &str, text: &str) -> Value {
    json!({"kind": "embed", "model": model, "input": normalize_content(text)})
}

/// SHA-256 over the compact serialization. `serde_json` maps are ordered by
/// key, so the serialization is canonical without further work.
pub fn canonical_hash(value: &Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

fn normalize_content(text: &str) -> String {
    let unified = text.replace("\r\n", "\n");
    let mut out = String::with_capacity(unified.len());
    for (i, line) in unified.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.trim_end());
    }
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport error (status {status}): {body}")]
    Transport { status: u16, body: String },
    #[error("replay miss for request {hash}")]
    ReplayMiss { hash: String, request: String },
    #[error("no script entry matches request {hash}")]
    ScriptMiss { hash: String },
    #[error("empty input")]
    EmptyInput,
    #[error("unknown embedding key {0:?}")]
    UnknownKey(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
    fn dimension(&self) -> usize;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        (**self).chat(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        (**self).embed(text)
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source: impl Into<String>) -> Self {
        Self { values, source: source.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect(), source: self.source.clone() }
    }
}

// --- mock -----------------------------------------------------------------

/// One scripted reply. Every pattern must occur in the request transcript;
/// the single pattern `"*"` matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match", deserialize_with = "one_or_many")]
    pub patterns: Vec<String>,
    pub reply: String,
}

impl ScriptRule {
    pub fn new(patterns: &[&str], reply: &str) -> Self {
        Self { patterns: patterns.iter().map(|p| p.to_string()).collect(), reply: reply.into() }
    }

    fn matches(&self, transcript: &str) -> bool {
        self.patterns.iter().all(|p| p == "*" || transcript.contains(p.as_str()))
    }
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => alloc::vec![s],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFallback {
    /// Fail with [`GatewayError::ScriptMiss`].
    Miss,
    /// Reply with the first `max_words` words of the last user message.
    Echo { max_words: usize },
}

/// Deterministic chat backend driven by an ordered script table.
#[derive(Debug, Clone)]
pub struct MockChat {
    script: Vec<ScriptRule>,
    fallback: MockFallback,
}

impl MockChat {
    pub fn new(script: Vec<ScriptRule>, fallback: MockFallback) -> Self {
        Self { script, fallback }
    }

    pub fn always(reply: &str) -> Self {
        Self::new(alloc::vec![ScriptRule::new(&["*"], reply)], MockFallback::Miss)
    }

    pub fn echo(max_words: usize) -> Self {
        Self::new(Vec::new(), MockFallback::Echo { max_words })
    }
}

impl ChatBackend for MockChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        request.validate()?;
        let transcript = request.transcript();
        let content = match self.script.iter().find(|r| r.matches(&transcript)) {
            Some(rule) => rule.reply.clone(),
            None => match self.fallback {
                MockFallback::Miss => return Err(GatewayError::ScriptMiss { hash: request.hash() }),
                MockFallback::Echo { max_words } => {
                    let last = collapse_whitespace(request.last_user().unwrap_or(""));
                    last.split(' ').take(max_words).collect::<Vec<_>>().join(" ")
                }
            },
        };
        let prompt_tokens = transcript.split_whitespace().count() as u64;
        let completion_tokens = content.split_whitespace().count() as u64;
        Ok(ChatReply {
            content,
            finish_reason: "stop".into(),
            usage: Usage { prompt_tokens, completion_tokens, total_tokens: prompt_tokens + completion_tokens },
        })
    }
}

// --- hash embedder ----------------------------------------------------------

/// Deterministic pseudo-random unit vectors seeded by a stable hash of the
/// text. Identical texts embed identically; distinct texts land near
/// orthogonal in high dimension.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "hash embedder needs a positive dimension");
        Self { dimension, seed }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let mut state = fnv1a(text.as_bytes()) ^ self.seed;
        let mut values: Vec<f64> = (0..self.dimension)
            .map(|_| {
                // 53 random mantissa bits mapped to [-1, 1)
                let u = (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
                2.0 * u - 1.0
            })
            .collect();
        let norm = libm::sqrt(values.iter().map(|v| v * v).sum());
        for v in &mut values {
            *v /= norm;
        }
        Ok(EmbeddingVector::new(values, "hash"))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

// --- embedding file -----------------------------------------------------------

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MAED";
pub const EMBEDDING_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingFileError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("file truncated")]
    TruncatedFile,
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key is not valid UTF-8")]
    BadKey,
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("vector for {key:?} has dimension {found}, expected {expected}")]
    DimensionMismatch { key: String, expected: usize, found: usize },
    #[error("key {0:?} is longer than 65535 bytes")]
    KeyTooLong(String),
}

/// Keyed f32 vectors as stored in the binary embedding file, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyedVectors {
    dimension: usize,
    order: Vec<String>,
    vectors: BTreeMap<String, Vec<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingFileError> {
        let end = self.pos.checked_add(n).ok_or(EmbeddingFileError::TruncatedFile)?;
        let slice = self.bytes.get(self.pos..end).ok_or(EmbeddingFileError::TruncatedFile)?;
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, EmbeddingFileError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, EmbeddingFileError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl KeyedVectors {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, order: Vec::new(), vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<(), EmbeddingFileError> {
        let key = key.into();
        if vector.len() != self.dimension {
            return Err(EmbeddingFileError::DimensionMismatch { key, expected: self.dimension, found: vector.len() });
        }
        if key.len() > usize::from(u16::MAX) {
            return Err(EmbeddingFileError::KeyTooLong(key));
        }
        if self.vectors.contains_key(&key) {
            return Err(EmbeddingFileError::DuplicateKey(key));
        }
        self.order.push(key.clone());
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EmbeddingFileError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| EmbeddingFileError::BadMagic)? != EMBEDDING_MAGIC {
            return Err(EmbeddingFileError::BadMagic);
        }
        let version = r.u16()?;
        if version != EMBEDDING_VERSION {
            return Err(EmbeddingFileError::BadVersion(version));
        }
        let dimension = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut out = Self::new(dimension);
        for _ in 0..count {
            let key_len = usize::from(r.u16()?);
            let key = core::str::from_utf8(r.take(key_len)?).map_err(|_| EmbeddingFileError::BadKey)?;
            let raw = r.take(dimension.checked_mul(4).ok_or(EmbeddingFileError::TruncatedFile)?)?;
            let vector = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            out.insert(key, vector)?;
        }
        if r.pos != bytes.len() {
            return Err(EmbeddingFileError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(out)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for key in &self.order {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in &self.vectors[key] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Exact-key lookup into a loaded embedding file.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    vectors: KeyedVectors,
}

impl FileEmbedder {
    pub fn new(vectors: KeyedVectors) -> Self {
        Self { vectors }
    }

    pub fn vectors(&self) -> &KeyedVectors {
        &self.vectors
    }

    pub fn lookup(&self, key: &str) -> Option<EmbeddingVector> {
        self.vectors
            .get(key)
            .map(|v| EmbeddingVector::new(v.iter().map(|x| f64::from(*x)).collect(), "file"))
    }
}

impl Embedder for FileEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        self.lookup(text).ok_or_else(|| GatewayError::UnknownKey(text.into()))
    }

    fn dimension(&self) -> usize {
        self.vectors.dimension()
    }
}

/// File lookup first, hash embedding for keys the file does not carry.
#[derive(Debug, Clone)]
pub struct LayeredEmbedder {
    file: FileEmbedder,
    fallback: HashEmbedder,
}

impl LayeredEmbedder {
    pub fn new(file: FileEmbedder, fallback: HashEmbedder) -> Result<Self, GatewayError> {
        if file.dimension() != fallback.dimension() {
            return Err(GatewayError::DimensionMismatch { expected: file.dimension(), found: fallback.dimension() });
        }
        Ok(Self { file, fallback })
    }
}

impl Embedder for LayeredEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        match self.file.embed(text) {
            Err(GatewayError::UnknownKey(_)) => self.fallback.embed(text),
            other => other,
        }
    }

    fn dimension(&self) -> usize {
        self.file.dimension()
    }
}

/// Embeds `text` and checks the result against the expected dimension.
pub fn embed_checked(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, GatewayError> {
    let v = embedder.embed(text)?;
    if v.dim() != embedder.dimension() {
        return Err(GatewayError::DimensionMismatch { expected: embedder.dimension(), found: v.dim() });
    }
    if !v.is_finite() {
        return Err(GatewayError::Malformed(format!("non-finite embedding for {text:?}")));
    }
    Ok(v)
}

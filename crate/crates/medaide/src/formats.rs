//! Loaders for the on-disk formats: grammar text, JSONL lexicons, rule sets,
//! taxonomies, exemplars, corpora, benchmarks and mock scripts, plan JSON,
//! template directories and the binary embedding file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use medaide_core::gateway::{EmbeddingFileError, KeyedVectors, ScriptRule};
use medaide_core::grammar::{normalize_grammar, parse_grammar_text, Grammar, GrammarError, Lexicon};
use medaide_core::intent::{Intent, IntentTaxonomy};
use medaide_core::protocol::{Role, StagePlan, StageSpec, TemplateError, TemplateSet};
use medaide_core::retrieval::{CorpusDocument, Stopwords};
use medaide_core::standardizer::{ElementKind, ElementLexicon, RewriteRule, RuleSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Grammar { path: PathBuf, source: GrammarError },
    #[error("{}: {source}", path.display())]
    Template { path: PathBuf, source: TemplateError },
    #[error("{}: {source}", path.display())]
    Embedding { path: PathBuf, source: EmbeddingFileError },
}

fn invalid(path: &Path, message: impl ToString) -> FormatError {
    FormatError::Invalid { path: path.to_path_buf(), message: message.to_string() }
}

fn at_line(path: &Path, line: usize, message: impl ToString) -> FormatError {
    FormatError::Line { path: path.to_path_buf(), line, message: message.to_string() }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

/// Parses one JSON value per non-blank line, keeping 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| at_line(path, i + 1, e))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FormatError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| invalid(path, e))?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let io = |source| FormatError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_grammar(path: &Path) -> Result<Grammar, FormatError> {
    let grammar = |source| FormatError::Grammar { path: path.to_path_buf(), source };
    let raw = parse_grammar_text(&read_text(path)?).map_err(grammar)?;
    normalize_grammar(&raw).map_err(grammar)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconEntry {
    surface: String,
    class: String,
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon, FormatError> {
    let mut lex = Lexicon::new();
    for (line, e) in read_jsonl::<LexiconEntry>(path)? {
        if e.surface.trim().is_empty() || e.class.trim().is_empty() {
            return Err(at_line(path, line, "surface and class must be non-empty"));
        }
        lex.insert(&e.surface, &e.class);
    }
    Ok(lex)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementEntry {
    surface: String,
    kind: ElementKind,
}

pub fn load_element_lexicon(path: &Path) -> Result<ElementLexicon, FormatError> {
    let mut lex = ElementLexicon::new();
    for (line, e) in read_jsonl::<ElementEntry>(path)? {
        if e.surface.trim().is_empty() {
            return Err(at_line(path, line, "empty surface"));
        }
        lex.insert(&e.surface, e.kind);
    }
    Ok(lex)
}

pub fn load_rules(path: &Path) -> Result<RuleSet, FormatError> {
    let entries = read_jsonl::<RewriteRule>(path)?;
    let mut ids = BTreeSet::new();
    for (line, r) in &entries {
        if !ids.insert(r.id.clone()) {
            return Err(at_line(path, *line, format!("duplicate rule id {:?}", r.id)));
        }
    }
    RuleSet::new(entries.into_iter().map(|(_, r)| r).collect()).map_err(|e| invalid(path, e))
}

pub fn load_taxonomy(path: &Path) -> Result<IntentTaxonomy, FormatError> {
    let intents: Vec<Intent> = read_jsonl::<Intent>(path)?.into_iter().map(|(_, i)| i).collect();
    IntentTaxonomy::new(intents).map_err(|e| invalid(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exemplar {
    pub key: String,
    pub text: String,
}

/// `(key, text)` pairs; for prototypes the key is an intent id.
pub fn load_exemplars(path: &Path) -> Result<Vec<(String, String)>, FormatError> {
    let mut out = Vec::new();
    for (line, e) in read_jsonl::<Exemplar>(path)? {
        if e.text.trim().is_empty() {
            return Err(at_line(path, line, format!("empty exemplar text for {:?}", e.key)));
        }
        out.push((e.key, e.text));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(default)]
    pub description: String,
    pub stages: Vec<StageSpec>,
}

pub fn load_plan(path: &Path, taxonomy: &IntentTaxonomy) -> Result<StagePlan, FormatError> {
    let file: PlanFile = serde_json::from_str(&read_text(path)?).map_err(|e| invalid(path, e))?;
    StagePlan::new(file.stages, taxonomy).map_err(|e| invalid(path, e))
}

/// Reads a template directory. File names select the slot:
/// `synthesize.txt`, `default.<role>.txt`, or `<stage>.<role>.txt` with
/// role one of main, supporter, integrate. Missing files keep the built-in
/// templates.
pub fn load_templates(dir: &Path) -> Result<TemplateSet, FormatError> {
    let mut set = TemplateSet::default();
    let entries = fs::read_dir(dir).map_err(|source| FormatError::Io { path: dir.to_path_buf(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = read_text(&path)?;
        let template = |source| FormatError::Template { path: path.clone(), source };
        if stem == "synthesize" {
            set.set_synthesize(&text).map_err(template)?;
            continue;
        }
        let (stage, role) = stem.rsplit_once('.').ok_or_else(|| invalid(&path, "expected <stage>.<role>.txt"))?;
        let role = Role::parse(role).ok_or_else(|| invalid(&path, format!("unknown role {role:?}")))?;
        if stage == "default" {
            set.set_default(role, &text).map_err(template)?;
        } else {
            set.set(stage, role, &text).map_err(template)?;
        }
    }
    Ok(set)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusEntry {
    id: String,
    #[serde(default)]
    title: String,
    body: String,
    #[serde(default)]
    tags: Vec<String>,
}

/// Reads a corpus file, rejecting duplicate ids and empty bodies with the
/// offending line.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDocument>, FormatError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, e) in read_jsonl::<CorpusEntry>(path)? {
        if e.id.trim().is_empty() {
            return Err(at_line(path, line, "empty id"));
        }
        if !seen.insert(e.id.clone()) {
            return Err(at_line(path, line, format!("duplicate id {:?}", e.id)));
        }
        if e.body.trim().is_empty() {
            return Err(at_line(path, line, format!("document {:?} has an empty body", e.id)));
        }
        let mut doc = CorpusDocument::new(&e.id, &e.title, &e.body);
        doc.tags = e.tags;
        out.push(doc);
    }
    Ok(out)
}

pub fn load_stopwords(path: &Path) -> Result<Stopwords, FormatError> {
    Ok(Stopwords::from_lines(&read_text(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkInstance {
    pub id: String,
    pub query: String,
    pub reference: String,
    pub intents: Vec<String>,
    pub stage: String,
}

pub fn load_benchmark(path: &Path, taxonomy: &IntentTaxonomy) -> Result<Vec<BenchmarkInstance>, FormatError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, b) in read_jsonl::<BenchmarkInstance>(path)? {
        if !seen.insert(b.id.clone()) {
            return Err(at_line(path, line, format!("duplicate instance id {:?}", b.id)));
        }
        if b.reference.trim().is_empty() {
            return Err(at_line(path, line, "empty reference"));
        }
        if let Some(unknown) = b.intents.iter().find(|i| taxonomy.position(i).is_none()) {
            return Err(at_line(path, line, format!("unknown intent {unknown:?}")));
        }
        out.push(b);
    }
    Ok(out)
}

/// Mock script: JSONL `{"match": str | [str], "reply": str}`, first match
/// wins.
pub fn load_script(path: &Path) -> Result<Vec<ScriptRule>, FormatError> {
    Ok(read_jsonl::<ScriptRule>(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn load_embedding_file(path: &Path) -> Result<KeyedVectors, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    KeyedVectors::decode(&bytes).map_err(|source| FormatError::Embedding { path: path.to_path_buf(), source })
}

pub fn write_embedding_file(path: &Path, vectors: &KeyedVectors) -> Result<(), FormatError> {
    write_atomic(path, &vectors.encode())
}

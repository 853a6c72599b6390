//! On-disk patient profiles and the session trace log.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use medaide_core::protocol::{PatientProfile, ProtocolTrace, TraceEvent};
use thiserror::Error;

use crate::formats::{read_jsonl, read_text, write_atomic, FormatError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("patient {0:?} not found")]
    NotFound(String),
    #[error("invalid patient id {0:?}: use 1-64 ASCII letters, digits, '-' or '_'")]
    InvalidId(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// One JSON document per patient id.
#[derive(Debug)]
pub struct ProfileStore {
    dir: PathBuf,
    write: Mutex<()>,
}

impl ProfileStore {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), write: Mutex::new(()) }
    }

    fn path(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    pub fn get(&self, id: &str) -> Result<PatientProfile, StoreError> {
        let path = self.path(id)?;
        if !path.exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let text = read_text(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| FormatError::Invalid { path: path.clone(), message: e.to_string() }.into())
    }

    pub fn upsert(&self, profile: &PatientProfile) -> Result<(), StoreError> {
        let path = self.path(&profile.id)?;
        let mut text = serde_json::to_string_pretty(profile)
            .map_err(|e| FormatError::Invalid { path: path.clone(), message: e.to_string() })?;
        text.push('\n');
        let _guard = self.write.lock().expect("profile store lock");
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }

    pub fn ids(&self) -> Result<Vec<String>, StoreError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(FormatError::Io { path: self.dir.clone(), source }.into()),
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// Append-only JSONL log of trace events from any number of sessions.
#[derive(Debug)]
pub struct TraceStore {
    path: PathBuf,
    write: Mutex<()>,
}

impl TraceStore {
    pub fn new(path: &Path) -> Self {
        Self { path: path.to_path_buf(), write: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, trace: &ProtocolTrace) -> Result<(), StoreError> {
        let io = |source| FormatError::Io { path: self.path.clone(), source };
        let _guard = self.write.lock().expect("trace store lock");
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        file.write_all(trace.to_jsonl().as_bytes()).map_err(io)?;
        Ok(())
    }

    /// Events of one session in log order, or every event when `session`
    /// is `None`.
    pub fn events(&self, session: Option<&str>) -> Result<Vec<TraceEvent>, StoreError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_jsonl::<TraceEvent>(&self.path)?
            .into_iter()
            .map(|(_, e)| e)
            .filter(|e| session.is_none_or(|s| e.session == s))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use medaide_core::protocol::{EventKind, VisitRecord};

    #[test]
    fn profile_round_trip_and_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::new(&dir.path().join("profiles"));
        assert!(matches!(store.get("p1"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.get("../etc"), Err(StoreError::InvalidId(_))));
        let mut p = PatientProfile::new("p1");
        p.allergies.push("penicillin".into());
        p.visits.push(VisitRecord { date: "turn 1".into(), summary: "fever".into() });
        store.upsert(&p).unwrap();
        assert_eq!(store.get("p1").unwrap(), p);
        p.medications.push("aspirin".into());
        store.upsert(&p).unwrap();
        assert_eq!(store.get("p1").unwrap(), p);
        assert_eq!(store.ids().unwrap(), ["p1"]);
    }

    #[test]
    fn interleaved_upserts_are_all_readable() {
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::new(dir.path());
        std::thread::scope(|s| {
            for t in 0..4 {
                let store = &store;
                s.spawn(move || {
                    for i in (t..100).step_by(4) {
                        let mut p = PatientProfile::new(&format!("p{i:03}"));
                        p.demographics.insert("age".into(), i.to_string());
                        store.upsert(&p).unwrap();
                    }
                });
            }
        });
        for i in 0..100 {
            assert_eq!(store.get(&format!("p{i:03}")).unwrap().demographics["age"], i.to_string());
        }
        assert_eq!(store.ids().unwrap().len(), 100);
    }

    #[test]
    fn trace_store_filters_by_session() {
        let dir = tempfile::tempdir().unwrap();
        let store = TraceStore::new(&dir.path().join("t/trace.jsonl"));
        assert!(store.events(None).unwrap().is_empty());
        for s in ["s-a", "s-b", "s-a"] {
            let mut t = ProtocolTrace::new(s);
            t.record("diagnosis", EventKind::McCall, "a2", "h".into(), "r");
            store.append(&t).unwrap();
        }
        assert_eq!(store.events(Some("s-a")).unwrap().len(), 2);
        assert_eq!(store.events(None).unwrap().len(), 3);
    }
}

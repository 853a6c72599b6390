use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    McCall,
    SupporterCall,
    Integrate,
    Synthesize,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::McCall => "mc-call",
            EventKind::SupporterCall => "supporter-call",
            EventKind::Integrate => "integrate",
            EventKind::Synthesize => "synthesize",
        }
    }
}

/// Agent id recorded for steps computed locally instead of by a model.
pub const LOCAL_AGENT: &str = "local";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub session: String,
    pub stage: String,
    pub kind: EventKind,
    pub agent: String,
    pub request_hash: String,
    pub response_hash: String,
}

/// Append-only audit log of one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub session: String,
    pub events: Vec<TraceEvent>,
}

impl ProtocolTrace {
    pub fn new(session: &str) -> Self {
        Self { session: session.to_string(), events: Vec::new() }
    }

    pub fn record(&mut self, stage: &str, kind: EventKind, agent: &str, request_hash: String, response: &str) -> u64 {
        let seq = self.events.last().map_or(1, |e| e.seq + 1);
        self.events.push(TraceEvent {
            seq,
            session: self.session.clone(),
            stage: stage.to_string(),
            kind,
            agent: agent.to_string(),
            request_hash,
            response_hash: sha256_hex(response.as_bytes()),
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One compact JSON object per line, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of [`Self::to_jsonl`].
    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceViolation {
    #[error("sequence number {seq} at position {index} does not increase")]
    Sequence { index: usize, seq: u64 },
    #[error("event {index}: expected {expected}, found {found}")]
    Unexpected { index: usize, expected: &'static str, found: &'static str },
    #[error("event {index} belongs to stage {found:?} inside stage {expected:?}")]
    StageSwitch { index: usize, expected: String, found: String },
    #[error("expected {expected} events, found {found}")]
    Length { expected: usize, found: usize },
    #[error("event {index} has session {found:?}, not {expected:?}")]
    Session { index: usize, expected: String, found: String },
}

/// Checks `(mc-call supporter-call{agents−1} integrate){stages} synthesize`
/// with strictly increasing sequence numbers and one session throughout.
pub fn validate_trace(trace: &ProtocolTrace, agents: usize, stages: usize) -> Result<(), TraceViolation> {
    let per_stage = agents + 1;
    let expected = stages * per_stage + 1;
    let ev = &trace.events;
    for (i, w) in ev.windows(2).enumerate() {
        if w[1].seq <= w[0].seq {
            return Err(TraceViolation::Sequence { index: i + 1, seq: w[1].seq });
        }
    }
    for (i, e) in ev.iter().enumerate() {
        if e.session != trace.session {
            return Err(TraceViolation::Session { index: i, expected: trace.session.clone(), found: e.session.clone() });
        }
    }
    for (i, e) in ev.iter().enumerate() {
        let want = if i + 1 == expected {
            EventKind::Synthesize
        } else {
            match i % per_stage {
                0 => EventKind::McCall,
                k if k == per_stage - 1 => EventKind::Integrate,
                _ => EventKind::SupporterCall,
            }
        };
        if i >= expected || e.kind != want {
            let expected_name = if i >= expected { "end of trace" } else { want.as_str() };
            return Err(TraceViolation::Unexpected { index: i, expected: expected_name, found: e.kind.as_str() });
        }
        if i + 1 < expected && i % per_stage != 0 {
            let head = &ev[i - i % per_stage];
            if head.stage != e.stage {
                return Err(TraceViolation::StageSwitch { index: i, expected: head.stage.clone(), found: e.stage.clone() });
            }
        }
    }
    if ev.len() != expected {
        return Err(TraceViolation::Length { expected, found: ev.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(shape: &[(&str, EventKind)]) -> ProtocolTrace {
        let mut t = ProtocolTrace::new("s");
        for (stage, kind) in shape {
            t.record(stage, *kind, "a", String::new(), "");
        }
        t
    }

    #[test]
    fn accepts_well_formed() {
        use EventKind::*;
        let t = build(&[("x", McCall), ("x", SupporterCall), ("x", Integrate), ("y", McCall), ("y", SupporterCall), ("y", Integrate), ("", Synthesize)]);
        assert_eq!(validate_trace(&t, 2, 2), Ok(()));
        assert!(t.to_jsonl().lines().count() == 7);
    }

    #[test]
    fn rejects_misordered_or_short() {
        use EventKind::*;
        let t = build(&[("x", SupporterCall), ("x", McCall), ("x", Integrate), ("", Synthesize)]);
        assert!(matches!(validate_trace(&t, 2, 1), Err(TraceViolation::Unexpected { index: 0, .. })));
        let t = build(&[("x", McCall), ("x", SupporterCall), ("x", Integrate)]);
        assert_eq!(validate_trace(&t, 2, 1), Err(TraceViolation::Length { expected: 4, found: 3 }));
        let t = build(&[("x", McCall), ("y", SupporterCall), ("x", Integrate), ("", Synthesize)]);
        assert!(matches!(validate_trace(&t, 2, 1), Err(TraceViolation::StageSwitch { index: 1, .. })));
        let mut t = build(&[("x", McCall), ("x", SupporterCall), ("x", Integrate), ("", Synthesize)]);
        t.events[2].seq = 1;
        assert!(matches!(validate_trace(&t, 2, 1), Err(TraceViolation::Sequence { index: 2, .. })));
    }
}

//! Rotation collaboration: each selected stage is led by its main-contact
//! agent, every other agent contributes, the lead integrates, and the stage
//! outputs are synthesized into one reply.

mod plan;
mod profile;
mod rotation;
mod template;
mod trace;

pub use plan::{plan_stages, PlanError, StagePlan, StageSpec, MAX_STAGES, MIN_STAGES};
pub use profile::{PatientProfile, VisitRecord};
pub use rotation::{
    run_session, run_stage, stage_knowledge, synthesize, with_headers, Contribution, KnowledgeBase, ProtocolContext,
    ProtocolError, ProtocolSettings, SessionFailure, SessionOutcome, Snippet, StageInput, StageKnowledge, StageOutput,
    SynthesisMode, DEFAULT_CONTEXT_LIMIT, FINAL_STAGE,
};
pub use template::{
    Bindings, Placeholder, Role, Template, TemplateError, TemplateSet, DEFAULT_INTEGRATE, DEFAULT_MAIN,
    DEFAULT_SUPPORTER, DEFAULT_SYNTHESIZE,
};
pub use trace::{validate_trace, EventKind, ProtocolTrace, TraceEvent, TraceViolation, LOCAL_AGENT};

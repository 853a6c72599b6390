use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plan::{StagePlan, StageSpec};
use super::profile::PatientProfile;
use super::template::{Bindings, Placeholder, Role, TemplateSet};
use super::trace::{EventKind, ProtocolTrace, LOCAL_AGENT};
use crate::gateway::{embed_checked, ChatBackend, ChatMessage, ChatRequest, Embedder, GatewayError};
use crate::retrieval::{DocumentStore, MatchMode, RetrievalError, RetrievalResult, StoreKind, DEFAULT_TAU};
use crate::standardizer::ClinicalElementSet;
use crate::text::sha256_hex;

pub const DEFAULT_CONTEXT_LIMIT: usize = 5;

/// Stage id recorded on the synthesis event.
pub const FINAL_STAGE: &str = "final";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("{kind} by {agent} in stage {stage:?} failed: {source}")]
    Call { stage: String, agent: String, kind: &'static str, source: GatewayError },
    #[error("knowledge retrieval for stage {stage:?}: {source}")]
    Retrieval { stage: String, source: RetrievalError },
    #[error("no stage was selected")]
    NoStages,
}

/// The knowledge stores agents can search.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    stores: BTreeMap<StoreKind, DocumentStore>,
    tau: BTreeMap<StoreKind, f64>,
    pub default_tau: f64,
    pub mode: MatchMode,
    /// Documents per store shown in prompts.
    pub context_limit: usize,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self { default_tau: DEFAULT_TAU, context_limit: DEFAULT_CONTEXT_LIMIT, ..Self::default() }
    }

    pub fn insert(&mut self, store: DocumentStore) {
        let kind = store.kind().expect("knowledge stores carry a kind");
        self.stores.insert(kind, store);
    }

    pub fn set_tau(&mut self, kind: StoreKind, tau: f64) {
        self.tau.insert(kind, tau);
    }

    pub fn tau(&self, kind: StoreKind) -> f64 {
        self.tau.get(&kind).copied().unwrap_or(self.default_tau)
    }

    pub fn get(&self, kind: StoreKind) -> Option<&DocumentStore> {
        self.stores.get(&kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageKnowledge {
    pub store: StoreKind,
    pub result: RetrievalResult,
    /// The first documents of `result.final_ids`, for prompting.
    pub snippets: Vec<Snippet>,
}

/// Hybrid retrieval over every store attached to `spec`. Keyword probes are
/// the query and each element surface; for the medications store the
/// profile's allergies are probed too, so entries naming them surface.
pub fn stage_knowledge(
    spec: &StageSpec,
    query: &str,
    elements: &ClinicalElementSet,
    profile: Option<&PatientProfile>,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
) -> Result<Vec<StageKnowledge>, ProtocolError> {
    let err = |source| ProtocolError::Retrieval { stage: spec.id.clone(), source };
    let mut out = Vec::new();
    let attached: Vec<StoreKind> = spec.stores.iter().copied().filter(|k| kb.get(*k).is_some()).collect();
    if attached.is_empty() {
        return Ok(out);
    }
    let qvec = embed_checked(embedder, query).map_err(|e| err(RetrievalError::Gateway(e)))?;
    for kind in attached {
        let store = kb.get(kind).expect("filtered above");
        let mut probes: Vec<&str> = vec![query];
        probes.extend(elements.surfaces());
        if kind == StoreKind::Medications {
            if let Some(p) = profile {
                probes.extend(p.allergies.iter().map(String::as_str));
            }
        }
        let result = store.hybrid_retrieve(&probes, &qvec, kb.tau(kind), kb.mode).map_err(err)?;
        let snippets = result
            .final_ids
            .iter()
            .take(kb.context_limit)
            .filter_map(|id| store.get(id))
            .map(|d| Snippet { id: d.id.clone(), title: d.title.clone(), body: d.body.clone() })
            .collect();
        out.push(StageKnowledge { store: kind, result, snippets });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageInput {
    pub query: String,
    pub elements: ClinicalElementSet,
    pub profile: Option<PatientProfile>,
    /// Final outputs of the stages already run, in execution order.
    pub prior_outputs: Vec<StageOutput>,
    pub knowledge: Vec<StageKnowledge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub agent: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage: String,
    pub agent: String,
    pub initial: String,
    /// One per supporter, in agent-id order.
    pub contributions: Vec<Contribution>,
    pub integrated: String,
    /// Sequence numbers of the stage's first and last trace events.
    pub span: (u64, u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthesisMode {
    /// One model call over all stage outputs.
    #[default]
    Model,
    /// Stage outputs under `## stage` headers, no model call.
    Headers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub model: String,
    /// When false, integration and synthesis are plain concatenation.
    pub decision_analysis: bool,
    pub synthesis: SynthesisMode,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self { model: "medaide-chat".into(), decision_analysis: true, synthesis: SynthesisMode::Model }
    }
}

fn none_if_empty(s: String) -> String {
    if s.is_empty() {
        "(none)".to_string()
    } else {
        s
    }
}

fn render_elements(e: &ClinicalElementSet) -> String {
    let lines: Vec<String> = e.elements.iter().map(|x| format!("- {}: {}", x.kind.as_str(), x.surface)).collect();
    none_if_empty(lines.join("\n"))
}

fn render_knowledge(k: &[StageKnowledge]) -> String {
    let mut lines = Vec::new();
    for sk in k {
        for s in &sk.snippets {
            lines.push(format!("- [{}] {} {}: {}", sk.store.as_str(), s.id, s.title, s.body));
        }
    }
    none_if_empty(lines.join("\n"))
}

/// `## stage` sections separated by blank lines.
pub fn with_headers(outputs: &[StageOutput]) -> String {
    let parts: Vec<String> = outputs.iter().map(|o| format!("## {}\n{}", o.stage, o.integrated)).collect();
    parts.join("\n\n")
}

fn render_contributions(c: &[Contribution]) -> String {
    let parts: Vec<String> = c.iter().map(|x| format!("### {}\n{}", x.agent, x.text)).collect();
    none_if_empty(parts.join("\n\n"))
}

fn base_bindings(input: &StageInput) -> Bindings {
    let mut b = Bindings::default();
    b.set(Placeholder::Query, input.query.clone())
        .set(Placeholder::Elements, render_elements(&input.elements))
        .set(Placeholder::Context, render_knowledge(&input.knowledge))
        .set(Placeholder::PriorOutputs, none_if_empty(with_headers(&input.prior_outputs)))
        .set(Placeholder::Profile, input.profile.as_ref().map_or_else(|| "(none)".to_string(), PatientProfile::render));
    b
}

fn system_prompt(agent: &str, stage: &str, role: Role, lead: &str) -> String {
    match role {
        Role::Main => format!("You are {agent}, the lead agent of the {stage} stage of a medical consultation."),
        Role::Supporter => format!("You are {agent}, a supporting agent in the {stage} stage of a medical consultation led by {lead}."),
        Role::Integrate => format!("You are {agent}, the lead agent of the {stage} stage; combine your assessment with the team's contributions."),
    }
}

#[allow(clippy::too_many_arguments)]
fn call(
    backend: &dyn ChatBackend,
    settings: &ProtocolSettings,
    trace: &mut ProtocolTrace,
    stage: &str,
    kind: EventKind,
    agent: &str,
    system: String,
    user: String,
) -> Result<(String, u64), ProtocolError> {
    let req = ChatRequest::new(settings.model.clone(), vec![ChatMessage::system(system), ChatMessage::user(user)]);
    let reply = backend.chat(&req).map_err(|source| ProtocolError::Call {
        stage: stage.to_string(),
        agent: agent.to_string(),
        kind: kind.as_str(),
        source,
    })?;
    let seq = trace.record(stage, kind, agent, req.hash(), &reply.content);
    Ok((reply.content, seq))
}

/// Runs one stage: the lead's initial output, one call per supporter with
/// that output embedded verbatim, then integration.
pub fn run_stage(
    plan: &StagePlan,
    stage: usize,
    input: &StageInput,
    templates: &TemplateSet,
    backend: &dyn ChatBackend,
    settings: &ProtocolSettings,
    trace: &mut ProtocolTrace,
) -> Result<StageOutput, ProtocolError> {
    let spec = &plan.stages()[stage];
    let (sid, lead) = (spec.id.as_str(), spec.agent.as_str());
    let mut b = base_bindings(input);

    let main = templates.get(sid, Role::Main).render(&b);
    let (initial, first) = call(backend, settings, trace, sid, EventKind::McCall, lead, system_prompt(lead, sid, Role::Main, lead), main)?;

    b.set(Placeholder::InitialOutput, initial.clone());
    let mut contributions = Vec::new();
    for agent in plan.supporters(stage) {
        let user = templates.get(sid, Role::Supporter).render(&b);
        let (text, _) = call(backend, settings, trace, sid, EventKind::SupporterCall, agent, system_prompt(agent, sid, Role::Supporter, lead), user)?;
        contributions.push(Contribution { agent: agent.to_string(), text });
    }

    let rendered = render_contributions(&contributions);
    let (integrated, last) = if settings.decision_analysis {
        b.set(Placeholder::Contributions, rendered);
        let user = templates.get(sid, Role::Integrate).render(&b);
        call(backend, settings, trace, sid, EventKind::Integrate, lead, system_prompt(lead, sid, Role::Integrate, lead), user)?
    } else {
        let text = format!("{initial}\n\n{rendered}");
        let seq = trace.record(sid, EventKind::Integrate, LOCAL_AGENT, sha256_hex(text.as_bytes()), &text);
        (text, seq)
    };
    Ok(StageOutput { stage: sid.to_string(), agent: lead.to_string(), initial, contributions, integrated, span: (first, last) })
}

const SYNTHESIS_SYSTEM: &str = "You are the coordinator of a medical consultation team. Merge the stage outputs into one reply for the patient.";

/// Merges every executed stage's output into the final reply.
pub fn synthesize(
    query: &str,
    outputs: &[StageOutput],
    templates: &TemplateSet,
    backend: &dyn ChatBackend,
    settings: &ProtocolSettings,
    trace: &mut ProtocolTrace,
) -> Result<String, ProtocolError> {
    if outputs.is_empty() {
        return Err(ProtocolError::NoStages);
    }
    let sections = with_headers(outputs);
    if settings.decision_analysis && settings.synthesis == SynthesisMode::Model {
        let mut b = Bindings::default();
        b.set(Placeholder::Query, query).set(Placeholder::PriorOutputs, sections);
        let user = templates.synthesize().render(&b);
        let (text, _) = call(backend, settings, trace, FINAL_STAGE, EventKind::Synthesize, "coordinator", SYNTHESIS_SYSTEM.to_string(), user)?;
        Ok(text)
    } else {
        trace.record(FINAL_STAGE, EventKind::Synthesize, LOCAL_AGENT, sha256_hex(sections.as_bytes()), &sections);
        Ok(sections)
    }
}

/// Everything a session needs besides the query-derived inputs.
pub struct ProtocolContext<'a> {
    pub plan: &'a StagePlan,
    pub templates: &'a TemplateSet,
    pub knowledge: &'a KnowledgeBase,
    pub backend: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
    pub settings: &'a ProtocolSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub outputs: Vec<StageOutput>,
    pub response: String,
    pub trace: ProtocolTrace,
    /// Knowledge retrieved per executed stage, in execution order.
    pub knowledge: Vec<Vec<StageKnowledge>>,
}

/// A failed session with the trace recorded up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFailure {
    pub error: ProtocolError,
    pub trace: ProtocolTrace,
}

/// Runs `stages` (plan indices, ascending) in order, feeding each stage the
/// outputs of those before it, then synthesizes.
pub fn run_session(
    ctx: &ProtocolContext<'_>,
    session: &str,
    stages: &[usize],
    query: &str,
    elements: &ClinicalElementSet,
    profile: Option<&PatientProfile>,
) -> Result<SessionOutcome, Box<SessionFailure>> {
    let mut trace = ProtocolTrace::new(session);
    if stages.is_empty() {
        return Err(Box::new(SessionFailure { error: ProtocolError::NoStages, trace }));
    }
    let mut outputs: Vec<StageOutput> = Vec::new();
    let mut knowledge = Vec::new();
    for &s in stages {
        let spec = &ctx.plan.stages()[s];
        let k = match stage_knowledge(spec, query, elements, profile, ctx.knowledge, ctx.embedder) {
            Ok(k) => k,
            Err(error) => return Err(Box::new(SessionFailure { error, trace })),
        };
        let input = StageInput {
            query: query.to_string(),
            elements: elements.clone(),
            profile: profile.cloned(),
            prior_outputs: outputs.clone(),
            knowledge: k.clone(),
        };
        match run_stage(ctx.plan, s, &input, ctx.templates, ctx.backend, ctx.settings, &mut trace) {
            Ok(out) => outputs.push(out),
            Err(error) => return Err(Box::new(SessionFailure { error, trace })),
        }
        knowledge.push(k);
    }
    match synthesize(query, &outputs, ctx.templates, ctx.backend, ctx.settings, &mut trace) {
        Ok(response) => Ok(SessionOutcome { outputs, response, trace, knowledge }),
        Err(error) => Err(Box::new(SessionFailure { error, trace })),
    }
}

#[cfg(test)]
mod tests {
    use super::super::trace::validate_trace;
    use super::*;
    use crate::gateway::{HashEmbedder, MockChat, MockFallback, ScriptRule};
    use crate::intent::IntentTaxonomy;
    use crate::retrieval::{CorpusDocument, Stopwords};

    fn setup() -> (StagePlan, TemplateSet, KnowledgeBase, HashEmbedder) {
        let t = IntentTaxonomy::default();
        (StagePlan::four_stage(&t).unwrap(), TemplateSet::default(), KnowledgeBase::new(), HashEmbedder::new(32, 9))
    }

    #[test]
    fn four_stages_make_twenty_one_events() {
        let (plan, templates, kb, e) = setup();
        let mock = MockChat::echo(12);
        let settings = ProtocolSettings::default();
        let ctx = ProtocolContext { plan: &plan, templates: &templates, knowledge: &kb, backend: &mock, embedder: &e, settings: &settings };
        let out = run_session(&ctx, "s-1", &[0, 1, 2, 3], "fever and cough", &ClinicalElementSet::default(), None).unwrap();
        assert_eq!(out.trace.len(), 21);
        assert_eq!(validate_trace(&out.trace, 4, 4), Ok(()));
        assert_eq!(out.outputs[2].contributions.len(), 3);
        for (i, o) in out.outputs.iter().enumerate() {
            assert_eq!(o.span.1 - o.span.0, 4, "stage {i}");
        }
    }

    /// Records every request it sees.
    struct Recorder(std::sync::Mutex<Vec<ChatRequest>>, MockChat);
    impl ChatBackend for Recorder {
        fn chat(&self, r: &ChatRequest) -> Result<crate::gateway::ChatReply, GatewayError> {
            self.0.lock().unwrap().push(r.clone());
            self.1.chat(r)
        }
    }

    #[test]
    fn supporters_see_initial_output_verbatim() {
        let (plan, templates, _, _) = setup();
        let rec = Recorder(Default::default(), MockChat::new(vec![ScriptRule::new(&["lead agent of the diagnosis"], "LEAD OUTPUT {x}\n  spaced")], MockFallback::Echo { max_words: 4 }));
        let settings = ProtocolSettings::default();
        let mut trace = ProtocolTrace::new("s");
        let input = StageInput { query: "rash".into(), elements: ClinicalElementSet::default(), profile: None, prior_outputs: vec![], knowledge: vec![] };
        let out = run_stage(&plan, 1, &input, &templates, &rec, &settings, &mut trace).unwrap();
        assert_eq!(out.initial, "LEAD OUTPUT {x}\n  spaced");
        let seen = rec.0.lock().unwrap();
        let supporters: Vec<&ChatRequest> = seen.iter().filter(|r| r.messages[0].content.contains("supporting agent")).collect();
        assert_eq!(supporters.len(), 3);
        assert!(supporters.iter().all(|r| r.messages[1].content.contains(&out.initial)));
    }

    #[test]
    fn gateway_failure_keeps_partial_trace() {
        let (plan, templates, kb, e) = setup();
        let mock = MockChat::new(vec![ScriptRule::new(&["lead agent of the pre-diagnosis"], "ok")], MockFallback::Miss);
        let settings = ProtocolSettings::default();
        let ctx = ProtocolContext { plan: &plan, templates: &templates, knowledge: &kb, backend: &mock, embedder: &e, settings: &settings };
        let fail = run_session(&ctx, "s", &[0, 1], "q", &ClinicalElementSet::default(), None).unwrap_err();
        assert_eq!(fail.trace.len(), 1);
        assert!(matches!(fail.error, ProtocolError::Call { kind: "supporter-call", .. }));
    }

    #[test]
    fn concatenation_mode_and_headers() {
        let (plan, templates, kb, e) = setup();
        let mock = MockChat::always("x");
        let settings = ProtocolSettings { decision_analysis: false, ..ProtocolSettings::default() };
        let ctx = ProtocolContext { plan: &plan, templates: &templates, knowledge: &kb, backend: &mock, embedder: &e, settings: &settings };
        let out = run_session(&ctx, "s", &[1, 3], "q", &ClinicalElementSet::default(), None).unwrap();
        assert_eq!(validate_trace(&out.trace, 4, 2), Ok(()));
        assert_eq!(out.trace.events.last().unwrap().agent, LOCAL_AGENT);
        let stage_text = "x\n\n### a1-pre-diagnosis\nx\n\n### a3-medicament\nx\n\n### a4-post-diagnosis\nx";
        assert_eq!(out.outputs[0].integrated, stage_text);
        assert!(out.response.starts_with("## diagnosis\n"));
        assert!(out.response.find("## diagnosis").unwrap() < out.response.find("## post-diagnosis").unwrap());
    }

    #[test]
    fn single_stage_headers_synthesis() {
        let (plan, templates, kb, e) = setup();
        let mock = MockChat::always("advice");
        let settings = ProtocolSettings { synthesis: SynthesisMode::Headers, ..ProtocolSettings::default() };
        let ctx = ProtocolContext { plan: &plan, templates: &templates, knowledge: &kb, backend: &mock, embedder: &e, settings: &settings };
        let out = run_session(&ctx, "s", &[2], "q", &ClinicalElementSet::default(), None).unwrap();
        assert_eq!(out.response, "## medicament\nadvice");
    }

    #[test]
    fn allergy_probe_reaches_medication_entry() {
        let (plan, _, mut kb, e) = setup();
        let docs = vec![
            CorpusDocument::new("m1", "Amoxicillin", "penicillin class antibiotic"),
            CorpusDocument::new("m2", "Paracetamol", "analgesic and antipyretic"),
        ];
        kb.insert(DocumentStore::build(Some(StoreKind::Medications), docs, Stopwords::default(), &e).unwrap());
        kb.set_tau(StoreKind::Medications, 1.0);
        let mut profile = PatientProfile::new("p1");
        profile.allergies.push("penicillin".into());
        let spec = &plan.stages()[2];
        let k = stage_knowledge(spec, "what can I take for a sore throat", &ClinicalElementSet::default(), Some(&profile), &kb, &e).unwrap();
        assert_eq!(k[0].result.final_ids, ["m1"]);
        let none = stage_knowledge(&plan.stages()[0], "q", &ClinicalElementSet::default(), None, &kb, &e).unwrap();
        assert!(none.is_empty());
    }
}

//! Stage selection against a set-intersection oracle, and the trace shape
//! of random sessions.

use std::collections::BTreeSet;

use medaide_core::gateway::{HashEmbedder, MockChat};
use medaide_core::intent::{IntentActivation, IntentTaxonomy};
use medaide_core::protocol::{
    plan_stages, run_session, validate_trace, KnowledgeBase, ProtocolContext, ProtocolSettings, StagePlan, StageSpec,
    TemplateSet,
};
use medaide_core::standardizer::ClinicalElementSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plan(rng: &mut ChaCha8Rng, taxonomy: &IntentTaxonomy) -> StagePlan {
    let k = rng.gen_range(2..=6);
    let mut ids: Vec<String> = taxonomy.ids().map(str::to_string).collect();
    ids.shuffle(rng);
    let mut stages: Vec<StageSpec> = (0..k)
        .map(|i| StageSpec { id: format!("stage-{i}"), agent: format!("agent-{}", k - i), intents: Vec::new(), stores: Vec::new() })
        .collect();
    for (j, id) in ids.into_iter().enumerate() {
        let s = if j < k { j } else { rng.gen_range(0..k) };
        stages[s].intents.push(id);
    }
    StagePlan::new(stages, taxonomy).unwrap()
}

fn activation(ids: Vec<String>) -> IntentActivation {
    IntentActivation { similarities: vec![], probabilities: vec![], activated: ids, threshold_used: 0.1, fallback_applied: false }
}

#[test]
fn selection_equals_intersection_oracle() {
    let taxonomy = IntentTaxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..500 {
        let plan = random_plan(&mut rng, &taxonomy);
        let mut ids: Vec<String> = taxonomy.ids().filter(|_| rng.gen_bool(0.2)).map(str::to_string).collect();
        if ids.is_empty() {
            ids.push(taxonomy.intents()[rng.gen_range(0..taxonomy.len())].id.clone());
        }
        let active: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let want: Vec<usize> = plan
            .stages()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.intents.iter().any(|i| active.contains(i.as_str())))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(plan_stages(&activation(ids), &plan), want);
        // every intent covered exactly once
        for id in taxonomy.ids() {
            assert_eq!(plan.stages().iter().filter(|s| s.intents.iter().any(|i| i == id)).count(), 1);
        }
    }
}

#[test]
fn random_sessions_follow_the_trace_grammar() {
    let taxonomy = IntentTaxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let templates = TemplateSet::default();
    let kb = KnowledgeBase::new();
    let embedder = HashEmbedder::new(16, 0);
    let backend = MockChat::echo(20);
    for trial in 0..60 {
        let plan = random_plan(&mut rng, &taxonomy);
        let settings = ProtocolSettings { decision_analysis: trial % 2 == 0, ..ProtocolSettings::default() };
        let stages: Vec<usize> = (0..plan.granularity()).filter(|_| rng.gen_bool(0.6)).collect();
        let stages = if stages.is_empty() { vec![0] } else { stages };
        let ctx = ProtocolContext { plan: &plan, templates: &templates, knowledge: &kb, backend: &backend, embedder: &embedder, settings: &settings };
        let out = run_session(&ctx, "s-test", &stages, "fever and cough", &ClinicalElementSet::default(), None).unwrap();
        assert_eq!(validate_trace(&out.trace, plan.granularity(), stages.len()), Ok(()), "trial {trial}");
        assert_eq!(out.outputs.len(), stages.len());
        for (p, o) in out.outputs.iter().enumerate() {
            assert_eq!(o.stage, plan.stages()[stages[p]].id);
            assert_eq!(o.contributions.len(), plan.granularity() - 1);
        }
    }
}

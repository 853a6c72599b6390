use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{IntentActivation, IntentTaxonomy, Stage};
use crate::retrieval::StoreKind;

pub const MIN_STAGES: usize = 2;
pub const MAX_STAGES: usize = 6;

/// One consultation stage: its lead agent, the intents it serves and the
/// knowledge stores it searches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: String,
    pub agent: String,
    pub intents: Vec<String>,
    #[serde(default)]
    pub stores: Vec<StoreKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("a plan needs between {MIN_STAGES} and {MAX_STAGES} stages, got {0}")]
    Granularity(usize),
    #[error("duplicate stage id {0:?}")]
    DuplicateStage(String),
    #[error("agent {0:?} leads more than one stage")]
    DuplicateAgent(String),
    #[error("intent {0:?} is not in the taxonomy")]
    UnknownIntent(String),
    #[error("intent {0:?} is covered by more than one stage")]
    DoublyCovered(String),
    #[error("intent {0:?} is covered by no stage")]
    Uncovered(String),
}

/// Ordered stages partitioning the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    stages: Vec<StageSpec>,
    #[serde(skip)]
    owner: BTreeMap<String, usize>,
}

impl StagePlan {
    pub fn new(stages: Vec<StageSpec>, taxonomy: &IntentTaxonomy) -> Result<Self, PlanError> {
        if !(MIN_STAGES..=MAX_STAGES).contains(&stages.len()) {
            return Err(PlanError::Granularity(stages.len()));
        }
        let mut ids = BTreeSet::new();
        let mut agents = BTreeSet::new();
        let mut owner = BTreeMap::new();
        for (i, s) in stages.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                return Err(PlanError::DuplicateStage(s.id.clone()));
            }
            if !agents.insert(s.agent.as_str()) {
                return Err(PlanError::DuplicateAgent(s.agent.clone()));
            }
            for intent in &s.intents {
                if taxonomy.position(intent).is_none() {
                    return Err(PlanError::UnknownIntent(intent.clone()));
                }
                if owner.insert(intent.clone(), i).is_some() {
                    return Err(PlanError::DoublyCovered(intent.clone()));
                }
            }
        }
        if let Some(missing) = taxonomy.ids().find(|id| !owner.contains_key(*id)) {
            return Err(PlanError::Uncovered(missing.to_string()));
        }
        Ok(Self { stages, owner })
    }

    /// The four-stage plan following the taxonomy's own stage labels.
    pub fn four_stage(taxonomy: &IntentTaxonomy) -> Result<Self, PlanError> {
        let stores = |s: Stage| match s {
            Stage::PreDiagnosis => alloc::vec![StoreKind::Guidelines],
            Stage::Diagnosis => alloc::vec![StoreKind::Cases],
            Stage::Medicament => alloc::vec![StoreKind::Medications],
            Stage::PostDiagnosis => alloc::vec![StoreKind::Cases, StoreKind::Medications],
        };
        let stages = Stage::ALL
            .iter()
            .enumerate()
            .map(|(i, &s)| StageSpec {
                id: s.as_str().to_string(),
                agent: alloc::format!("a{}-{}", i + 1, s.as_str()),
                intents: taxonomy.intents().iter().filter(|t| t.stage == s).map(|t| t.id.clone()).collect(),
                stores: stores(s),
            })
            .collect();
        Self::new(stages, taxonomy)
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn granularity(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, id: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.id == id)
    }

    /// Index of the stage covering `intent`.
    pub fn owner_of(&self, intent: &str) -> Option<usize> {
        self.owner.get(intent).copied()
    }

    /// Every agent id, sorted.
    pub fn agents(&self) -> Vec<&str> {
        let mut a: Vec<&str> = self.stages.iter().map(|s| s.agent.as_str()).collect();
        a.sort_unstable();
        a
    }

    /// All agents except the lead of `stage`, in agent-id order.
    pub fn supporters(&self, stage: usize) -> Vec<&str> {
        let lead = self.stages[stage].agent.as_str();
        self.agents().into_iter().filter(|a| *a != lead).collect()
    }
}

/// Stages whose intents intersect the activated set, in plan order.
pub fn plan_stages(activation: &IntentActivation, plan: &StagePlan) -> Vec<usize> {
    let hit: BTreeSet<usize> = activation.activated.iter().filter_map(|id| plan.owner_of(id)).collect();
    hit.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn activation(ids: &[&str]) -> IntentActivation {
        IntentActivation {
            similarities: vec![],
            probabilities: vec![],
            activated: ids.iter().map(|s| s.to_string()).collect(),
            threshold_used: 0.1,
            fallback_applied: false,
        }
    }

    #[test]
    fn default_plan_covers_everything() {
        let t = IntentTaxonomy::default();
        let p = StagePlan::four_stage(&t).unwrap();
        assert_eq!(p.granularity(), 4);
        assert_eq!(p.supporters(1), ["a1-pre-diagnosis", "a3-medicament", "a4-post-diagnosis"]);
    }

    #[test]
    fn selection_follows_plan_order() {
        let t = IntentTaxonomy::default();
        let p = StagePlan::four_stage(&t).unwrap();
        assert_eq!(plan_stages(&activation(&["diagnosis.disease_inquiry"]), &p), [1]);
        let all = activation(&[
            "post_diagnosis.care_support",
            "medicament.drug_interaction",
            "diagnosis.symptom_analysis",
            "pre_diagnosis.risk_assessment",
        ]);
        assert_eq!(plan_stages(&all, &p), [0, 1, 2, 3]);
    }

    #[test]
    fn coverage_errors() {
        let t = IntentTaxonomy::default();
        let mut stages = StagePlan::four_stage(&t).unwrap().stages().to_vec();
        let moved = stages[0].intents.pop().unwrap();
        assert_eq!(StagePlan::new(stages.clone(), &t), Err(PlanError::Uncovered(moved.clone())));
        stages[1].intents.push(moved.clone());
        stages[2].intents.push(moved.clone());
        assert_eq!(StagePlan::new(stages, &t), Err(PlanError::DoublyCovered(moved)));
        assert_eq!(StagePlan::new(vec![], &t), Err(PlanError::Granularity(0)));
    }
}

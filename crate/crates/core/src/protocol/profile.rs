use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub date: String,
    pub summary: String,
}

/// What the engine remembers about a patient between consultations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: String,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub allergies: Vec<String>,
    #[serde(default)]
    pub medications: Vec<String>,
    #[serde(default)]
    pub visits: Vec<VisitRecord>,
}

impl PatientProfile {
    pub fn new(id: &str) -> Self {
        Self { id: id.into(), ..Self::default() }
    }

    /// Plain-text summary used in prompts.
    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        lines.push(format!("id: {}", self.id));
        for (k, v) in &self.demographics {
            lines.push(format!("{k}: {v}"));
        }
        if !self.allergies.is_empty() {
            lines.push(format!("allergies: {}", self.allergies.join(", ")));
        }
        if !self.medications.is_empty() {
            lines.push(format!("medications: {}", self.medications.join(", ")));
        }
        for v in &self.visits {
            lines.push(format!("visit {}: {}", v.date, v.summary));
        }
        lines.join("\n")
    }
}

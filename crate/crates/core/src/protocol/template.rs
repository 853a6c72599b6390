use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The slots a prompt template may reference as `{{name}}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    Query,
    Elements,
    Context,
    PriorOutputs,
    InitialOutput,
    Contributions,
    Profile,
}

impl Placeholder {
    pub const ALL: [Placeholder; 7] = [
        Placeholder::Query,
        Placeholder::Elements,
        Placeholder::Context,
        Placeholder::PriorOutputs,
        Placeholder::InitialOutput,
        Placeholder::Contributions,
        Placeholder::Profile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Query => "query",
            Placeholder::Elements => "elements",
            Placeholder::Context => "context",
            Placeholder::PriorOutputs => "prior_outputs",
            Placeholder::InitialOutput => "initial_output",
            Placeholder::Contributions => "contributions",
            Placeholder::Profile => "profile",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Main,
    Supporter,
    Integrate,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Main, Role::Supporter, Role::Integrate];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Main => "main",
            Role::Supporter => "supporter",
            Role::Integrate => "integrate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unknown placeholder {{{{{0}}}}}")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
    #[error("supporter template for {0:?} lacks {{{{initial_output}}}}")]
    MissingInitialOutput(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(Placeholder),
}

/// A parsed prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut rest = text;
        let mut offset = 0;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or(TemplateError::Unterminated(offset + open))?;
            let name = after[..close].trim();
            let slot = Placeholder::parse(name).ok_or_else(|| TemplateError::UnknownPlaceholder(name.to_string()))?;
            pieces.push(Piece::Slot(slot));
            let consumed = open + 2 + close + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self { pieces })
    }

    pub fn uses(&self, p: Placeholder) -> bool {
        self.pieces.contains(&Piece::Slot(p))
    }

    pub fn render(&self, values: &Bindings) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(p) => out.push_str(values.get(*p)),
            }
        }
        out
    }
}

/// Values for every placeholder; unset slots render empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    values: BTreeMap<Placeholder, String>,
}

impl Bindings {
    pub fn set(&mut self, p: Placeholder, value: impl Into<String>) -> &mut Self {
        self.values.insert(p, value.into());
        self
    }

    pub fn get(&self, p: Placeholder) -> &str {
        self.values.get(&p).map(String::as_str).unwrap_or("")
    }
}

pub const DEFAULT_MAIN: &str = "Patient query: {{query}}\n\nClinical elements:\n{{elements}}\n\nPatient profile:\n{{profile}}\n\nRetrieved knowledge:\n{{context}}\n\nEarlier stage outputs:\n{{prior_outputs}}\n\nAs the lead of this stage, give your initial assessment.";
pub const DEFAULT_SUPPORTER: &str = "Patient query: {{query}}\n\nClinical elements:\n{{elements}}\n\nPatient profile:\n{{profile}}\n\nRetrieved knowledge:\n{{context}}\n\nEarlier stage outputs:\n{{prior_outputs}}\n\nInitial assessment from the stage lead:\n{{initial_output}}\n\nAdd what your specialty contributes to this assessment.";
pub const DEFAULT_INTEGRATE: &str = "Patient query: {{query}}\n\nYour initial assessment:\n{{initial_output}}\n\nContributions from the other agents:\n{{contributions}}\n\nIntegrate these into the final output of this stage.";
pub const DEFAULT_SYNTHESIZE: &str = "Patient query: {{query}}\n\nStage outputs:\n{{prior_outputs}}\n\nWrite the final consultation reply for the patient.";

/// Templates per (stage, role), with role-wide defaults, plus the synthesis
/// template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    defaults: BTreeMap<Role, Template>,
    overrides: BTreeMap<(String, Role), Template>,
    synthesize: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let parse = |t| Template::parse(t).expect("built-in template parses");
        let mut defaults = BTreeMap::new();
        defaults.insert(Role::Main, parse(DEFAULT_MAIN));
        defaults.insert(Role::Supporter, parse(DEFAULT_SUPPORTER));
        defaults.insert(Role::Integrate, parse(DEFAULT_INTEGRATE));
        Self { defaults, overrides: BTreeMap::new(), synthesize: parse(DEFAULT_SYNTHESIZE) }
    }
}

impl TemplateSet {
    /// Installs a template for one stage and role.
    pub fn set(&mut self, stage: &str, role: Role, text: &str) -> Result<(), TemplateError> {
        let t = Template::parse(text)?;
        if role == Role::Supporter && !t.uses(Placeholder::InitialOutput) {
            return Err(TemplateError::MissingInitialOutput(stage.to_string()));
        }
        self.overrides.insert((stage.to_string(), role), t);
        Ok(())
    }

    /// Replaces the role-wide default.
    pub fn set_default(&mut self, role: Role, text: &str) -> Result<(), TemplateError> {
        let t = Template::parse(text)?;
        if role == Role::Supporter && !t.uses(Placeholder::InitialOutput) {
            return Err(TemplateError::MissingInitialOutput("*".to_string()));
        }
        self.defaults.insert(role, t);
        Ok(())
    }

    pub fn set_synthesize(&mut self, text: &str) -> Result<(), TemplateError> {
        self.synthesize = Template::parse(text)?;
        Ok(())
    }

    pub fn get(&self, stage: &str, role: Role) -> &Template {
        self.overrides.get(&(stage.to_string(), role)).unwrap_or(&self.defaults[&role])
    }

    pub fn synthesize(&self) -> &Template {
        &self.synthesize
    }
}

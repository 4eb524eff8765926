//! Prompt templates shipped under `prompts/`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::shape::Shape;
use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ContentPrune,
    EntityExtract,
    EntityValidate,
    RelationExtract,
    RelationValidate,
    QueryDecompose,
    AnswerSynthesize,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::ContentPrune,
        TemplateId::EntityExtract,
        TemplateId::EntityValidate,
        TemplateId::RelationExtract,
        TemplateId::RelationValidate,
        TemplateId::QueryDecompose,
        TemplateId::AnswerSynthesize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ContentPrune => "content_prune",
            TemplateId::EntityExtract => "entity_extract",
            TemplateId::EntityValidate => "entity_validate",
            TemplateId::RelationExtract => "relation_extract",
            TemplateId::RelationValidate => "relation_validate",
            TemplateId::QueryDecompose => "query_decompose",
            TemplateId::AnswerSynthesize => "answer_synthesize",
        }
    }

    /// The slot that identifies what a request is about; mock fixtures
    /// may be keyed by its value.
    pub fn primary_slot(self) -> &'static str {
        match self {
            TemplateId::QueryDecompose | TemplateId::AnswerSynthesize => "question",
            _ => "section_id",
        }
    }

    fn source(self) -> &'static str {
        match self {
            TemplateId::ContentPrune => include_str!("../../prompts/content_prune.toml"),
            TemplateId::EntityExtract => include_str!("../../prompts/entity_extract.toml"),
            TemplateId::EntityValidate => include_str!("../../prompts/entity_validate.toml"),
            TemplateId::RelationExtract => include_str!("../../prompts/relation_extract.toml"),
            TemplateId::RelationValidate => include_str!("../../prompts/relation_validate.toml"),
            TemplateId::QueryDecompose => include_str!("../../prompts/query_decompose.toml"),
            TemplateId::AnswerSynthesize => include_str!("../../prompts/answer_synthesize.toml"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template {s:?}"))
    }
}

#[derive(Deserialize)]
struct TemplateFile {
    version: u32,
    system: String,
    user: String,
    schema: String,
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub version: u32,
    pub system_text: String,
    pub user_text: String,
    pub output_schema: Shape,
    pub schema_text: String,
    /// SHA-256 of the template file.
    pub checksum: String,
}

static SLOT: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap());

impl PromptTemplate {
    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = SLOT
            .captures_iter(&self.user_text)
            .map(|c| c[1].to_string())
            .collect();
        out.dedup();
        out
    }

    /// Fills every `{{slot}}`; unbound slots are an error.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, LlmError> {
        for slot in self.slots() {
            if !bindings.contains_key(&slot) {
                return Err(LlmError::MissingSlot {
                    template: self.id,
                    slot,
                });
            }
        }
        // single pass so slot values containing braces are left alone
        Ok(SLOT
            .replace_all(&self.user_text, |c: &regex::Captures| {
                bindings[&c[1]].clone()
            })
            .into_owned())
    }
}

/// The full set of templates.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

static BUILTIN: Lazy<PromptSet> = Lazy::new(|| {
    let templates = TemplateId::ALL
        .into_iter()
        .map(|id| {
            let source = id.source();
            let file: TemplateFile = toml::from_str(source)
                .unwrap_or_else(|e| panic!("prompt template {id} is invalid: {e}"));
            let output_schema = Shape::parse(&file.schema)
                .unwrap_or_else(|e| panic!("prompt template {id} schema is invalid: {e}"));
            let template = PromptTemplate {
                id,
                version: file.version,
                system_text: file.system.trim().to_string(),
                user_text: file.user.trim().to_string(),
                output_schema,
                schema_text: file.schema,
                checksum: hex::encode(Sha256::digest(source.as_bytes())),
            };
            (id, template)
        })
        .collect();
    PromptSet { templates }
});

impl PromptSet {
    pub fn builtin() -> &'static PromptSet {
        &BUILTIN
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Template name to checksum, for run reports and bundle manifests.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.templates
            .values()
            .map(|t| (t.id.to_string(), t.checksum.clone()))
            .collect()
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

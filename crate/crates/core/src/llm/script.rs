//! Scripted mock replies, written per section and per question instead of
//! per prompt.
//!
//! ```json
//! {
//!   "strict": true,
//!   "sections": {
//!     "1990.10(a)": {
//!       "entities": [["trench box", "Equipment"]],
//!       "triples": [["trench box", "protect_from", "cave-in"]],
//!       "references": ["1990.10(b)"]
//!     }
//!   },
//!   "questions": {
//!     "How does a trench box protect from cave-in?": {
//!       "entities": ["trench box", "cave-in"],
//!       "triples": [["trench box", "protect_from", "cave-in"]]
//!     }
//!   }
//! }
//! ```
//!
//! A section's extraction and validation replies are the same lists, so
//! validation is a fixed point. Without `sentences` the prune reply is the
//! section text split into sentences. A question without `relevant` gets no
//! synthesis fixture, so synthesis falls back to citing every provision it
//! is given; for that reason `strict` never covers synthesis.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    split_sentences, Gateway, LlmError, MockFixtures, MockProvider, ProviderConfig, TemplateId,
};
use crate::corpus::SectionNode;
use crate::section_id::{Depth, SectionId};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("mock script is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("mock script names section {0:?}, which is not a valid section id")]
    BadSectionId(String),
    #[error("mock script names section {0}, which is not in the corpus")]
    UnknownSection(SectionId),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionScript {
    pub sentences: Option<Vec<String>>,
    pub entities: Vec<(String, String)>,
    pub triples: Vec<(String, String, String)>,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestionScript {
    pub entities: Vec<String>,
    pub triples: Vec<(String, String, String)>,
    pub relevant: Option<Vec<String>>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub strict: bool,
    pub sections: BTreeMap<String, SectionScript>,
    pub questions: BTreeMap<String, QuestionScript>,
}

fn triples_json(triples: &[(String, String, String)]) -> Value {
    triples
        .iter()
        .map(|(h, r, t)| json!({"head": h, "relation": r, "tail": t}))
        .collect()
}

impl MockScript {
    pub fn read(path: &Path) -> Result<MockScript, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fixtures for every scripted section and question. Sections must be
    /// in `corpus`.
    pub fn compile(&self, corpus: &[SectionNode]) -> Result<MockFixtures, ScriptError> {
        let mut f = MockFixtures::new();
        for (raw, s) in &self.sections {
            let id = SectionId::parse_with(raw, Depth::Extended)
                .map_err(|_| ScriptError::BadSectionId(raw.clone()))?;
            let node = corpus
                .iter()
                .find(|n| n.id == id)
                .ok_or_else(|| ScriptError::UnknownSection(id.clone()))?;
            let key = id.to_string();
            let sentences = match &s.sentences {
                Some(list) => list.clone(),
                None => split_sentences(&node.full_text()),
            };
            f.insert_for_slot(
                TemplateId::ContentPrune,
                &key,
                json!({ "sentences": sentences }),
            );
            let entities: Value = s
                .entities
                .iter()
                .map(|(name, label)| json!({"name": name, "label": label}))
                .collect();
            f.insert_for_slot(
                TemplateId::EntityExtract,
                &key,
                json!({"entities": entities, "references": s.references}),
            );
            f.insert_for_slot(
                TemplateId::EntityValidate,
                &key,
                json!({ "entities": entities }),
            );
            let triples = triples_json(&s.triples);
            f.insert_for_slot(
                TemplateId::RelationExtract,
                &key,
                json!({ "triples": triples }),
            );
            f.insert_for_slot(
                TemplateId::RelationValidate,
                &key,
                json!({ "triples": triples }),
            );
        }
        for (question, q) in &self.questions {
            f.insert_for_slot(
                TemplateId::QueryDecompose,
                question,
                json!({"entities": q.entities, "triples": triples_json(&q.triples)}),
            );
            if let Some(relevant) = &q.relevant {
                let summary = q.summary.clone().unwrap_or_else(|| {
                    format!("The question is addressed by {}.", relevant.join(", "))
                });
                f.insert_for_slot(
                    TemplateId::AnswerSynthesize,
                    question,
                    json!({"relevant": relevant, "summary": summary}),
                );
            }
        }
        Ok(f)
    }

    /// A mock provider answering from this script.
    pub fn provider(
        &self,
        dim: usize,
        corpus: &[SectionNode],
    ) -> Result<MockProvider, ScriptError> {
        let mut mock = MockProvider::new(dim).with_fixtures(self.compile(corpus)?);
        if self.strict {
            mock = mock.strict_for(
                TemplateId::ALL
                    .into_iter()
                    .filter(|t| *t != TemplateId::AnswerSynthesize),
            );
        }
        Ok(mock)
    }

    /// A gateway over [`MockScript::provider`].
    pub fn gateway(
        &self,
        config: ProviderConfig,
        corpus: &[SectionNode],
    ) -> Result<Gateway, ScriptError> {
        config.validate()?;
        let mock = self.provider(config.embedding_dim, corpus)?;
        Ok(Gateway::new(Arc::new(mock), config)?)
    }
}

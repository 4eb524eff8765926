//! Per-section extraction of entities, relation triples and references.
//!
//! Each section runs five model stages in order: prune, extract entities,
//! validate entities, extract relations, validate relations. Model output
//! is never trusted as-is: pruned text that drops a section reference or
//! introduces new words is replaced by the original sentences, entity
//! names must occur in the section text, and triples must join two of the
//! section's validated entities.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{detect_cross_references, SectionNode};
use crate::llm::{estimate_tokens, split_sentences, Gateway, LlmError, TemplateId};
use crate::refiner::{singularize, Lemmatizer};
use crate::section_id::{Depth, SectionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prune,
    ExtractEntities,
    ValidateEntities,
    ExtractRelations,
    ValidateRelations,
}

#[derive(Debug, Error)]
#[error("section {section_id} failed at {stage:?}: {source}")]
pub struct SectionExtractionFailed {
    pub section_id: SectionId,
    pub stage: Stage,
    #[source]
    pub source: LlmError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngConfig {
    /// Validation passes per validated stage, 1 to 3.
    pub validation_passes: u8,
    /// Section texts estimated above this many tokens are pruned in chunks.
    pub chunk_tokens: usize,
}

impl Default for EngConfig {
    fn default() -> Self {
        Self {
            validation_passes: 1,
            chunk_tokens: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedSection {
    pub section_id: SectionId,
    pub sentences: Vec<String>,
    pub retained_refs: Vec<SectionId>,
}

/// One entity-extraction reply after admission checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractedEntities {
    pub entities: Vec<EntityDraft>,
    pub references: Vec<SectionId>,
    pub dropped: Vec<String>,
    /// Reference strings that are not section ids.
    pub unparsed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDraft {
    pub name: String,
    pub label: String,
    pub section_id: SectionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleDraft {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub section_id: SectionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionExtraction {
    pub section_id: SectionId,
    pub order_index: usize,
    pub entities: Vec<EntityDraft>,
    pub triples: Vec<TripleDraft>,
    /// References reported by the model.
    pub referenced_sections: Vec<SectionId>,
    /// References found by pattern in the pruned sentences.
    pub retained_refs: Vec<SectionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SectionStatus {
    Ok,
    Failed { stage: Stage, error: String },
}

/// Run-report entry for one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub section_id: SectionId,
    #[serde(flatten)]
    pub status: SectionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_fallback: Option<String>,
    pub dropped_entities: Vec<String>,
    pub discarded_triples: Vec<DiscardedTriple>,
    pub unparsed_references: Vec<String>,
    pub stage_ms: BTreeMap<Stage, u64>,
}

impl SectionReport {
    fn new(section_id: SectionId) -> SectionReport {
        SectionReport {
            section_id,
            status: SectionStatus::Ok,
            prune_fallback: None,
            dropped_entities: Vec::new(),
            discarded_triples: Vec::new(),
            unparsed_references: Vec::new(),
            stage_ms: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngRun {
    /// Successful sections in corpus order.
    pub extractions: Vec<SectionExtraction>,
    /// One entry per input section, in corpus order.
    pub reports: Vec<SectionReport>,
}

// ---------------------------------------------------------------------------
// slot bindings, shared with fixture compilers

fn bind(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

pub fn prune_slots(section_id: &SectionId, text: &str) -> BTreeMap<String, String> {
    bind(&[
        ("section_id", section_id.to_string()),
        ("text", text.to_string()),
    ])
}

pub fn entity_extract_slots(
    section_id: &SectionId,
    sentences: &[String],
) -> BTreeMap<String, String> {
    bind(&[
        ("section_id", section_id.to_string()),
        ("sentences", sentences.join("\n")),
    ])
}

fn entity_json(entities: &[EntityDraft]) -> String {
    let list: Vec<Value> = entities
        .iter()
        .map(|e| json!({"name": e.name, "label": e.label}))
        .collect();
    Value::Array(list).to_string()
}

fn entity_names_json(entities: &[EntityDraft]) -> String {
    Value::Array(entities.iter().map(|e| json!(e.name)).collect()).to_string()
}

fn triple_json(triples: &[TripleDraft]) -> String {
    let list: Vec<Value> = triples
        .iter()
        .map(|t| json!({"head": t.head, "relation": t.relation, "tail": t.tail}))
        .collect();
    Value::Array(list).to_string()
}

pub fn entity_validate_slots(
    section_id: &SectionId,
    original: &str,
    entities: &[EntityDraft],
) -> BTreeMap<String, String> {
    bind(&[
        ("section_id", section_id.to_string()),
        ("original", original.to_string()),
        ("entities", entity_json(entities)),
    ])
}

pub fn relation_extract_slots(
    section_id: &SectionId,
    entities: &[EntityDraft],
    sentences: &[String],
) -> BTreeMap<String, String> {
    bind(&[
        ("section_id", section_id.to_string()),
        ("entities", entity_names_json(entities)),
        ("sentences", sentences.join("\n")),
    ])
}

pub fn relation_validate_slots(
    section_id: &SectionId,
    entities: &[EntityDraft],
    sentences: &[String],
    triples: &[TripleDraft],
) -> BTreeMap<String, String> {
    bind(&[
        ("section_id", section_id.to_string()),
        ("entities", entity_names_json(entities)),
        ("sentences", sentences.join("\n")),
        ("triples", triple_json(triples)),
    ])
}

// ---------------------------------------------------------------------------
// text checks

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "by", "for", "from", "if", "in", "is", "it",
    "must", "not", "of", "on", "or", "shall", "that", "the", "their", "this", "to", "when",
    "where", "which", "with",
];

fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| singularize(&w.to_lowercase()))
        .collect()
}

/// Words of `candidate` absent from `source` and not function words.
fn novel_words(candidate: &str, source: &str) -> Vec<String> {
    let known: BTreeSet<String> = word_tokens(source).into_iter().collect();
    let mut novel: Vec<String> = word_tokens(candidate)
        .into_iter()
        .filter(|w| !known.contains(w) && !FUNCTION_WORDS.contains(&w.as_str()))
        .collect();
    novel.dedup();
    novel
}

/// True when the lemma tokens of `name` occur contiguously in `text_tokens`.
fn occurs_in(lemmatizer: &Lemmatizer, name: &str, text_tokens: &[String]) -> bool {
    let needle = word_tokens(&lemmatizer.lemmatize(name));
    !needle.is_empty()
        && text_tokens
            .windows(needle.len())
            .any(|w| w == needle.as_slice())
}

/// Lowercase snake_case: runs of non-alphanumerics become one underscore.
pub fn snake_case(relation: &str) -> String {
    let mut out = String::new();
    for c in relation.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

fn pattern_refs(text: &str, host: &SectionId) -> BTreeSet<SectionId> {
    detect_cross_references(text, Some(host))
        .into_iter()
        .collect()
}

/// Splits `text` into pieces below `limit` estimated tokens at sentence
/// boundaries; a single oversized sentence forms its own piece.
fn chunk_text(text: &str, limit: usize) -> Vec<String> {
    if estimate_tokens(text) <= limit {
        return vec![text.to_string()];
    }
    let mut chunks = Vec::new();
    let mut current = String::new();
    for sentence in split_sentences(text) {
        if !current.is_empty() && estimate_tokens(&current) + estimate_tokens(&sentence) + 1 > limit
        {
            chunks.push(std::mem::take(&mut current));
        }
        if !current.is_empty() {
            current.push('\n');
        }
        current.push_str(&sentence);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn strings(value: &Value, key: &str) -> Vec<String> {
    value[key]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// builder

pub struct EngBuilder<'a> {
    gateway: &'a Gateway,
    config: EngConfig,
    lemmatizer: Lemmatizer,
}

impl<'a> EngBuilder<'a> {
    pub fn new(
        gateway: &'a Gateway,
        config: EngConfig,
        lemmatizer: Lemmatizer,
    ) -> Result<EngBuilder<'a>, LlmError> {
        if !(1..=3).contains(&config.validation_passes) {
            return Err(LlmError::InvalidConfig(format!(
                "validation_passes {} outside 1..=3",
                config.validation_passes
            )));
        }
        Ok(EngBuilder {
            gateway,
            config,
            lemmatizer,
        })
    }

    /// Simplified sentences of a section. Heading-only sections and
    /// model output that loses a reference or adds vocabulary fall back to
    /// the original sentences; the fallback reason is returned.
    pub fn prune_content(
        &self,
        node: &SectionNode,
    ) -> Result<(PrunedSection, Option<String>), LlmError> {
        let text = node.full_text();
        let host = &node.id;
        if node.is_heading_only() {
            let sentences = vec![text.trim().to_string()];
            let retained_refs = pattern_refs(&text, host).into_iter().collect();
            return Ok((
                PrunedSection {
                    section_id: host.clone(),
                    sentences,
                    retained_refs,
                },
                None,
            ));
        }
        let mut sentences = Vec::new();
        for chunk in chunk_text(&text, self.config.chunk_tokens) {
            let reply = self
                .gateway
                .chat(TemplateId::ContentPrune, &prune_slots(host, &chunk))?;
            sentences.extend(
                strings(&reply, "sentences")
                    .into_iter()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty()),
            );
        }
        let joined = sentences.join("\n");
        let source_refs = pattern_refs(&text, host);
        let kept_refs = pattern_refs(&joined, host);
        let lost: Vec<String> = source_refs
            .difference(&kept_refs)
            .map(ToString::to_string)
            .collect();
        let novel = novel_words(&joined, &text);
        let fallback = if sentences.is_empty() {
            Some("model returned no sentences".to_string())
        } else if !lost.is_empty() {
            Some(format!("reference loss: {}", lost.join(", ")))
        } else if !novel.is_empty() {
            Some(format!("new vocabulary: {}", novel.join(", ")))
        } else {
            None
        };
        if let Some(reason) = &fallback {
            log::warn!("{host}: pruning replaced by original text ({reason})");
            sentences = split_sentences(&text);
        }
        let retained_refs = pattern_refs(&sentences.join("\n"), host)
            .into_iter()
            .collect();
        Ok((
            PrunedSection {
                section_id: host.clone(),
                sentences,
                retained_refs,
            },
            fallback,
        ))
    }

    /// Keeps drafts with a label whose name occurs in the section text;
    /// returns the kept drafts and the dropped names.
    fn admit_entities(
        &self,
        raw: &Value,
        host: &SectionId,
        text_tokens: &[String],
    ) -> (Vec<EntityDraft>, Vec<String>) {
        let mut kept: Vec<EntityDraft> = Vec::new();
        let mut dropped = Vec::new();
        for item in raw["entities"].as_array().into_iter().flatten() {
            let name = item["name"].as_str().unwrap_or("").trim().to_string();
            let label = item["label"].as_str().unwrap_or("").trim().to_string();
            if name.is_empty() {
                continue;
            }
            if label.is_empty() || !occurs_in(&self.lemmatizer, &name, text_tokens) {
                dropped.push(name);
                continue;
            }
            if !kept.iter().any(|e| e.name == name) {
                kept.push(EntityDraft {
                    name,
                    label,
                    section_id: host.clone(),
                });
            }
        }
        (kept, dropped)
    }

    /// Entities named in the pruned text plus every section id the model
    /// reports. Reference strings that do not parse are returned separately.
    pub fn extract_entities(&self, pruned: &PrunedSection) -> Result<ExtractedEntities, LlmError> {
        if pruned.sentences.is_empty() {
            return Ok(ExtractedEntities::default());
        }
        let host = &pruned.section_id;
        let reply = self.gateway.chat(
            TemplateId::EntityExtract,
            &entity_extract_slots(host, &pruned.sentences),
        )?;
        let tokens = word_tokens(&pruned.sentences.join("\n"));
        let (entities, dropped) = self.admit_entities(&reply, host, &tokens);
        let mut refs = BTreeSet::new();
        let mut unparsed = Vec::new();
        for r in strings(&reply, "references") {
            let found = detect_cross_references(&r, Some(host));
            if !found.is_empty() {
                refs.extend(found);
            } else if let Ok(id) = SectionId::parse_with(&r, Depth::Extended) {
                refs.insert(id);
            } else {
                log::warn!("{host}: ignoring unparseable reference {r:?}");
                unparsed.push(r);
            }
        }
        refs.remove(host);
        Ok(ExtractedEntities {
            entities,
            references: refs.into_iter().collect(),
            dropped,
            unparsed,
        })
    }

    pub fn validate_entities(
        &self,
        original: &SectionNode,
        pruned: &PrunedSection,
        drafts: Vec<EntityDraft>,
    ) -> Result<(Vec<EntityDraft>, Vec<String>), LlmError> {
        let text = original.full_text();
        let tokens = word_tokens(&format!("{text}\n{}", pruned.sentences.join("\n")));
        let mut current = drafts;
        let mut dropped = Vec::new();
        for _ in 0..self.config.validation_passes {
            if current.is_empty() {
                break;
            }
            let reply = self.gateway.chat(
                TemplateId::EntityValidate,
                &entity_validate_slots(&original.id, &text, &current),
            )?;
            let (next, lost) = self.admit_entities(&reply, &original.id, &tokens);
            dropped.extend(lost);
            if next == current {
                break;
            }
            current = next;
        }
        Ok((current, dropped))
    }

    /// Keeps triples whose ends are section entities, normalizing relation
    /// names; everything else is reported as discarded.
    fn admit_triples(
        &self,
        raw: &Value,
        host: &SectionId,
        entities: &[EntityDraft],
    ) -> (Vec<TripleDraft>, Vec<DiscardedTriple>) {
        let resolve = |name: &str| {
            let name = name.trim();
            entities
                .iter()
                .find(|e| e.name == name)
                .or_else(|| entities.iter().find(|e| e.name.eq_ignore_ascii_case(name)))
                .map(|e| e.name.clone())
        };
        let mut kept: Vec<TripleDraft> = Vec::new();
        let mut discarded = Vec::new();
        for item in raw["triples"].as_array().into_iter().flatten() {
            let head = item["head"].as_str().unwrap_or("");
            let relation = item["relation"].as_str().unwrap_or("");
            let tail = item["tail"].as_str().unwrap_or("");
            let discard = |reason: &str| DiscardedTriple {
                head: head.to_string(),
                relation: relation.to_string(),
                tail: tail.to_string(),
                reason: reason.to_string(),
            };
            let rel = snake_case(relation);
            match (resolve(head), resolve(tail)) {
                (None, _) => discarded.push(discard("unknown head entity")),
                (_, None) => discarded.push(discard("unknown tail entity")),
                (Some(h), Some(t)) if h == t => discarded.push(discard("head equals tail")),
                _ if rel.is_empty() => discarded.push(discard("empty relation")),
                (Some(h), Some(t)) => {
                    let triple = TripleDraft {
                        head: h,
                        relation: rel,
                        tail: t,
                        section_id: host.clone(),
                    };
                    if !kept.contains(&triple) {
                        kept.push(triple);
                    }
                }
            }
        }
        for d in &discarded {
            log::info!(
                "{host}: discarded triple ({}, {}, {}): {}",
                d.head,
                d.relation,
                d.tail,
                d.reason
            );
        }
        (kept, discarded)
    }

    pub fn extract_relationships(
        &self,
        entities: &[EntityDraft],
        pruned: &PrunedSection,
    ) -> Result<(Vec<TripleDraft>, Vec<DiscardedTriple>), LlmError> {
        if entities.len() < 2 {
            return Ok((Vec::new(), Vec::new()));
        }
        let host = &pruned.section_id;
        let reply = self.gateway.chat(
            TemplateId::RelationExtract,
            &relation_extract_slots(host, entities, &pruned.sentences),
        )?;
        Ok(self.admit_triples(&reply, host, entities))
    }

    pub fn validate_relationships(
        &self,
        entities: &[EntityDraft],
        pruned: &PrunedSection,
        triples: Vec<TripleDraft>,
    ) -> Result<(Vec<TripleDraft>, Vec<DiscardedTriple>), LlmError> {
        let host = &pruned.section_id;
        let mut current = triples;
        let mut discarded = Vec::new();
        for _ in 0..self.config.validation_passes {
            if current.is_empty() {
                break;
            }
            let reply = self.gateway.chat(
                TemplateId::RelationValidate,
                &relation_validate_slots(host, entities, &pruned.sentences, &current),
            )?;
            let (next, lost) = self.admit_triples(&reply, host, entities);
            discarded.extend(lost);
            // validation may only remove or correct, never invent new pairs
            let pairs: BTreeSet<(&str, &str)> = current
                .iter()
                .map(|t| (t.head.as_str(), t.tail.as_str()))
                .collect();
            let (next, invented): (Vec<_>, Vec<_>) = next
                .into_iter()
                .partition(|t| pairs.contains(&(t.head.as_str(), t.tail.as_str())));
            discarded.extend(invented.into_iter().map(|t| DiscardedTriple {
                head: t.head,
                relation: t.relation,
                tail: t.tail,
                reason: "added during validation".into(),
            }));
            if next == current {
                break;
            }
            current = next;
        }
        Ok((current, discarded))
    }

    /// Runs all five stages on one section.
    pub fn build_section(&self, node: &SectionNode) -> (Option<SectionExtraction>, SectionReport) {
        let mut report = SectionReport::new(node.id.clone());
        match self.run_stages(node, &mut report) {
            Ok(extraction) => (Some(extraction), report),
            Err(e) => {
                log::error!("{e}");
                report.status = SectionStatus::Failed {
                    stage: e.stage,
                    error: e.source.to_string(),
                };
                (None, report)
            }
        }
    }

    fn run_stages(
        &self,
        node: &SectionNode,
        report: &mut SectionReport,
    ) -> Result<SectionExtraction, SectionExtractionFailed> {
        let fail = |stage| {
            let section_id = node.id.clone();
            move |source| SectionExtractionFailed {
                section_id,
                stage,
                source,
            }
        };
        let mut clock = Instant::now();
        let mut lap = |report: &mut SectionReport, stage| {
            report
                .stage_ms
                .insert(stage, clock.elapsed().as_millis() as u64);
            clock = Instant::now();
        };

        let (pruned, fallback) = self.prune_content(node).map_err(fail(Stage::Prune))?;
        report.prune_fallback = fallback;
        lap(report, Stage::Prune);

        let ExtractedEntities {
            entities: drafts,
            references: refs,
            dropped,
            unparsed,
        } = self
            .extract_entities(&pruned)
            .map_err(fail(Stage::ExtractEntities))?;
        report.dropped_entities.extend(dropped);
        report.unparsed_references = unparsed;
        lap(report, Stage::ExtractEntities);

        let (entities, dropped) = self
            .validate_entities(node, &pruned, drafts)
            .map_err(fail(Stage::ValidateEntities))?;
        report.dropped_entities.extend(dropped);
        lap(report, Stage::ValidateEntities);

        let (triples, discarded) = self
            .extract_relationships(&entities, &pruned)
            .map_err(fail(Stage::ExtractRelations))?;
        report.discarded_triples.extend(discarded);
        lap(report, Stage::ExtractRelations);

        let (triples, discarded) = self
            .validate_relationships(&entities, &pruned, triples)
            .map_err(fail(Stage::ValidateRelations))?;
        report.discarded_triples.extend(discarded);
        lap(report, Stage::ValidateRelations);

        Ok(SectionExtraction {
            section_id: node.id.clone(),
            order_index: node.order_index,
            entities,
            triples,
            referenced_sections: refs,
            retained_refs: pruned.retained_refs,
        })
    }

    /// Extracts every section concurrently; results come back in corpus
    /// order and failed sections are reported, not fatal.
    pub fn build_corpus(&self, nodes: &[SectionNode]) -> EngRun {
        let mut results: Vec<(usize, Option<SectionExtraction>, SectionReport)> = nodes
            .par_iter()
            .map(|n| {
                let (e, r) = self.build_section(n);
                (n.order_index, e, r)
            })
            .collect();
        results.sort_by_key(|(i, _, _)| *i);
        let mut run = EngRun::default();
        for (_, extraction, report) in results {
            run.extractions.extend(extraction);
            run.reports.push(report);
        }
        run
    }
}

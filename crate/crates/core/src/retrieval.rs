//! Question answering over a bundle.
//!
//! The question is decomposed into entities and triples, each matched
//! against the entity and triple vector tables. Sections supported by both
//! kinds of match seed a walk of the section graph (outgoing references,
//! transitively, then one level of children), and the gathered provisions
//! are handed to the model to filter and summarize.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::detect_cross_references;
use crate::dng::{Direction, EdgeLabel};
use crate::eng::snake_case;
use crate::llm::{estimate_tokens, Gateway, LlmError, TemplateId};
use crate::refiner::Lemmatizer;
use crate::section_id::{Depth, SectionId};
use crate::store::{Bundle, StoreError, VectorTable};
use crate::vector::concat3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStage {
    Decompose,
    MatchEntities,
    MatchTriples,
    Synthesize,
}

impl std::fmt::Display for RetrievalStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrievalStage::Decompose => "decompose",
            RetrievalStage::MatchEntities => "match_entities",
            RetrievalStage::MatchTriples => "match_triples",
            RetrievalStage::Synthesize => "synthesize",
        })
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("[{stage}] {source}")]
    Llm {
        stage: RetrievalStage,
        #[source]
        source: LlmError,
    },
    #[error("[{stage}] {source}")]
    Store {
        stage: RetrievalStage,
        #[source]
        source: StoreError,
    },
}

impl RetrievalError {
    pub fn stage(&self) -> Option<RetrievalStage> {
        match self {
            RetrievalError::EmptyQuestion => None,
            RetrievalError::Llm { stage, .. } | RetrievalError::Store { stage, .. } => Some(*stage),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Matches kept per query entity and per query triple.
    pub top_k: usize,
    /// Matches must score strictly above this.
    pub min_sim: f64,
    /// Seed with the union of both candidate sets when they do not intersect.
    pub fallback_to_union: bool,
    /// Also follow references pointing into the pool.
    pub follow_incoming: bool,
    /// Also add the parent of every pool member.
    pub include_parents: bool,
    /// Estimated-token budget for the provisions sent to synthesis.
    pub max_section_tokens: usize,
    pub proper_nouns: Vec<String>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            min_sim: 0.5,
            fallback_to_union: true,
            follow_incoming: false,
            include_parents: false,
            max_section_tokens: 12_000,
            proper_nouns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDecomposition {
    pub entities: Vec<String>,
    pub triples: Vec<QueryTriple>,
    pub symmetrized: bool,
}

impl QueryDecomposition {
    /// Adds the head/tail swap of every triple.
    pub fn symmetrize(&mut self) {
        let mut out: Vec<QueryTriple> = Vec::new();
        for t in &self.triples {
            let swapped = QueryTriple {
                head: t.tail.clone(),
                relation: t.relation.clone(),
                tail: t.head.clone(),
            };
            for x in [t.clone(), swapped] {
                if !out.contains(&x) {
                    out.push(x);
                }
            }
        }
        self.triples = out;
        self.symmetrized = true;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemHits {
    pub query: String,
    pub hits: Vec<(String, f64)>,
    pub sections: BTreeSet<SectionId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub decomposition: Option<QueryDecomposition>,
    pub entity_hits: Vec<ItemHits>,
    pub triple_hits: Vec<ItemHits>,
    pub entity_candidates: BTreeSet<SectionId>,
    pub triple_candidates: BTreeSet<SectionId>,
    pub intersection: BTreeSet<SectionId>,
    pub seeds: BTreeSet<SectionId>,
    pub fallback_used: bool,
    pub expanded: BTreeSet<SectionId>,
    /// Expanded sections without text of their own.
    pub textless: BTreeSet<SectionId>,
    /// Sections dropped to fit the synthesis budget, lowest score first.
    pub dropped_for_budget: Vec<SectionId>,
    pub synthesis_inputs: Vec<SectionId>,
    pub relevant: Vec<SectionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    EmptyDecomposition,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub section_id: SectionId,
    pub text: String,
    pub link: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question: String,
    pub outcome: Outcome,
    pub summary: String,
    pub references: Vec<Reference>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<RetrievalTrace>,
}

impl Answer {
    pub fn without_trace(mut self) -> Answer {
        self.trace = None;
        self
    }

    pub fn cited_ids(&self) -> BTreeSet<SectionId> {
        self.references
            .iter()
            .map(|r| r.section_id.clone())
            .collect()
    }
}

pub const NO_PROVISIONS: &str = "No provisions found for this question.";

/// Provisions in the synthesis prompt, one `### <id>` block each.
pub fn synthesis_sections(sections: &[(SectionId, String)]) -> String {
    sections
        .iter()
        .map(|(id, text)| format!("### {id}\n{}", text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn union_payloads(table: &VectorTable, hits: &[crate::store::Hit]) -> BTreeSet<SectionId> {
    hits.iter()
        .filter_map(|h| table.row(h.row_id))
        .flat_map(|r| r.payload.iter().cloned())
        .collect()
}

pub struct Engine<'a> {
    bundle: &'a Bundle,
    gateway: &'a Gateway,
    config: RetrievalConfig,
    lemmatizer: Lemmatizer,
}

impl<'a> Engine<'a> {
    pub fn new(bundle: &'a Bundle, gateway: &'a Gateway, config: RetrievalConfig) -> Engine<'a> {
        let lemmatizer = Lemmatizer::new(&config.proper_nouns);
        Engine {
            bundle,
            gateway,
            config,
            lemmatizer,
        }
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    /// Entities and symmetrized triples of the question, lemmatized the
    /// way stored entities are. `None` when nothing usable was found.
    pub fn decompose_query(
        &self,
        question: &str,
    ) -> Result<Option<QueryDecomposition>, RetrievalError> {
        let slots = BTreeMap::from([("question".to_string(), question.to_string())]);
        let reply = self
            .gateway
            .chat(TemplateId::QueryDecompose, &slots)
            .map_err(|source| RetrievalError::Llm {
                stage: RetrievalStage::Decompose,
                source,
            })?;
        let mut entities: Vec<String> = Vec::new();
        for e in reply["entities"].as_array().into_iter().flatten() {
            let lemma = self.lemmatizer.lemmatize(e.as_str().unwrap_or(""));
            if !lemma.is_empty() && !entities.contains(&lemma) {
                entities.push(lemma);
            }
        }
        let mut triples = Vec::new();
        for t in reply["triples"].as_array().into_iter().flatten() {
            let field = |k: &str| t[k].as_str().unwrap_or("").to_string();
            let triple = QueryTriple {
                head: self.lemmatizer.lemmatize(&field("head")),
                relation: snake_case(&field("relation")),
                tail: self.lemmatizer.lemmatize(&field("tail")),
            };
            if triple.head.is_empty() || triple.relation.is_empty() || triple.tail.is_empty() {
                continue;
            }
            if !triples.contains(&triple) {
                triples.push(triple);
            }
        }
        if entities.is_empty() && triples.is_empty() {
            return Ok(None);
        }
        let mut d = QueryDecomposition {
            entities,
            triples,
            symmetrized: false,
        };
        d.symmetrize();
        Ok(Some(d))
    }

    fn embed_all(
        &self,
        texts: &BTreeSet<String>,
        stage: RetrievalStage,
    ) -> Result<BTreeMap<String, Vec<f64>>, RetrievalError> {
        if texts.is_empty() {
            return Ok(BTreeMap::new());
        }
        let list: Vec<String> = texts.iter().cloned().collect();
        let vectors = self
            .gateway
            .embed(&list)
            .map_err(|source| RetrievalError::Llm { stage, source })?;
        Ok(list.into_iter().zip(vectors).collect())
    }

    fn search(
        &self,
        table: &VectorTable,
        query: &str,
        vector: &[f64],
        stage: RetrievalStage,
    ) -> Result<ItemHits, RetrievalError> {
        let result = table
            .top_k(vector, self.config.top_k, self.config.min_sim)
            .map_err(|source| RetrievalError::Store { stage, source })?;
        Ok(ItemHits {
            query: query.to_string(),
            sections: union_payloads(table, &result.hits),
            hits: result
                .hits
                .into_iter()
                .map(|h| (h.label, h.similarity))
                .collect(),
        })
    }

    /// Top-k entity matches per query entity.
    pub fn match_entities(&self, d: &QueryDecomposition) -> Result<Vec<ItemHits>, RetrievalError> {
        let stage = RetrievalStage::MatchEntities;
        let vectors = self.embed_all(&d.entities.iter().cloned().collect(), stage)?;
        d.entities
            .iter()
            .map(|e| self.search(&self.bundle.entity_table, e, &vectors[e], stage))
            .collect()
    }

    /// Top-k triple matches per query triple, swapped forms included.
    pub fn match_triples(&self, d: &QueryDecomposition) -> Result<Vec<ItemHits>, RetrievalError> {
        let stage = RetrievalStage::MatchTriples;
        let texts: BTreeSet<String> = d
            .triples
            .iter()
            .flat_map(|t| [t.head.clone(), t.relation.clone(), t.tail.clone()])
            .collect();
        let vectors = self.embed_all(&texts, stage)?;
        d.triples
            .iter()
            .map(|t| {
                let v = concat3(&vectors[&t.head], &vectors[&t.relation], &vectors[&t.tail])
                    .map_err(|e| RetrievalError::Store {
                        stage,
                        source: e.into(),
                    })?;
                let label = format!("{} | {} | {}", t.head, t.relation, t.tail);
                self.search(&self.bundle.triple_table, &label, &v, stage)
            })
            .collect()
    }

    /// `A ∩ B`, or `A ∪ B` flagged when the intersection is empty and the
    /// fallback is enabled.
    pub fn select_seeds(
        &self,
        a: &BTreeSet<SectionId>,
        b: &BTreeSet<SectionId>,
    ) -> (BTreeSet<SectionId>, bool) {
        select_seeds(a, b, self.config.fallback_to_union)
    }

    /// Reference closure of the seeds plus one level of children.
    pub fn expand(&self, seeds: &BTreeSet<SectionId>) -> BTreeSet<SectionId> {
        let dng = &self.bundle.dng;
        let known: BTreeSet<SectionId> = seeds
            .iter()
            .filter(|s| {
                let ok = dng.contains(s);
                if !ok {
                    log::warn!("dropping seed {s} absent from the section graph");
                }
                ok
            })
            .cloned()
            .collect();
        let mut pool = dng
            .closure(&known, &[EdgeLabel::RefersTo], Direction::Out)
            .expect("seeds filtered to known nodes");
        if self.config.follow_incoming {
            let incoming = dng
                .closure(&known, &[EdgeLabel::RefersTo], Direction::In)
                .expect("seeds filtered to known nodes");
            pool.extend(incoming);
        }
        let mut out = pool.clone();
        for id in &pool {
            out.extend(
                dng.neighbors(id, EdgeLabel::Has, Direction::Out)
                    .expect("pool member exists"),
            );
            if self.config.include_parents {
                out.extend(
                    dng.neighbors(id, EdgeLabel::Has, Direction::In)
                        .expect("pool member exists"),
                );
            }
        }
        out
    }

    /// Filters the provisions and summarizes them with citations.
    pub fn synthesize(
        &self,
        question: &str,
        sections: &[(SectionId, String)],
    ) -> Result<(String, Vec<SectionId>), RetrievalError> {
        let allowed: BTreeSet<SectionId> = sections.iter().map(|(id, _)| id.clone()).collect();
        let slots = BTreeMap::from([
            ("question".to_string(), question.to_string()),
            ("sections".to_string(), synthesis_sections(sections)),
        ]);
        let check = |v: &Value| -> Result<(), String> {
            let mut relevant = BTreeSet::new();
            for r in v["relevant"].as_array().into_iter().flatten() {
                let raw = r.as_str().unwrap_or("");
                let id = SectionId::parse_with(raw, Depth::Extended)
                    .map_err(|e| format!("relevant id {raw:?} does not parse: {e}"))?;
                if !allowed.contains(&id) {
                    return Err(format!(
                        "relevant id {id} was not among the provisions supplied"
                    ));
                }
                relevant.insert(id);
            }
            let summary = v["summary"].as_str().unwrap_or("");
            for cited in detect_cross_references(summary, None) {
                if !relevant.contains(&cited) {
                    return Err(format!(
                        "summary cites {cited}, which is not in the relevant list"
                    ));
                }
            }
            Ok(())
        };
        let reply = self
            .gateway
            .chat_checked(TemplateId::AnswerSynthesize, &slots, &check)
            .map_err(|source| RetrievalError::Llm {
                stage: RetrievalStage::Synthesize,
                source,
            })?;
        let mut relevant: Vec<SectionId> = Vec::new();
        for r in reply["relevant"].as_array().into_iter().flatten() {
            let id = SectionId::parse_with(r.as_str().unwrap_or(""), Depth::Extended)
                .expect("checked above");
            if !relevant.contains(&id) {
                relevant.push(id);
            }
        }
        relevant.sort();
        Ok((
            reply["summary"].as_str().unwrap_or("").to_string(),
            relevant,
        ))
    }

    /// Drops the lowest-scoring non-seed sections until the texts fit.
    fn fit_budget(
        &self,
        mut sections: Vec<(SectionId, String)>,
        seeds: &BTreeSet<SectionId>,
        scores: &BTreeMap<SectionId, f64>,
    ) -> (Vec<(SectionId, String)>, Vec<SectionId>) {
        let cost = |s: &[(SectionId, String)]| estimate_tokens(&synthesis_sections(s));
        let mut dropped = Vec::new();
        while cost(&sections) > self.config.max_section_tokens {
            let victim = sections
                .iter()
                .enumerate()
                .filter(|(_, (id, _))| !seeds.contains(id))
                .min_by(|(_, (a, _)), (_, (b, _))| {
                    let sa = scores.get(a).copied().unwrap_or(0.0);
                    let sb = scores.get(b).copied().unwrap_or(0.0);
                    sa.total_cmp(&sb).then(b.cmp(a))
                })
                .map(|(i, _)| i);
            match victim {
                Some(i) => dropped.push(sections.remove(i).0),
                None => break,
            }
        }
        (sections, dropped)
    }

    /// The full pipeline. The trace is always attached; strip it with
    /// [`Answer::without_trace`] when not wanted.
    pub fn answer_question(&self, question: &str) -> Result<Answer, RetrievalError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(RetrievalError::EmptyQuestion);
        }
        let mut trace = RetrievalTrace::default();
        let finish = |outcome, summary: &str, references, trace| Answer {
            question: question.to_string(),
            outcome,
            summary: summary.to_string(),
            references,
            trace: Some(trace),
        };
        let Some(d) = self.decompose_query(question)? else {
            return Ok(finish(
                Outcome::EmptyDecomposition,
                NO_PROVISIONS,
                Vec::new(),
                trace,
            ));
        };
        trace.entity_hits = self.match_entities(&d)?;
        trace.triple_hits = self.match_triples(&d)?;
        trace.decomposition = Some(d);
        trace.entity_candidates = trace
            .entity_hits
            .iter()
            .flat_map(|h| h.sections.iter().cloned())
            .collect();
        trace.triple_candidates = trace
            .triple_hits
            .iter()
            .flat_map(|h| h.sections.iter().cloned())
            .collect();
        trace.intersection = trace
            .entity_candidates
            .intersection(&trace.triple_candidates)
            .cloned()
            .collect();
        let (seeds, fallback) =
            self.select_seeds(&trace.entity_candidates, &trace.triple_candidates);
        trace.seeds = seeds;
        trace.fallback_used = fallback;
        trace.expanded = self.expand(&trace.seeds);

        // best similarity of any hit whose payload names the section
        let mut scores: BTreeMap<SectionId, f64> = BTreeMap::new();
        for (table, items) in [
            (&self.bundle.entity_table, &trace.entity_hits),
            (&self.bundle.triple_table, &trace.triple_hits),
        ] {
            for item in items.iter() {
                for (label, sim) in &item.hits {
                    for row in table.rows().iter().filter(|r| &r.label == label) {
                        for id in &row.payload {
                            let s = scores.entry(id.clone()).or_insert(f64::MIN);
                            *s = s.max(*sim);
                        }
                    }
                }
            }
        }

        let mut sections = Vec::new();
        for id in &trace.expanded {
            match self.bundle.section(id) {
                Some(node) if !node.full_text().trim().is_empty() => {
                    sections.push((id.clone(), node.full_text()))
                }
                _ => {
                    trace.textless.insert(id.clone());
                }
            }
        }
        let (sections, dropped) = self.fit_budget(sections, &trace.seeds, &scores);
        trace.dropped_for_budget = dropped;
        trace.synthesis_inputs = sections.iter().map(|(id, _)| id.clone()).collect();
        if sections.is_empty() {
            return Ok(finish(
                Outcome::NoCandidates,
                NO_PROVISIONS,
                Vec::new(),
                trace,
            ));
        }
        let (summary, relevant) = self.synthesize(question, &sections)?;
        let references = relevant
            .iter()
            .map(|id| {
                let node = self
                    .bundle
                    .section(id)
                    .expect("synthesis inputs are corpus sections");
                Reference {
                    section_id: id.clone(),
                    text: node.full_text(),
                    link: node.source_url.clone(),
                }
            })
            .collect();
        trace.relevant = relevant;
        Ok(finish(Outcome::Answered, &summary, references, trace))
    }
}

pub fn select_seeds(
    a: &BTreeSet<SectionId>,
    b: &BTreeSet<SectionId>,
    fallback_to_union: bool,
) -> (BTreeSet<SectionId>, bool) {
    let both: BTreeSet<SectionId> = a.intersection(b).cloned().collect();
    if both.is_empty() && fallback_to_union {
        let either: BTreeSet<SectionId> = a.union(b).cloned().collect();
        let used = !either.is_empty();
        (either, used)
    } else {
        (both, false)
    }
}

//! Entity consolidation into the local schema.
//!
//! Each extracted name is lemmatized. A known lemma merges directly. An
//! unknown one merges with its nearest stored neighbour if their lemma
//! embeddings have cosine similarity `>= tau`, and is otherwise inserted
//! as a new element. Relations are collected verbatim with one
//! embedding per distinct string, and every triple is embedded as the
//! concatenation of its head, relation and tail vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Embedding, Gateway, LlmError};
use crate::section_id::SectionId;
use crate::vector::{concat3, cosine_similarity, VectorError};

#[derive(Debug, Error)]
pub enum RefinerError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("similarity threshold {0} outside (0, 1]")]
    InvalidTau(f64),
    #[error("entity name is empty")]
    EmptyName,
    #[error("embedding has length {got}, schema dimension is {expected}")]
    WrongDimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    /// Cosine similarity at or above which a new entity merges into an existing one.
    pub tau: f64,
    /// Words kept with their given capitalization.
    pub proper_nouns: Vec<String>,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            proper_nouns: Vec::new(),
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<(), RefinerError> {
        if self.tau > 0.0 && self.tau <= 1.0 {
            Ok(())
        } else {
            Err(RefinerError::InvalidTau(self.tau))
        }
    }
}

// ---------------------------------------------------------------------------
// lemmatization

const IRREGULAR: &[(&str, &str)] = &[
    ("analyses", "analysis"),
    ("appendices", "appendix"),
    ("buses", "bus"),
    ("children", "child"),
    ("criteria", "criterion"),
    ("feet", "foot"),
    ("gases", "gas"),
    ("halves", "half"),
    ("indices", "index"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("linemen", "lineman"),
    ("lives", "life"),
    ("matrices", "matrix"),
    ("men", "man"),
    ("mice", "mouse"),
    ("people", "person"),
    ("shelves", "shelf"),
    ("statuses", "status"),
    ("teeth", "tooth"),
    ("women", "woman"),
    ("workmen", "workman"),
];

const INVARIANT: &[&str] = &[
    "apparatus",
    "aircraft",
    "chassis",
    "debris",
    "equipment",
    "gas",
    "headquarters",
    "lens",
    "means",
    "news",
    "premises",
    "series",
    "species",
];

/// Singular form of one lowercase word.
pub fn singularize(word: &str) -> String {
    if INVARIANT.contains(&word) {
        return word.to_string();
    }
    if let Some((_, s)) = IRREGULAR.iter().find(|(p, _)| *p == word) {
        return s.to_string();
    }
    let n = word.len();
    if word.ends_with("sses") {
        return word[..n - 2].to_string();
    }
    if word.ends_with("ches")
        || word.ends_with("shes")
        || word.ends_with("xes")
        || word.ends_with("zzes")
    {
        return word[..n - 2].to_string();
    }
    if word.ends_with("ies") && n > 4 {
        return format!("{}y", &word[..n - 3]);
    }
    if word.ends_with('s')
        && n > 3
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        return word[..n - 1].to_string();
    }
    word.to_string()
}

#[derive(Debug, Clone, Default)]
pub struct Lemmatizer {
    proper: BTreeMap<String, String>,
}

fn is_acronym(token: &str) -> bool {
    let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
    letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase())
}

/// Splits "ExcavationWork" into "Excavation", "Work" and "OSHAStandard"
/// into "OSHA", "Standard". A plural acronym like "PPEs" stays whole.
fn split_camel(token: &str) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let n = chars.len();
    if n >= 3 && chars[n - 1] == 's' && is_acronym(&token[..token.len() - 1]) {
        return vec![token.to_string()];
    }
    let mut out = Vec::new();
    let mut current = String::new();
    for i in 0..n {
        let c = chars[i];
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|x| x.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                out.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

impl Lemmatizer {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(proper_nouns: I) -> Lemmatizer {
        Lemmatizer {
            proper: proper_nouns
                .into_iter()
                .map(|p| (p.as_ref().to_lowercase(), p.as_ref().to_string()))
                .collect(),
        }
    }

    /// Canonical form of an entity name: CamelCase split, lowercased except
    /// acronyms and allowlisted proper nouns, last word singular.
    pub fn lemmatize(&self, name: &str) -> String {
        let mut tokens: Vec<(String, bool)> = Vec::new();
        for raw in name.split(|c: char| c.is_whitespace() || c == '_') {
            if raw.is_empty() {
                continue;
            }
            if let Some(p) = self.proper.get(&raw.to_lowercase()) {
                tokens.push((p.clone(), true));
                continue;
            }
            for t in split_camel(raw) {
                if is_acronym(&t) {
                    tokens.push((t, true));
                } else if t.len() > 2 && t.ends_with('s') && is_acronym(&t[..t.len() - 1]) {
                    tokens.push((t[..t.len() - 1].to_string(), true));
                } else {
                    match self.proper.get(&t.to_lowercase()) {
                        Some(p) => tokens.push((p.clone(), true)),
                        None => tokens.push((t.to_lowercase(), false)),
                    }
                }
            }
        }
        if let Some((last, proper)) = tokens.last_mut() {
            if !*proper {
                *last = singularize(last);
            }
        }
        tokens
            .into_iter()
            .map(|(t, _)| t)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// [`Lemmatizer::lemmatize`] with no proper-noun allowlist.
pub fn lemmatize(name: &str) -> String {
    Lemmatizer::default().lemmatize(name)
}

// ---------------------------------------------------------------------------
// local schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub element_id: u64,
    /// The name as first extracted.
    pub name: String,
    pub lemma: String,
    pub label: String,
    #[serde(skip)]
    pub embedding: Embedding,
    pub section_ids: BTreeSet<SectionId>,
    /// Triple occurrences as head and as tail.
    pub head_count: u32,
    pub tail_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTriple {
    pub triple_id: u64,
    pub head_id: u64,
    pub relation: String,
    pub tail_id: u64,
    #[serde(skip)]
    pub triple_embedding: Embedding,
    pub section_ids: BTreeSet<SectionId>,
}

/// Entities, relations and triples consolidated so far. Element and triple
/// ids are dense and equal their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSchema {
    pub dim: usize,
    entities: Vec<Entity>,
    relations: BTreeMap<String, Embedding>,
    triples: Vec<StoredTriple>,
    #[serde(skip)]
    by_lemma: BTreeMap<String, u64>,
    #[serde(skip)]
    by_key: BTreeMap<(u64, String, u64), u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    ExactMerge,
    SimilarityMerge,
    InsertNew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub kind: MergeKind,
    pub element_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_lemma: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

impl LocalSchema {
    pub fn new(dim: usize) -> LocalSchema {
        LocalSchema {
            dim,
            entities: Vec::new(),
            relations: BTreeMap::new(),
            triples: Vec::new(),
            by_lemma: BTreeMap::new(),
            by_key: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn triples(&self) -> &[StoredTriple] {
        &self.triples
    }

    pub fn relations(&self) -> &BTreeMap<String, Embedding> {
        &self.relations
    }

    pub fn entity(&self, element_id: u64) -> Option<&Entity> {
        self.entities.get(element_id as usize)
    }

    pub fn entity_by_lemma(&self, lemma: &str) -> Option<&Entity> {
        self.by_lemma
            .get(lemma)
            .map(|&id| &self.entities[id as usize])
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), RefinerError> {
        if v.len() == self.dim {
            Ok(())
        } else {
            Err(RefinerError::WrongDimension {
                got: v.len(),
                expected: self.dim,
            })
        }
    }

    /// Most similar entity by exhaustive scan; ties go to the lowest element id.
    pub fn most_similar(&self, embedding: &[f64]) -> Result<Option<(u64, f64)>, RefinerError> {
        let mut best: Option<(u64, f64)> = None;
        for e in &self.entities {
            let sim = cosine_similarity(embedding, &e.embedding)?;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((e.element_id, sim));
            }
        }
        Ok(best)
    }

    /// Merges or inserts one entity whose lemma and embedding are known.
    /// `embed` is only called when there is no exact lemma match.
    pub fn refine_with<F>(
        &mut self,
        name: &str,
        lemma: &str,
        label: &str,
        section_id: &SectionId,
        tau: f64,
        embed: F,
    ) -> Result<MergeDecision, RefinerError>
    where
        F: FnOnce(&str) -> Result<Embedding, RefinerError>,
    {
        if lemma.is_empty() {
            return Err(RefinerError::EmptyName);
        }
        if let Some(&id) = self.by_lemma.get(lemma) {
            self.entities[id as usize]
                .section_ids
                .insert(section_id.clone());
            return Ok(MergeDecision {
                kind: MergeKind::ExactMerge,
                element_id: id,
                target_lemma: Some(lemma.to_string()),
                similarity: None,
            });
        }
        let embedding = embed(lemma)?;
        self.check_dim(&embedding)?;
        if let Some((id, sim)) = self.most_similar(&embedding)? {
            if sim >= tau {
                let target = &mut self.entities[id as usize];
                target.section_ids.insert(section_id.clone());
                return Ok(MergeDecision {
                    kind: MergeKind::SimilarityMerge,
                    element_id: id,
                    target_lemma: Some(target.lemma.clone()),
                    similarity: Some(sim),
                });
            }
        }
        let id = self.entities.len() as u64;
        self.entities.push(Entity {
            element_id: id,
            name: name.to_string(),
            lemma: lemma.to_string(),
            label: label.to_string(),
            embedding,
            section_ids: BTreeSet::from([section_id.clone()]),
            head_count: 0,
            tail_count: 0,
        });
        self.by_lemma.insert(lemma.to_string(), id);
        Ok(MergeDecision {
            kind: MergeKind::InsertNew,
            element_id: id,
            target_lemma: None,
            similarity: None,
        })
    }

    /// Records a relation string with its embedding unless already known.
    pub fn add_relation(
        &mut self,
        relation: &str,
        embedding: Embedding,
    ) -> Result<(), RefinerError> {
        self.check_dim(&embedding)?;
        self.relations
            .entry(relation.to_string())
            .or_insert(embedding);
        Ok(())
    }

    /// Adds (or extends the sections of) the triple `head -relation-> tail`.
    /// The relation must already have an embedding.
    pub fn add_triple(
        &mut self,
        head_id: u64,
        relation: &str,
        tail_id: u64,
        section_id: &SectionId,
    ) -> Result<u64, RefinerError> {
        let key = (head_id, relation.to_string(), tail_id);
        let (id, new_section) = match self.by_key.get(&key) {
            Some(&id) => {
                let fresh = self.triples[id as usize]
                    .section_ids
                    .insert(section_id.clone());
                (id, fresh)
            }
            None => {
                let r = &self.relations[relation];
                let h = &self.entities[head_id as usize].embedding;
                let t = &self.entities[tail_id as usize].embedding;
                let triple_embedding = build_triple_embedding(h, r, t)?;
                let id = self.triples.len() as u64;
                self.triples.push(StoredTriple {
                    triple_id: id,
                    head_id,
                    relation: relation.to_string(),
                    tail_id,
                    triple_embedding,
                    section_ids: BTreeSet::from([section_id.clone()]),
                });
                self.by_key.insert(key, id);
                (id, true)
            }
        };
        if new_section {
            self.entities[head_id as usize].head_count += 1;
            self.entities[tail_id as usize].tail_count += 1;
        }
        Ok(id)
    }

    /// Reattaches vectors after deserialization and rebuilds the indexes.
    pub fn restore(
        &mut self,
        entity_vectors: BTreeMap<u64, Embedding>,
        triple_vectors: BTreeMap<u64, Embedding>,
    ) -> Result<(), String> {
        for (i, e) in self.entities.iter_mut().enumerate() {
            if e.element_id != i as u64 {
                return Err(format!(
                    "entity at position {i} has element id {}",
                    e.element_id
                ));
            }
            e.embedding = entity_vectors
                .get(&e.element_id)
                .cloned()
                .ok_or_else(|| format!("no vector for entity {}", e.element_id))?;
        }
        for (i, t) in self.triples.iter_mut().enumerate() {
            if t.triple_id != i as u64 {
                return Err(format!("triple at position {i} has id {}", t.triple_id));
            }
            t.triple_embedding = triple_vectors
                .get(&t.triple_id)
                .cloned()
                .ok_or_else(|| format!("no vector for triple {}", t.triple_id))?;
        }
        if entity_vectors.len() != self.entities.len() || triple_vectors.len() != self.triples.len()
        {
            return Err("vector tables and schema disagree on row counts".into());
        }
        self.by_lemma = self
            .entities
            .iter()
            .map(|e| (e.lemma.clone(), e.element_id))
            .collect();
        self.by_key = self
            .triples
            .iter()
            .map(|t| ((t.head_id, t.relation.clone(), t.tail_id), t.triple_id))
            .collect();
        if self.by_lemma.len() != self.entities.len() {
            return Err("duplicate lemma in schema".into());
        }
        Ok(())
    }
}

/// `[head, relation, tail]`, each of length d.
pub fn build_triple_embedding(
    head: &[f64],
    relation: &[f64],
    tail: &[f64],
) -> Result<Embedding, VectorError> {
    concat3(head, relation, tail)
}

// ---------------------------------------------------------------------------
// per-section driver

/// What the refiner did with one section's extraction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub decisions: Vec<(String, MergeDecision)>,
    pub triple_ids: Vec<u64>,
    /// Triples whose head or tail name was not among the section's entities.
    pub discarded: Vec<(String, String, String)>,
}

pub struct Refiner<'a> {
    gateway: &'a Gateway,
    lemmatizer: Lemmatizer,
    tau: f64,
}

impl<'a> Refiner<'a> {
    pub fn new(gateway: &'a Gateway, config: &RefinerConfig) -> Result<Refiner<'a>, RefinerError> {
        config.validate()?;
        Ok(Refiner {
            gateway,
            lemmatizer: Lemmatizer::new(&config.proper_nouns),
            tau: config.tau,
        })
    }

    pub fn lemmatizer(&self) -> &Lemmatizer {
        &self.lemmatizer
    }

    pub fn refine_entity(
        &self,
        schema: &mut LocalSchema,
        name: &str,
        label: &str,
        section_id: &SectionId,
    ) -> Result<MergeDecision, RefinerError> {
        let lemma = self.lemmatizer.lemmatize(name);
        schema.refine_with(name, &lemma, label, section_id, self.tau, |l| {
            Ok(self.gateway.embed_one(l)?)
        })
    }

    /// Folds one section's entities (name, label) and triples (head,
    /// relation, tail) into the schema.
    pub fn refine_section(
        &self,
        schema: &mut LocalSchema,
        section_id: &SectionId,
        entities: &[(String, String)],
        triples: &[(String, String, String)],
    ) -> Result<RefineReport, RefinerError> {
        let mut report = RefineReport::default();
        let mut local: BTreeMap<String, u64> = BTreeMap::new();
        for (name, label) in entities {
            let decision = self.refine_entity(schema, name, label, section_id)?;
            local.insert(name.clone(), decision.element_id);
            report.decisions.push((name.clone(), decision));
        }
        for (h, r, t) in triples {
            let (Some(&head), Some(&tail)) = (local.get(h), local.get(t)) else {
                log::warn!("{section_id}: dropping triple ({h}, {r}, {t}) with unknown entity");
                report.discarded.push((h.clone(), r.clone(), t.clone()));
                continue;
            };
            if !schema.relations.contains_key(r) {
                let v = self.gateway.embed_one(r)?;
                schema.add_relation(r, v)?;
            }
            report
                .triple_ids
                .push(schema.add_triple(head, r, tail, section_id)?);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sid(s: &str) -> SectionId {
        SectionId::parse(s).unwrap()
    }

    #[test]
    fn lemma_examples() {
        assert_eq!(lemmatize("ExcavationWork"), "excavation work");
        assert_eq!(lemmatize("guardrails"), "guardrail");
        assert_eq!(lemmatize("OSHA"), "OSHA");
        assert_eq!(lemmatize("Heavy Rains"), "heavy rain");
        assert_eq!(lemmatize("trenches"), "trench");
        assert_eq!(lemmatize("ladder_batteries"), "ladder battery");
        assert_eq!(lemmatize("boxes"), "box");
        assert_eq!(lemmatize("glasses"), "glass");
        assert_eq!(lemmatize("safety glass"), "safety glass");
        assert_eq!(lemmatize("employees"), "employee");
        assert_eq!(lemmatize("workmen"), "workman");
        assert_eq!(lemmatize("OSHAStandards"), "OSHA standard");
        assert_eq!(lemmatize("PPEs"), "PPE");
        assert_eq!(lemmatize("lens"), "lens");
        assert_eq!(lemmatize("status"), "status");
        assert_eq!(lemmatize("gas"), "gas");
        assert_eq!(lemmatize("series"), "series");
        assert_eq!(lemmatize("scaffolds  "), "scaffold");
    }

    #[test]
    fn proper_noun_allowlist() {
        let l = Lemmatizer::new(["McDonald", "Washington"]);
        assert_eq!(l.lemmatize("mcdonald ladders"), "McDonald ladder");
        assert_eq!(l.lemmatize("Washington"), "Washington");
        assert_eq!(l.lemmatize(&l.lemmatize("McDonald")), "McDonald");
    }

    proptest! {
        #[test]
        fn lemmatize_is_idempotent(name in "[A-Za-z_ ]{1,30}") {
            let once = lemmatize(&name);
            prop_assert_eq!(lemmatize(&once), once.clone());
        }

        #[test]
        fn singularize_is_idempotent(w in "[a-z]{1,12}") {
            let once = singularize(&w);
            prop_assert_eq!(singularize(&once), once.clone());
        }
    }

    fn unit(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn merge_paths() {
        let mut s = LocalSchema::new(4);
        let a = sid("1926.651(a)");
        let b = sid("1926.651(b)");
        let d = s
            .refine_with("Excavations", "excavation", "Activity", &a, 0.85, |_| {
                Ok(unit(4, 0))
            })
            .unwrap();
        assert_eq!(d.kind, MergeKind::InsertNew);
        let d = s
            .refine_with("excavation", "excavation", "Activity", &b, 0.85, |_| {
                panic!("no embedding on exact match")
            })
            .unwrap();
        assert_eq!(d.kind, MergeKind::ExactMerge);
        assert_eq!(s.entity(0).unwrap().section_ids.len(), 2);
        // near-duplicate above tau merges into the argmax
        let near = vec![0.95, 0.312_249_899_919_871_86, 0.0, 0.0];
        let d = s
            .refine_with("dig", "dig", "Activity", &b, 0.85, |_| Ok(near.clone()))
            .unwrap();
        assert_eq!(d.kind, MergeKind::SimilarityMerge);
        assert_eq!(d.element_id, 0);
        assert!((d.similarity.unwrap() - 0.95).abs() < 1e-12);
        // below tau inserts
        let d = s
            .refine_with("rain", "rain", "Hazard", &b, 0.85, |_| Ok(unit(4, 1)))
            .unwrap();
        assert_eq!(d.kind, MergeKind::InsertNew);
        assert_eq!(d.element_id, 1);
        assert_eq!(s.entities().len(), 2);
    }

    #[test]
    fn similarity_ties_go_to_earliest() {
        let mut s = LocalSchema::new(2);
        let a = sid("1926.1");
        s.refine_with("x", "x", "L", &a, 0.5, |_| Ok(vec![1.0, 0.0]))
            .unwrap();
        s.refine_with("y", "y", "L", &a, 0.5, |_| Ok(vec![0.0, 1.0]))
            .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let d = s
            .refine_with("z", "z", "L", &a, 0.7, |_| Ok(vec![h, h]))
            .unwrap();
        assert_eq!(d.kind, MergeKind::SimilarityMerge);
        assert_eq!(d.element_id, 0);
    }

    #[test]
    fn triple_slots_are_positional() {
        let mut s = LocalSchema::new(4);
        let a = sid("1926.651(h)(1)");
        let h = vec![1.0, 2.0, 3.0, 4.0];
        let t = vec![5.0, 6.0, 7.0, 8.0];
        let r = vec![9.0, 10.0, 11.0, 12.0];
        s.refine_with("excavation", "excavation", "A", &a, 1.0, |_| Ok(h.clone()))
            .unwrap();
        s.refine_with("heavy rain", "heavy rain", "H", &a, 1.0, |_| Ok(t.clone()))
            .unwrap();
        s.add_relation("subject_to", r.clone()).unwrap();
        let id = s.add_triple(0, "subject_to", 1, &a).unwrap();
        let v = &s.triples()[id as usize].triple_embedding;
        assert_eq!(v.len(), 12);
        assert_eq!(&v[0..4], &h[..]);
        assert_eq!(&v[4..8], &r[..]);
        assert_eq!(&v[8..12], &t[..]);
        let swapped = build_triple_embedding(&t, &r, &h).unwrap();
        assert_ne!(&swapped, v);
        // same triple from another section extends its sections
        let again = s
            .add_triple(0, "subject_to", 1, &sid("1926.651(h)(2)"))
            .unwrap();
        assert_eq!(again, id);
        assert_eq!(s.triples()[0].section_ids.len(), 2);
        assert_eq!(s.entity(0).unwrap().head_count, 2);
        assert_eq!(s.entity(1).unwrap().tail_count, 2);
    }

    #[test]
    fn section_driver_discards_unknown_names() {
        let gw = Gateway::mock();
        let refiner = Refiner::new(&gw, &RefinerConfig::default()).unwrap();
        let mut s = LocalSchema::new(gw.embedding_dim());
        let a = sid("1926.651(h)(1)");
        let report = refiner
            .refine_section(
                &mut s,
                &a,
                &[
                    ("Excavation".into(), "Activity".into()),
                    ("heavy rains".into(), "Hazard".into()),
                ],
                &[
                    (
                        "Excavation".into(),
                        "subject_to".into(),
                        "heavy rains".into(),
                    ),
                    ("Excavation".into(), "subject_to".into(), "storm".into()),
                ],
            )
            .unwrap();
        assert_eq!(report.triple_ids, vec![0]);
        assert_eq!(report.discarded.len(), 1);
        assert!(s.entity_by_lemma("heavy rain").is_some());
        assert_eq!(s.relations().len(), 1);
        assert!(Refiner::new(
            &gw,
            &RefinerConfig {
                tau: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn serde_then_restore() {
        let mut s = LocalSchema::new(2);
        let a = sid("1926.1");
        s.refine_with("x", "x", "L", &a, 1.0, |_| Ok(vec![1.0, 0.0]))
            .unwrap();
        s.refine_with("y", "y", "L", &a, 1.0, |_| Ok(vec![0.0, 1.0]))
            .unwrap();
        s.add_relation("r", vec![0.6, 0.8]).unwrap();
        s.add_triple(0, "r", 1, &a).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let mut back: LocalSchema = serde_json::from_str(&json).unwrap();
        back.restore(
            s.entities()
                .iter()
                .map(|e| (e.element_id, e.embedding.clone()))
                .collect(),
            s.triples()
                .iter()
                .map(|t| (t.triple_id, t.triple_embedding.clone()))
                .collect(),
        )
        .unwrap();
        assert_eq!(back, s);
    }
}

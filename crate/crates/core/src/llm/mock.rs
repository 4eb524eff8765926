//! Deterministic offline provider.
//!
//! Chat replies come from fixtures keyed by template and either the SHA-256
//! of the rendered user text or the plain value of the template's primary
//! slot (section id or question). Requests with no fixture fall back to a
//! rule-based responder unless the provider is strict. Embeddings are a
//! seeded hash of the input expanded to `dim` reals and L2-normalized,
//! with optional per-text overrides.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::prompts::sha256_hex;
use super::{heuristic, ChatRequest, Embedding, LlmError, Provider, TemplateId};
use crate::vector::normalize;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKey {
    /// SHA-256 hex of the rendered user text.
    UserSha256(String),
    /// Value of the template's primary slot.
    Slot(String),
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub template: TemplateId,
    #[serde(flatten)]
    pub key: FixtureKey,
    /// Returned verbatim when a JSON string, serialized otherwise.
    pub response: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockFixtures {
    entries: BTreeMap<(TemplateId, FixtureKey), Value>,
}

impl MockFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, template: TemplateId, key: FixtureKey, response: Value) {
        self.entries.insert((template, key), response);
    }

    pub fn insert_for_slot(&mut self, template: TemplateId, slot_value: &str, response: Value) {
        self.insert(template, FixtureKey::Slot(slot_value.to_string()), response);
    }

    pub fn insert_for_user_text(&mut self, template: TemplateId, user_text: &str, response: Value) {
        self.insert(
            template,
            FixtureKey::UserSha256(sha256_hex(user_text)),
            response,
        );
    }

    pub fn extend(&mut self, other: MockFixtures) {
        self.entries.extend(other.entries);
    }

    fn lookup(&self, request: &ChatRequest) -> Option<&Value> {
        let rendered = FixtureKey::UserSha256(sha256_hex(&request.user));
        if let Some(v) = self.entries.get(&(request.template, rendered)) {
            return Some(v);
        }
        let slot = request.slots.get(request.template.primary_slot())?;
        self.entries
            .get(&(request.template, FixtureKey::Slot(slot.clone())))
    }

    pub fn entries(&self) -> impl Iterator<Item = FixtureEntry> + '_ {
        self.entries
            .iter()
            .map(|((template, key), response)| FixtureEntry {
                template: *template,
                key: key.clone(),
                response: response.clone(),
            })
    }

    pub fn read_jsonl(path: &Path) -> Result<MockFixtures, LlmError> {
        let file = std::fs::File::open(path).map_err(|e| {
            LlmError::InvalidConfig(format!("fixture file {}: {e}", path.display()))
        })?;
        let mut out = MockFixtures::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| {
                LlmError::InvalidConfig(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            out.insert(entry.template, entry.key, entry.response);
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for entry in self.entries() {
            serde_json::to_writer(&mut file, &entry)?;
            file.write_all(b"\n")?;
        }
        file.flush()
    }
}

pub struct MockProvider {
    dim: usize,
    seed: u64,
    fixtures: MockFixtures,
    vectors: HashMap<String, Embedding>,
    strict: BTreeSet<TemplateId>,
    fail_chat: bool,
    fail_embed: bool,
    latency: Duration,
}

impl MockProvider {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            seed: 0,
            fixtures: MockFixtures::new(),
            vectors: HashMap::new(),
            strict: BTreeSet::new(),
            fail_chat: false,
            fail_embed: false,
            latency: Duration::ZERO,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_fixtures(mut self, fixtures: MockFixtures) -> Self {
        self.fixtures.extend(fixtures);
        self
    }

    /// Missing fixtures become provider errors instead of rule-based replies.
    pub fn strict(self) -> Self {
        self.strict_for(TemplateId::ALL)
    }

    /// Like [`MockProvider::strict`], for the given templates only.
    pub fn strict_for<I: IntoIterator<Item = TemplateId>>(mut self, templates: I) -> Self {
        self.strict.extend(templates);
        self
    }

    /// Every chat call fails with a provider error.
    pub fn failing_chat(mut self) -> Self {
        self.fail_chat = true;
        self
    }

    pub fn failing_embed(mut self) -> Self {
        self.fail_embed = true;
        self
    }

    /// Sleeps this long before every chat reply.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Pins the embedding of `text`; the vector is L2-normalized.
    pub fn with_vector(mut self, text: &str, mut vector: Embedding) -> Self {
        assert_eq!(
            vector.len(),
            self.dim,
            "override for {text:?} has wrong length"
        );
        normalize(&mut vector).expect("override vector must be nonzero and finite");
        self.vectors.insert(text.to_string(), vector);
        self
    }

    pub fn hash_embedding(&self, text: &str) -> Embedding {
        hash_embedding(text, self.dim, self.seed)
    }
}

/// Seeded hash of `text` expanded to `dim` uniform reals, unit length.
pub fn hash_embedding(text: &str, dim: usize, seed: u64) -> Embedding {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    loop {
        let mut v: Embedding = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if normalize(&mut v).is_ok() {
            return v;
        }
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if self.fail_chat {
            return Err(LlmError::Provider(
                "mock provider: injected chat failure".into(),
            ));
        }
        if let Some(value) = self.fixtures.lookup(request) {
            return Ok(match value {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            });
        }
        if self.strict.contains(&request.template) {
            return Err(LlmError::Provider(format!(
                "mock provider: no fixture for {} ({}={:?})",
                request.template,
                request.template.primary_slot(),
                request.slots.get(request.template.primary_slot())
            )));
        }
        Ok(heuristic::respond(request).to_string())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, LlmError> {
        if self.fail_embed {
            return Err(LlmError::Provider(
                "mock provider: injected embedding failure".into(),
            ));
        }
        Ok(texts
            .iter()
            .map(|t| match self.vectors.get(t) {
                Some(v) => v.clone(),
                None => self.hash_embedding(t),
            })
            .collect())
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{slots, Gateway, ProviderConfig};
    use crate::vector::{cosine_similarity, norm};
    use serde_json::json;
    use std::sync::Arc;

    fn gateway(provider: MockProvider) -> Gateway {
        Gateway::new(Arc::new(provider), ProviderConfig::mock()).unwrap()
    }

    #[test]
    fn fixture_pass_through() {
        let mut fixtures = MockFixtures::new();
        let reply = json!({"entities": ["excavation work"], "triples": []});
        fixtures.insert_for_slot(TemplateId::QueryDecompose, "Q1", reply.clone());
        let gw = gateway(MockProvider::new(64).with_fixtures(fixtures).strict());
        let v = gw
            .chat(
                TemplateId::QueryDecompose,
                &slots([("question", "Q1".to_string())]),
            )
            .unwrap();
        assert_eq!(v, reply);
        assert!(matches!(
            gw.chat(
                TemplateId::QueryDecompose,
                &slots([("question", "Q2".to_string())])
            ),
            Err(LlmError::Provider(_))
        ));
    }

    #[test]
    fn rendered_text_key_wins() {
        let gw = Gateway::mock();
        let b = slots([("question", "Q".to_string())]);
        let rendered = gw
            .prompts()
            .get(TemplateId::QueryDecompose)
            .render(&b)
            .unwrap();
        let mut fixtures = MockFixtures::new();
        fixtures.insert_for_slot(
            TemplateId::QueryDecompose,
            "Q",
            json!({"entities": ["a"], "triples": []}),
        );
        fixtures.insert_for_user_text(
            TemplateId::QueryDecompose,
            &rendered,
            json!({"entities": ["b"], "triples": []}),
        );
        let gw = gateway(MockProvider::new(64).with_fixtures(fixtures));
        assert_eq!(
            gw.chat(TemplateId::QueryDecompose, &b).unwrap()["entities"][0],
            "b"
        );
    }

    #[test]
    fn heading_fragment_passes_through() {
        let gw = Gateway::mock();
        let heading = "Specific excavation requirements";
        let v = gw
            .chat(
                TemplateId::ContentPrune,
                &slots([("section_id", "1926.651".into()), ("text", heading.into())]),
            )
            .unwrap();
        assert_eq!(v, json!({"sentences": [heading]}));
    }

    #[test]
    fn chat_is_byte_stable() {
        let b = slots([(
            "question",
            "How to protect excavation work from rainstorm hazard?".into(),
        )]);
        let first = Gateway::mock()
            .chat(TemplateId::QueryDecompose, &b)
            .unwrap()
            .to_string();
        for _ in 0..3 {
            assert_eq!(
                Gateway::mock()
                    .chat(TemplateId::QueryDecompose, &b)
                    .unwrap()
                    .to_string(),
                first
            );
        }
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let gw = Gateway::mock();
        let a = gw.embed(&["x".to_string()]).unwrap();
        let b = gw.embed(&["x".to_string()]).unwrap();
        assert_eq!(a, b);
        let many = gw
            .embed(&["a".to_string(), "b".to_string(), "c".to_string()])
            .unwrap();
        assert_eq!(many.len(), 3);
        assert!(many
            .iter()
            .all(|v| v.len() == 64 && (norm(v) - 1.0).abs() < 1e-12));
        let w = gw.embed_one("excavation work").unwrap();
        assert!((cosine_similarity(&w, &w).unwrap() - 1.0).abs() <= 1e-12);
        assert_ne!(gw.embed_one("excavation").unwrap(), w);
    }

    #[test]
    fn seed_changes_vectors() {
        assert_ne!(hash_embedding("x", 16, 0), hash_embedding("x", 16, 1));
    }

    #[test]
    fn vector_override() {
        let mut v = vec![0.0; 64];
        v[0] = 2.0;
        let gw = gateway(MockProvider::new(64).with_vector("pinned", v));
        let e = gw.embed_one("pinned").unwrap();
        assert_eq!(e[0], 1.0);
    }

    #[test]
    fn failure_injection() {
        let gw = gateway(MockProvider::new(64).failing_chat());
        assert!(matches!(
            gw.chat(
                TemplateId::QueryDecompose,
                &slots([("question", "q".into())])
            ),
            Err(LlmError::Provider(_))
        ));
    }

    #[test]
    fn fixture_file_round_trip() {
        let mut fixtures = MockFixtures::new();
        fixtures.insert_for_slot(
            TemplateId::AnswerSynthesize,
            "Q",
            json!({"relevant": [], "summary": "s"}),
        );
        fixtures.insert_for_user_text(TemplateId::ContentPrune, "text", json!("prose reply"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        fixtures.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""slot":"Q""#));
        assert!(text.contains(r#""user_sha256":""#));
        assert_eq!(MockFixtures::read_jsonl(&path).unwrap(), fixtures);
    }
}

//! Vector tables with exact top-k search, and the on-disk bundle.
//!
//! A bundle directory holds `corpus.json`, `dng.jsonl`, `schema.json`,
//! `entity_vectors.jsonl`, `triple_vectors.jsonl` and `manifest.json`. The
//! manifest records the SHA-256 of every other file; loading verifies them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::SectionNode;
use crate::dng::{Dng, DngStats};
use crate::llm::Embedding;
use crate::refiner::LocalSchema;
use crate::section_id::SectionId;
use crate::vector::{cosine_similarity, VectorError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt bundle file {file}: {reason}")]
    CorruptBundle { file: String, reason: String },
    #[error("vector of length {got} in a table of dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate row id {0}")]
    DuplicateRow(u64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRow {
    pub row_id: u64,
    pub label: String,
    pub vector: Embedding,
    pub payload: BTreeSet<SectionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub row_id: u64,
    pub label: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    pub hits: Vec<Hit>,
    pub k: usize,
    pub min_sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    dim: usize,
    rows: Vec<VectorRow>,
    index: BTreeMap<u64, usize>,
}

impl VectorTable {
    pub fn new(dim: usize) -> VectorTable {
        VectorTable {
            dim,
            rows: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[VectorRow] {
        &self.rows
    }

    pub fn row(&self, row_id: u64) -> Option<&VectorRow> {
        self.index.get(&row_id).map(|&i| &self.rows[i])
    }

    pub fn push(&mut self, row: VectorRow) -> Result<(), StoreError> {
        if row.vector.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: row.vector.len(),
            });
        }
        if self.index.contains_key(&row.row_id) {
            return Err(StoreError::DuplicateRow(row.row_id));
        }
        self.index.insert(row.row_id, self.rows.len());
        self.rows.push(row);
        Ok(())
    }

    /// Exhaustive scan: rows with similarity strictly above `min_sim`, best
    /// first, ties by ascending row id, at most `k`.
    pub fn top_k(&self, query: &[f64], k: usize, min_sim: f64) -> Result<TopKResult, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if query.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut hits = Vec::new();
        for row in &self.rows {
            let similarity = cosine_similarity(query, &row.vector)?;
            if similarity > min_sim {
                hits.push(Hit {
                    row_id: row.row_id,
                    label: row.label.clone(),
                    similarity,
                });
            }
        }
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.row_id.cmp(&b.row_id))
        });
        hits.truncate(k);
        Ok(TopKResult { hits, k, min_sim })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(dim: usize, text: &str) -> Result<VectorTable, String> {
        let mut table = VectorTable::new(dim);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: VectorRow =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            table
                .push(row)
                .map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(table)
    }
}

/// Entity rows keyed by element id, labelled with the lemma.
pub fn entity_table(schema: &LocalSchema) -> VectorTable {
    let mut t = VectorTable::new(schema.dim);
    for e in schema.entities() {
        t.push(VectorRow {
            row_id: e.element_id,
            label: e.lemma.clone(),
            vector: e.embedding.clone(),
            payload: e.section_ids.clone(),
        })
        .expect("schema entities have unique ids and dimension d");
    }
    t
}

/// Triple rows keyed by triple id, labelled `head | relation | tail`.
pub fn triple_table(schema: &LocalSchema) -> VectorTable {
    let mut t = VectorTable::new(schema.dim * 3);
    for tr in schema.triples() {
        let head = &schema.entity(tr.head_id).expect("head exists").lemma;
        let tail = &schema.entity(tr.tail_id).expect("tail exists").lemma;
        t.push(VectorRow {
            row_id: tr.triple_id,
            label: format!("{head} | {} | {tail}", tr.relation),
            vector: tr.triple_embedding.clone(),
            payload: tr.section_ids.clone(),
        })
        .expect("schema triples have unique ids and dimension 3d");
    }
    t
}

pub const CORPUS_FILE: &str = "corpus.json";
pub const DNG_FILE: &str = "dng.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const ENTITY_VECTORS_FILE: &str = "entity_vectors.jsonl";
pub const TRIPLE_VECTORS_FILE: &str = "triple_vectors.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const DATA_FILES: [&str; 5] = [
    CORPUS_FILE,
    DNG_FILE,
    SCHEMA_FILE,
    ENTITY_VECTORS_FILE,
    TRIPLE_VECTORS_FILE,
];
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub sections: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    #[serde(flatten)]
    pub graph: DngStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub triple_dim: usize,
    pub counts: Counts,
    /// File name to SHA-256 hex.
    pub files: BTreeMap<String, String>,
    /// Template name to SHA-256 hex of the prompt used for the build.
    pub prompts: BTreeMap<String, String>,
    /// Free-form build settings (provider, model, threshold).
    pub build: BTreeMap<String, String>,
    /// SHA-256 hex of this manifest serialized with an empty `checksum`.
    pub checksum: String,
}

impl Manifest {
    fn compute_checksum(&self) -> String {
        let blank = Manifest {
            checksum: String::new(),
            ..self.clone()
        };
        sha256_hex(
            serde_json::to_string(&blank)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }
}

/// Everything retrieval needs, loaded read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub corpus: Vec<SectionNode>,
    pub dng: Dng,
    pub schema: LocalSchema,
    pub entity_table: VectorTable,
    pub triple_table: VectorTable,
    pub prompts: BTreeMap<String, String>,
    pub build: BTreeMap<String, String>,
    by_id: BTreeMap<SectionId, usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corrupt(file: &str, reason: impl ToString) -> StoreError {
    StoreError::CorruptBundle {
        file: file.to_string(),
        reason: reason.to_string(),
    }
}

impl Bundle {
    pub fn new(
        corpus: Vec<SectionNode>,
        dng: Dng,
        schema: LocalSchema,
        prompts: BTreeMap<String, String>,
        build: BTreeMap<String, String>,
    ) -> Bundle {
        let entity_table = entity_table(&schema);
        let triple_table = triple_table(&schema);
        let by_id = corpus
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        Bundle {
            corpus,
            dng,
            schema,
            entity_table,
            triple_table,
            prompts,
            build,
            by_id,
        }
    }

    pub fn section(&self, id: &SectionId) -> Option<&SectionNode> {
        self.by_id.get(id).map(|&i| &self.corpus[i])
    }

    fn counts(&self) -> Counts {
        Counts {
            sections: self.corpus.len(),
            entities: self.schema.entities().len(),
            relations: self.schema.relations().len(),
            triples: self.schema.triples().len(),
            graph: self.dng.stats(),
        }
    }

    fn render_files(&self) -> Vec<(&'static str, String)> {
        let mut corpus = serde_json::to_string_pretty(&self.corpus).expect("corpus serializes");
        corpus.push('\n');
        let mut schema = serde_json::to_string_pretty(&self.schema).expect("schema serializes");
        schema.push('\n');
        vec![
            (CORPUS_FILE, corpus),
            (DNG_FILE, self.dng.to_jsonl()),
            (SCHEMA_FILE, schema),
            (ENTITY_VECTORS_FILE, self.entity_table.to_jsonl()),
            (TRIPLE_VECTORS_FILE, self.triple_table.to_jsonl()),
        ]
    }

    /// The manifest `save` would write.
    pub fn manifest(&self) -> Manifest {
        let files = self
            .render_files()
            .into_iter()
            .map(|(name, text)| (name.to_string(), sha256_hex(text.as_bytes())))
            .collect();
        let mut manifest = Manifest {
            format_version: FORMAT_VERSION,
            embedding_dim: self.schema.dim,
            triple_dim: self.schema.dim * 3,
            counts: self.counts(),
            files,
            prompts: self.prompts.clone(),
            build: self.build.clone(),
            checksum: String::new(),
        };
        manifest.checksum = manifest.compute_checksum();
        manifest
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest, StoreError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = self.render_files();
        for (name, text) in &files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io(&path))?;
        }
        let manifest = self.manifest();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(io(&path))?;
        Ok(manifest)
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text =
            std::fs::read_to_string(&path).map_err(|source| StoreError::Io { path, source })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| corrupt(MANIFEST_FILE, e))?;
        if manifest.checksum != manifest.compute_checksum() {
            return Err(corrupt(MANIFEST_FILE, "checksum mismatch"));
        }
        Ok(manifest)
    }

    /// Loads and verifies a bundle written by [`Bundle::save`].
    pub fn load(dir: &Path) -> Result<Bundle, StoreError> {
        let manifest = Bundle::read_manifest(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(corrupt(
                MANIFEST_FILE,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        let mut texts = BTreeMap::new();
        for name in DATA_FILES {
            let expected = manifest
                .files
                .get(name)
                .ok_or_else(|| corrupt(MANIFEST_FILE, format!("no checksum for {name}")))?;
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| corrupt(name, e))?;
            if &sha256_hex(&bytes) != expected {
                return Err(corrupt(name, "checksum mismatch"));
            }
            texts.insert(
                name,
                String::from_utf8(bytes).map_err(|e| corrupt(name, e))?,
            );
        }
        let corpus: Vec<SectionNode> =
            serde_json::from_str(&texts[CORPUS_FILE]).map_err(|e| corrupt(CORPUS_FILE, e))?;
        let dng = Dng::from_jsonl(&texts[DNG_FILE]).map_err(|e| corrupt(DNG_FILE, e))?;
        let mut schema: LocalSchema =
            serde_json::from_str(&texts[SCHEMA_FILE]).map_err(|e| corrupt(SCHEMA_FILE, e))?;
        let entities = VectorTable::from_jsonl(manifest.embedding_dim, &texts[ENTITY_VECTORS_FILE])
            .map_err(|e| corrupt(ENTITY_VECTORS_FILE, e))?;
        let triples = VectorTable::from_jsonl(manifest.triple_dim, &texts[TRIPLE_VECTORS_FILE])
            .map_err(|e| corrupt(TRIPLE_VECTORS_FILE, e))?;
        if schema.dim != manifest.embedding_dim {
            return Err(corrupt(SCHEMA_FILE, "dimension differs from manifest"));
        }
        schema
            .restore(
                entities
                    .rows()
                    .iter()
                    .map(|r| (r.row_id, r.vector.clone()))
                    .collect(),
                triples
                    .rows()
                    .iter()
                    .map(|r| (r.row_id, r.vector.clone()))
                    .collect(),
            )
            .map_err(|e| corrupt(SCHEMA_FILE, e))?;
        let bundle = Bundle::new(
            corpus,
            dng,
            schema,
            manifest.prompts.clone(),
            manifest.build.clone(),
        );
        if bundle.entity_table != entities {
            return Err(corrupt(ENTITY_VECTORS_FILE, "rows disagree with schema"));
        }
        if bundle.triple_table != triples {
            return Err(corrupt(TRIPLE_VECTORS_FILE, "rows disagree with schema"));
        }
        if bundle.by_id.len() != bundle.corpus.len() {
            return Err(corrupt(CORPUS_FILE, "duplicate section id"));
        }
        if bundle.counts() != manifest.counts {
            return Err(corrupt(MANIFEST_FILE, "counts disagree with contents"));
        }
        Ok(bundle)
    }
}

//! Corpus to bundle: extraction, entity refinement and graph assembly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{detect_cross_references, index_by_id, IngestError, SectionNode};
use crate::dng::{CrossRefDelta, Dng, DngError, Provenance};
use crate::eng::{EngBuilder, EngConfig, SectionReport, SectionStatus};
use crate::llm::{Gateway, LlmError};
use crate::refiner::{Lemmatizer, LocalSchema, RefineReport, Refiner, RefinerConfig, RefinerError};
use crate::section_id::SectionId;
use crate::store::{Bundle, Manifest, StoreError};

pub const RUN_REPORT_FILE: &str = "run_report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[ingest] {0}")]
    Ingest(#[from] IngestError),
    #[error("[extract] {0}")]
    Extract(LlmError),
    #[error("[refine] {0}")]
    Refine(#[from] RefinerError),
    #[error("[graph] {0}")]
    Graph(#[from] DngError),
    #[error("[store] {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub eng: EngConfig,
    pub refiner: RefinerConfig,
}

/// Everything that happened during a build. Holds timings, so it is kept
/// out of the bundle checksums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sections: usize,
    pub failed_sections: Vec<SectionId>,
    pub section_reports: Vec<SectionReport>,
    pub refinement: Vec<(SectionId, RefineReport)>,
    pub cross_references: CrossRefDelta,
    pub prompts: BTreeMap<String, String>,
    pub provider: String,
}

impl RunReport {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(dir.join(RUN_REPORT_FILE), text)
    }
}

pub struct BuildOutput {
    pub bundle: Bundle,
    pub report: RunReport,
}

impl BuildOutput {
    /// Writes the bundle and, beside it, the run report.
    pub fn save(&self, dir: &Path) -> Result<Manifest, PipelineError> {
        let manifest = self.bundle.save(dir)?;
        self.report.write(dir).map_err(|source| StoreError::Io {
            path: dir.join(RUN_REPORT_FILE),
            source,
        })?;
        Ok(manifest)
    }
}

pub fn build_bundle(
    corpus: Vec<SectionNode>,
    gateway: &Gateway,
    config: &BuildConfig,
) -> Result<BuildOutput, PipelineError> {
    index_by_id(&corpus)?;
    let mut corpus = corpus;
    corpus.sort_by_key(|n| n.order_index);

    let lemmatizer = Lemmatizer::new(&config.refiner.proper_nouns);
    let eng =
        EngBuilder::new(gateway, config.eng.clone(), lemmatizer).map_err(PipelineError::Extract)?;
    let run = eng.build_corpus(&corpus);

    let refiner = Refiner::new(gateway, &config.refiner)?;
    let mut schema = LocalSchema::new(gateway.embedding_dim());
    let mut refinement = Vec::new();
    for x in &run.extractions {
        let entities: Vec<(String, String)> = x
            .entities
            .iter()
            .map(|e| (e.name.clone(), e.label.clone()))
            .collect();
        let triples: Vec<(String, String, String)> = x
            .triples
            .iter()
            .map(|t| (t.head.clone(), t.relation.clone(), t.tail.clone()))
            .collect();
        let report = refiner.refine_section(&mut schema, &x.section_id, &entities, &triples)?;
        refinement.push((x.section_id.clone(), report));
    }

    let mut dng = Dng::build_hierarchy(&corpus)?;
    let mut refs = Vec::new();
    for x in &run.extractions {
        for to in &x.referenced_sections {
            refs.push((x.section_id.clone(), to.clone(), Provenance::Llm));
        }
    }
    for node in &corpus {
        for to in detect_cross_references(&node.full_text(), Some(&node.id)) {
            refs.push((node.id.clone(), to, Provenance::Pattern));
        }
    }
    let cross_references = dng.add_cross_references(&refs);

    let prompts = gateway.prompts().checksums();
    let cfg = gateway.config();
    let build = BTreeMap::from([
        ("provider".to_string(), gateway.provider_name().to_string()),
        ("model_name".to_string(), cfg.model_name.clone()),
        ("embedding_model".to_string(), cfg.embedding_model.clone()),
        ("temperature".to_string(), cfg.temperature.to_string()),
        ("tau".to_string(), config.refiner.tau.to_string()),
        (
            "validation_passes".to_string(),
            config.eng.validation_passes.to_string(),
        ),
    ]);
    let failed_sections = run
        .reports
        .iter()
        .filter(|r| matches!(r.status, SectionStatus::Failed { .. }))
        .map(|r| r.section_id.clone())
        .collect();
    let report = RunReport {
        sections: corpus.len(),
        failed_sections,
        section_reports: run.reports,
        refinement,
        cross_references,
        prompts: prompts.clone(),
        provider: gateway.provider_name().to_string(),
    };
    let bundle = Bundle::new(corpus, dng, schema, prompts, build);
    Ok(BuildOutput { bundle, report })
}

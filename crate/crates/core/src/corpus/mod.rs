//! Regulation text ingestion: marked plaintext, HTML pages, two-source
//! reconciliation and pattern-based cross-reference detection.

mod fetch;
mod html;
mod reconcile;
mod xref;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::section_id::{self, Depth, MalformedId, SectionId};

pub use fetch::{fetch_html, FetchError, FetchedDocument, DEFAULT_FETCH_TIMEOUT};
pub use html::html_to_marked_text;
pub use reconcile::{reconcile, Discrepancy, ReconcileReport};
pub use xref::detect_cross_references;

/// One regulatory provision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionNode {
    #[serde(with = "section_id::expanded")]
    pub id: SectionId,
    pub title: Option<String>,
    pub body: String,
    pub source_url: Option<String>,
    pub order_index: usize,
}

impl SectionNode {
    pub fn is_heading_only(&self) -> bool {
        self.body.trim().is_empty()
    }

    /// Title and body joined the way they are shown to readers.
    pub fn full_text(&self) -> String {
        match (&self.title, self.body.trim().is_empty()) {
            (Some(t), true) => t.clone(),
            (Some(t), false) => format!("{t}\n{}", self.body),
            (None, _) => self.body.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Html,
    #[serde(alias = "text")]
    MarkedPlaintext,
}

/// What to do with text that precedes the first section marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrphanPolicy {
    /// Attach to the `<part>.<section>` node of the first marker.
    #[default]
    Attach,
    Reject,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub depth: Depth,
    pub orphans: OrphanPolicy,
    pub source_url: Option<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no sections found in input")]
    NoSectionsFound,
    #[error("text before the first section marker at line {line}: {excerpt:?}")]
    OrphanText { line: usize, excerpt: String },
    #[error("malformed section marker at line {line}: {text:?} ({source})")]
    MalformedMarker {
        line: usize,
        text: String,
        #[source]
        source: MalformedId,
    },
    #[error("section {id} at line {line} has neither title nor body")]
    EmptySection { line: usize, id: SectionId },
    #[error("section {0} appears more than once")]
    DuplicateSection(SectionId),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const MARKER: &str = "@@";

/// Parses a raw document into ordered section nodes.
pub fn extract_sections(
    raw: &str,
    format: SourceFormat,
    options: &ExtractOptions,
) -> Result<Vec<SectionNode>, IngestError> {
    match format {
        SourceFormat::MarkedPlaintext => parse_marked_text(raw, options),
        SourceFormat::Html => parse_marked_text(&html_to_marked_text(raw, options.depth), options),
    }
}

struct Pending {
    id: SectionId,
    title: Option<String>,
    body: Vec<String>,
    line: usize,
}

/// Parses the `@@ <section-id> | <optional title>` line format.
pub fn parse_marked_text(
    raw: &str,
    options: &ExtractOptions,
) -> Result<Vec<SectionNode>, IngestError> {
    let mut orphan: Vec<String> = Vec::new();
    let mut orphan_line = 0;
    let mut pending: Vec<Pending> = Vec::new();

    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix(MARKER) {
            let (id_text, title) = match rest.split_once('|') {
                Some((id, title)) => (id, Some(title.trim())),
                None => (rest, None),
            };
            let id = SectionId::parse_with(id_text, options.depth).map_err(|source| {
                IngestError::MalformedMarker {
                    line: line_no,
                    text: line.to_string(),
                    source,
                }
            })?;
            pending.push(Pending {
                id,
                title: title.filter(|t| !t.is_empty()).map(str::to_string),
                body: Vec::new(),
                line: line_no,
            });
        } else if let Some(current) = pending.last_mut() {
            current.body.push(line.to_string());
        } else if !line.trim().is_empty() {
            if orphan.is_empty() {
                orphan_line = line_no;
            }
            orphan.push(line.to_string());
        }
    }

    if pending.is_empty() {
        return Err(IngestError::NoSectionsFound);
    }

    if !orphan.is_empty() {
        let excerpt = orphan.join(" ");
        if options.orphans == OrphanPolicy::Reject {
            return Err(IngestError::OrphanText {
                line: orphan_line,
                excerpt,
            });
        }
        let base = pending[0].id.base();
        match pending.iter_mut().find(|p| p.id == base) {
            Some(p) => {
                let mut body = orphan.clone();
                body.append(&mut p.body);
                p.body = body;
            }
            None => {
                log::info!("attaching preamble text to synthetic node {base}");
                pending.insert(
                    0,
                    Pending {
                        id: base,
                        title: None,
                        body: orphan,
                        line: orphan_line,
                    },
                );
            }
        }
    }

    let mut nodes = Vec::with_capacity(pending.len());
    for (order_index, p) in pending.into_iter().enumerate() {
        let body = p.body.join("\n").trim().to_string();
        if body.is_empty() && p.title.is_none() {
            return Err(IngestError::EmptySection {
                line: p.line,
                id: p.id,
            });
        }
        nodes.push(SectionNode {
            id: p.id,
            title: p.title,
            body,
            source_url: options.source_url.clone(),
            order_index,
        });
    }
    Ok(nodes)
}

/// Renders nodes back into the marked-plaintext format.
pub fn to_marked_text(nodes: &[SectionNode]) -> String {
    let mut out = String::new();
    for node in nodes {
        out.push_str(MARKER);
        out.push(' ');
        out.push_str(node.id.canonical_text());
        if let Some(title) = &node.title {
            out.push_str(" | ");
            out.push_str(title);
        }
        out.push('\n');
        if !node.body.is_empty() {
            out.push_str(&node.body);
            out.push('\n');
        }
    }
    out
}

/// Checks id uniqueness and returns nodes keyed by id.
pub fn index_by_id(
    nodes: &[SectionNode],
) -> Result<BTreeMap<SectionId, &SectionNode>, IngestError> {
    let mut map = BTreeMap::new();
    for node in nodes {
        if map.insert(node.id.clone(), node).is_some() {
            return Err(IngestError::DuplicateSection(node.id.clone()));
        }
    }
    Ok(map)
}

pub fn read_corpus_json(path: &std::path::Path) -> Result<Vec<SectionNode>, IngestError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_corpus_json(path: &std::path::Path, nodes: &[SectionNode]) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(nodes)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> ExtractOptions {
        ExtractOptions::default()
    }

    #[test]
    fn three_markers_in_order() {
        let raw = "@@ 1926.651 | Specific excavation requirements.\n\
                   @@ 1926.651(h)(1)\nEmployees shall not work in excavations in which there is accumulated water.\n\
                   @@ 1926.651(h)(2) | Water removal\nIf water is controlled, the work shall be monitored.\n";
        let nodes = extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()).unwrap();
        let ids: Vec<_> = nodes.iter().map(|n| n.id.to_string()).collect();
        assert_eq!(ids, ["1926.651", "1926.651(h)(1)", "1926.651(h)(2)"]);
        assert_eq!(
            nodes[0].title.as_deref(),
            Some("Specific excavation requirements.")
        );
        assert!(nodes[0].is_heading_only());
        assert_eq!(nodes[2].title.as_deref(), Some("Water removal"));
        assert!(nodes.iter().enumerate().all(|(i, n)| n.order_index == i));
    }

    #[test]
    fn malformed_marker_reports_line() {
        let raw = "@@ 1926.651(h)\ntext\n@@ 1926.(a) | oops\nmore\n";
        match extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()) {
            Err(IngestError::MalformedMarker { line, text, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(text, "@@ 1926.(a) | oops");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_markers() {
        assert!(matches!(
            extract_sections("just prose\n", SourceFormat::MarkedPlaintext, &opts()),
            Err(IngestError::NoSectionsFound)
        ));
        assert!(matches!(
            extract_sections("", SourceFormat::MarkedPlaintext, &opts()),
            Err(IngestError::NoSectionsFound)
        ));
    }

    #[test]
    fn orphan_text_gets_preamble_node() {
        let raw = "Scope of this section.\n@@ 1926.651(a)\nSurface encumbrances.\n";
        let nodes = extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()).unwrap();
        assert_eq!(nodes[0].id.to_string(), "1926.651");
        assert_eq!(nodes[0].body, "Scope of this section.");
        assert_eq!(nodes[1].order_index, 1);

        let raw = "Preamble.\n@@ 1926.651(a)\nA.\n@@ 1926.651 | Title\nIntro.\n";
        let nodes = extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()).unwrap();
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[1].body, "Preamble.\nIntro.");

        let reject = ExtractOptions {
            orphans: OrphanPolicy::Reject,
            ..opts()
        };
        assert!(matches!(
            extract_sections(raw, SourceFormat::MarkedPlaintext, &reject),
            Err(IngestError::OrphanText { line: 1, .. })
        ));
    }

    #[test]
    fn empty_marker_rejected() {
        let raw = "@@ 1926.651(a)\n\n@@ 1926.651(b)\nBody.\n";
        assert!(matches!(
            extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()),
            Err(IngestError::EmptySection { line: 1, .. })
        ));
    }

    #[test]
    fn marked_text_round_trip() {
        let raw = "@@ 1926.651 | Title\n@@ 1926.651(a)\nLine one.\nLine two.\n";
        let nodes = extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()).unwrap();
        assert_eq!(to_marked_text(&nodes), raw);
    }

    #[test]
    fn corpus_json_fields() {
        let raw = "@@ 1926.651(a) | T\nBody.\n";
        let nodes = extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()).unwrap();
        let json: serde_json::Value = serde_json::to_value(&nodes).unwrap();
        let obj = json[0].as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["body", "id", "order_index", "source_url", "title"]);
        assert_eq!(json[0]["id"]["canonical_text"], "1926.651(a)");
        let back: Vec<SectionNode> = serde_json::from_value(json).unwrap();
        assert_eq!(back, nodes);
    }

    #[test]
    fn duplicate_ids_detected() {
        let raw = "@@ 1926.651(a)\nA.\n@@ 1926.651(a)\nB.\n";
        let nodes = extract_sections(raw, SourceFormat::MarkedPlaintext, &opts()).unwrap();
        assert!(matches!(
            index_by_id(&nodes),
            Err(IngestError::DuplicateSection(_))
        ));
    }
}

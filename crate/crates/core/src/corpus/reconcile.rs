use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::section_id::SectionId;

use super::SectionNode;

const EXCERPT_RADIUS: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub section_id: SectionId,
    /// Text around the first difference in source A; empty when A lacks the section.
    pub a_excerpt: String,
    pub b_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileReport {
    pub matched: bool,
    pub discrepancies: Vec<Discrepancy>,
}

/// Literal per-section comparison of two extractions of the same document,
/// after whitespace normalization. Discrepancies come out in id order.
pub fn reconcile(a: &[SectionNode], b: &[SectionNode]) -> ReconcileReport {
    let left = normalized(a);
    let right = normalized(b);
    let mut discrepancies = Vec::new();

    let mut ids: Vec<&SectionId> = left.keys().chain(right.keys()).collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        match (left.get(id), right.get(id)) {
            (Some(x), Some(y)) if x == y => {}
            (Some(x), Some(y)) => {
                let at = first_difference(x, y);
                discrepancies.push(Discrepancy {
                    section_id: id.clone(),
                    a_excerpt: excerpt(x, at),
                    b_excerpt: excerpt(y, at),
                });
            }
            (Some(x), None) => discrepancies.push(Discrepancy {
                section_id: id.clone(),
                a_excerpt: excerpt(x, 0),
                b_excerpt: String::new(),
            }),
            (None, Some(y)) => discrepancies.push(Discrepancy {
                section_id: id.clone(),
                a_excerpt: String::new(),
                b_excerpt: excerpt(y, 0),
            }),
            (None, None) => unreachable!(),
        }
    }
    ReconcileReport {
        matched: discrepancies.is_empty(),
        discrepancies,
    }
}

fn normalized(nodes: &[SectionNode]) -> BTreeMap<SectionId, Vec<char>> {
    nodes
        .iter()
        .map(|n| {
            let text = n
                .full_text()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            (n.id.clone(), text.chars().collect())
        })
        .collect()
}

fn first_difference(x: &[char], y: &[char]) -> usize {
    x.iter().zip(y).take_while(|(p, q)| p == q).count()
}

fn excerpt(text: &[char], at: usize) -> String {
    let start = at.saturating_sub(EXCERPT_RADIUS);
    let end = (at + EXCERPT_RADIUS).min(text.len());
    text[start.min(end)..end].iter().collect()
}

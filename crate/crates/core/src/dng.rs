//! Section-id graph: `has` edges from the numbering hierarchy and
//! `refers_to` edges from detected cross-references.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SectionNode;
use crate::section_id::SectionId;

#[derive(Debug, Error, PartialEq)]
pub enum DngError {
    #[error("duplicate section {0}")]
    DuplicateSection(SectionId),
    #[error("unknown section {0}")]
    UnknownSection(SectionId),
    #[error("{parent} is not the parent of {child}")]
    NotParent { parent: SectionId, child: SectionId },
    #[error("graph file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    Has,
    RefersTo,
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeLabel::Has => "has",
            EdgeLabel::RefersTo => "refers_to",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Grammar,
    Llm,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub has_text: bool,
    /// Referenced but absent from the corpus.
    pub dangling: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DngEdge {
    pub from: SectionId,
    pub to: SectionId,
    pub label: EdgeLabel,
    pub provenance: BTreeSet<Provenance>,
}

type Adjacency = BTreeMap<SectionId, BTreeMap<EdgeLabel, BTreeSet<SectionId>>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dng {
    nodes: BTreeMap<SectionId, NodeInfo>,
    edges: BTreeMap<(SectionId, SectionId, EdgeLabel), BTreeSet<Provenance>>,
    out_adj: Adjacency,
    in_adj: Adjacency,
}

/// Outcome of merging a batch of cross-references.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossRefDelta {
    pub added: usize,
    /// Edges already present that gained a provenance or were repeated.
    pub merged: usize,
    pub self_loops_skipped: usize,
    pub dangling: BTreeSet<SectionId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DngStats {
    pub nodes: usize,
    pub nodes_with_text: usize,
    pub dangling_nodes: usize,
    pub has_edges: usize,
    pub refers_to_edges: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Node {
        node: SectionId,
        has_text: bool,
        dangling: bool,
    },
    Edge(DngEdge),
}

impl Dng {
    pub fn new() -> Dng {
        Dng::default()
    }

    /// One node per section plus `has` edges to every ancestor-parent
    /// pair; ancestors absent from the corpus become text-less nodes.
    pub fn build_hierarchy(sections: &[SectionNode]) -> Result<Dng, DngError> {
        let mut g = Dng::new();
        for s in sections {
            if g.nodes.contains_key(&s.id) {
                return Err(DngError::DuplicateSection(s.id.clone()));
            }
            g.nodes.insert(
                s.id.clone(),
                NodeInfo {
                    has_text: !s.body.trim().is_empty()
                        || s.title.as_deref().is_some_and(|t| !t.trim().is_empty()),
                    dangling: false,
                },
            );
        }
        let ids: Vec<SectionId> = g.nodes.keys().cloned().collect();
        for id in ids {
            g.link_ancestors(&id, false);
        }
        Ok(g)
    }

    fn link_ancestors(&mut self, id: &SectionId, dangling: bool) {
        let mut child = id.clone();
        while let Some(parent) = child.parent_of() {
            self.nodes.entry(parent.clone()).or_insert(NodeInfo {
                has_text: false,
                dangling,
            });
            self.insert_edge(
                parent.clone(),
                child.clone(),
                EdgeLabel::Has,
                Provenance::Grammar,
            );
            child = parent;
        }
    }

    fn insert_edge(
        &mut self,
        from: SectionId,
        to: SectionId,
        label: EdgeLabel,
        provenance: Provenance,
    ) -> bool {
        let key = (from.clone(), to.clone(), label);
        let fresh = !self.edges.contains_key(&key);
        self.edges.entry(key).or_default().insert(provenance);
        if fresh {
            self.out_adj
                .entry(from.clone())
                .or_default()
                .entry(label)
                .or_default()
                .insert(to.clone());
            self.in_adj
                .entry(to)
                .or_default()
                .entry(label)
                .or_default()
                .insert(from);
        }
        fresh
    }

    /// Adds a node unless present; returns whether it was new.
    pub fn add_node(&mut self, id: SectionId, info: NodeInfo) -> bool {
        if self.nodes.contains_key(&id) {
            return false;
        }
        self.nodes.insert(id, info);
        true
    }

    /// Adds one edge between existing nodes. `has` edges must join a parent
    /// to its child; `refers_to` self-loops are ignored.
    pub fn add_edge(
        &mut self,
        from: &SectionId,
        to: &SectionId,
        label: EdgeLabel,
        provenance: Provenance,
    ) -> Result<bool, DngError> {
        for id in [from, to] {
            if !self.nodes.contains_key(id) {
                return Err(DngError::UnknownSection(id.clone()));
            }
        }
        match label {
            EdgeLabel::Has if to.parent_of().as_ref() != Some(from) => Err(DngError::NotParent {
                parent: from.clone(),
                child: to.clone(),
            }),
            EdgeLabel::RefersTo if from == to => Ok(false),
            _ => Ok(self.insert_edge(from.clone(), to.clone(), label, provenance)),
        }
    }

    /// Merges `refers_to` edges. Unknown sources and targets are added as
    /// flagged text-less nodes, with their ancestors.
    pub fn add_cross_references(
        &mut self,
        refs: &[(SectionId, SectionId, Provenance)],
    ) -> CrossRefDelta {
        let mut delta = CrossRefDelta::default();
        for (from, to, provenance) in refs {
            if from == to {
                delta.self_loops_skipped += 1;
                continue;
            }
            for id in [from, to] {
                if !self.nodes.contains_key(id) {
                    self.nodes.insert(
                        id.clone(),
                        NodeInfo {
                            has_text: false,
                            dangling: true,
                        },
                    );
                    self.link_ancestors(id, true);
                    delta.dangling.insert(id.clone());
                }
            }
            if self.insert_edge(from.clone(), to.clone(), EdgeLabel::RefersTo, *provenance) {
                delta.added += 1;
            } else {
                delta.merged += 1;
            }
        }
        delta
    }

    pub fn contains(&self, id: &SectionId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &SectionId) -> Option<NodeInfo> {
        self.nodes.get(id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&SectionId, &NodeInfo)> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = DngEdge> + '_ {
        self.edges
            .iter()
            .map(|((from, to, label), provenance)| DngEdge {
                from: from.clone(),
                to: to.clone(),
                label: *label,
                provenance: provenance.clone(),
            })
    }

    pub fn provenance(
        &self,
        from: &SectionId,
        to: &SectionId,
        label: EdgeLabel,
    ) -> Option<&BTreeSet<Provenance>> {
        self.edges.get(&(from.clone(), to.clone(), label))
    }

    fn adjacent(
        &self,
        id: &SectionId,
        label: EdgeLabel,
        direction: Direction,
    ) -> impl Iterator<Item = &SectionId> {
        let adj = match direction {
            Direction::Out => &self.out_adj,
            Direction::In => &self.in_adj,
        };
        adj.get(id)
            .and_then(|m| m.get(&label))
            .into_iter()
            .flatten()
    }

    /// Adjacent ids under one label, in canonical order.
    pub fn neighbors(
        &self,
        id: &SectionId,
        label: EdgeLabel,
        direction: Direction,
    ) -> Result<Vec<SectionId>, DngError> {
        if !self.contains(id) {
            return Err(DngError::UnknownSection(id.clone()));
        }
        Ok(self.adjacent(id, label, direction).cloned().collect())
    }

    /// Everything reachable from `seeds` along `labels` in `direction`,
    /// seeds included.
    pub fn closure(
        &self,
        seeds: &BTreeSet<SectionId>,
        labels: &[EdgeLabel],
        direction: Direction,
    ) -> Result<BTreeSet<SectionId>, DngError> {
        if let Some(unknown) = seeds.iter().find(|s| !self.contains(s)) {
            return Err(DngError::UnknownSection(unknown.clone()));
        }
        let mut visited = seeds.clone();
        let mut queue: VecDeque<&SectionId> = seeds.iter().collect();
        while let Some(id) = queue.pop_front() {
            for &label in labels {
                for next in self.adjacent(id, label, direction) {
                    if visited.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok(visited)
    }

    pub fn stats(&self) -> DngStats {
        let count = |label| self.edges.keys().filter(|(_, _, l)| *l == label).count();
        DngStats {
            nodes: self.nodes.len(),
            nodes_with_text: self.nodes.values().filter(|n| n.has_text).count(),
            dangling_nodes: self.nodes.values().filter(|n| n.dangling).count(),
            has_edges: count(EdgeLabel::Has),
            refers_to_edges: count(EdgeLabel::RefersTo),
        }
    }

    /// Node lines in canonical order, then edge lines ordered by
    /// (from, to, label).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, info) in &self.nodes {
            let line = Line::Node {
                node: id.clone(),
                has_text: info.has_text,
                dangling: info.dangling,
            };
            out.push_str(&serde_json::to_string(&line).expect("node serializes"));
            out.push('\n');
        }
        for edge in self.edges() {
            out.push_str(&serde_json::to_string(&Line::Edge(edge)).expect("edge serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Dng, DngError> {
        let mut g = Dng::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(raw).map_err(|e| DngError::Parse {
                line,
                message: e.to_string(),
            })?;
            match parsed {
                Line::Node {
                    node,
                    has_text,
                    dangling,
                } => {
                    if !g.add_node(node.clone(), NodeInfo { has_text, dangling }) {
                        return Err(DngError::DuplicateSection(node));
                    }
                }
                Line::Edge(edge) => {
                    if edge.provenance.is_empty() {
                        return Err(DngError::Parse {
                            line,
                            message: "edge without provenance".into(),
                        });
                    }
                    for p in &edge.provenance {
                        let fresh =
                            g.add_edge(&edge.from, &edge.to, edge.label, *p)
                                .map_err(|e| DngError::Parse {
                                    line,
                                    message: e.to_string(),
                                })?;
                        if !fresh && edge.from == edge.to {
                            return Err(DngError::Parse {
                                line,
                                message: "refers_to self-loop".into(),
                            });
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::section_id::Depth;

    fn sid(s: &str) -> SectionId {
        SectionId::parse_with(s, Depth::Extended).unwrap()
    }

    fn node(id: &str, body: &str) -> SectionNode {
        SectionNode {
            id: sid(id),
            title: None,
            body: body.to_string(),
            source_url: None,
            order_index: 0,
        }
    }

    fn set(ids: &[&str]) -> BTreeSet<SectionId> {
        ids.iter().map(|s| sid(s)).collect()
    }

    /// The excavation case-study fragment.
    fn case_study() -> Dng {
        let sections: Vec<SectionNode> = [
            "1926.651",
            "1926.651(h)",
            "1926.651(h)(1)",
            "1926.651(h)(2)",
            "1926.651(h)(3)",
            "1926.651(k)",
            "1926.651(k)(1)",
        ]
        .iter()
        .map(|id| node(id, "text"))
        .collect();
        let mut g = Dng::build_hierarchy(&sections).unwrap();
        g.add_cross_references(&[
            (
                sid("1926.651(h)(3)"),
                sid("1926.651(h)(1)"),
                Provenance::Llm,
            ),
            (
                sid("1926.651(h)(3)"),
                sid("1926.651(h)(2)"),
                Provenance::Llm,
            ),
        ]);
        g
    }

    #[test]
    fn has_chain() {
        let g = Dng::build_hierarchy(&[
            node("1926.451", "a"),
            node("1926.451(b)", "b"),
            node("1926.451(b)(2)", "c"),
        ])
        .unwrap();
        assert_eq!(g.stats().has_edges, 2);
        assert_eq!(g.stats().nodes, 3);
    }

    #[test]
    fn missing_ancestors_materialized() {
        let g = Dng::build_hierarchy(&[node("1926.451(b)(2)", "c")]).unwrap();
        assert_eq!(g.stats().nodes, 3);
        assert!(!g.node(&sid("1926.451(b)")).unwrap().has_text);
        assert!(!g.node(&sid("1926.451")).unwrap().has_text);
        assert_eq!(
            g.neighbors(&sid("1926.451(b)(2)"), EdgeLabel::Has, Direction::In)
                .unwrap(),
            vec![sid("1926.451(b)")]
        );
    }

    #[test]
    fn duplicate_rejected() {
        assert_eq!(
            Dng::build_hierarchy(&[node("1926.1", "a"), node("1926.1", "b")]),
            Err(DngError::DuplicateSection(sid("1926.1")))
        );
    }

    #[test]
    fn cross_refs_dedup_and_dangling() {
        let mut g =
            Dng::build_hierarchy(&[node("1926.502(b)(15)", "x"), node("1926.502(b)(3)", "y")])
                .unwrap();
        let from = sid("1926.502(b)(15)");
        let to = sid("1926.502(b)(3)");
        let d = g.add_cross_references(&[
            (from.clone(), to.clone(), Provenance::Llm),
            (from.clone(), to.clone(), Provenance::Pattern),
            (from.clone(), from.clone(), Provenance::Pattern),
            (from.clone(), sid("1926.1053(a)"), Provenance::Pattern),
        ]);
        assert_eq!(d.added, 2);
        assert_eq!(d.merged, 1);
        assert_eq!(d.self_loops_skipped, 1);
        assert_eq!(d.dangling, set(&["1926.1053(a)"]));
        assert_eq!(
            g.provenance(&from, &to, EdgeLabel::RefersTo).unwrap(),
            &BTreeSet::from([Provenance::Llm, Provenance::Pattern])
        );
        let n = g.node(&sid("1926.1053(a)")).unwrap();
        assert!(n.dangling && !n.has_text);
        assert!(g.contains(&sid("1926.1053")));
    }

    #[test]
    fn case_study_neighbors_and_closure() {
        let g = case_study();
        assert_eq!(
            g.neighbors(&sid("1926.651(h)(3)"), EdgeLabel::RefersTo, Direction::Out)
                .unwrap(),
            vec![sid("1926.651(h)(1)"), sid("1926.651(h)(2)")]
        );
        assert_eq!(
            g.closure(
                &set(&["1926.651(h)(3)"]),
                &[EdgeLabel::RefersTo],
                Direction::Out
            )
            .unwrap(),
            set(&["1926.651(h)(1)", "1926.651(h)(2)", "1926.651(h)(3)"])
        );
        assert!(g
            .closure(&BTreeSet::new(), &[EdgeLabel::RefersTo], Direction::Out)
            .unwrap()
            .is_empty());
        assert!(g
            .neighbors(&sid("1926.651(k)(1)"), EdgeLabel::RefersTo, Direction::Out)
            .unwrap()
            .is_empty());
        assert!(matches!(
            g.neighbors(&sid("1926.9"), EdgeLabel::Has, Direction::Out),
            Err(DngError::UnknownSection(_))
        ));
    }

    #[test]
    fn has_edges_form_a_forest() {
        let g = case_study();
        for (id, _) in g.nodes() {
            assert!(
                g.neighbors(id, EdgeLabel::Has, Direction::In)
                    .unwrap()
                    .len()
                    <= 1
            );
        }
        let mut g = g;
        assert!(matches!(
            g.add_edge(
                &sid("1926.651(h)"),
                &sid("1926.651(k)(1)"),
                EdgeLabel::Has,
                Provenance::Grammar
            ),
            Err(DngError::NotParent { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut g = case_study();
        g.add_cross_references(&[(
            sid("1926.651(k)(1)"),
            sid("1926.652(a)"),
            Provenance::Pattern,
        )]);
        let text = g.to_jsonl();
        assert!(text.contains(r#"{"node":"1926.651(h)(1)","has_text":true,"dangling":false}"#));
        assert!(text.contains(r#"{"from":"1926.651(h)(3)","to":"1926.651(h)(1)","label":"refers_to","provenance":["llm"]}"#));
        let back = Dng::from_jsonl(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_jsonl(), text);
        assert!(Dng::from_jsonl("{\"node\": 5}").is_err());
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{GccError, Result};
use crate::neuron::NeuronRef;
use crate::threshold::ThresholdDecision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitEdge {
    pub src: NeuronRef,
    pub tgt: NeuronRef,
    pub s_ns: f64,
    pub s_sf: f64,
}

/// Thresholds applied when one source node was expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDecision {
    pub source: NeuronRef,
    /// `None` when the source had no successor layer or an all-zero
    /// sensitivity vector.
    pub tau_ns: Option<ThresholdDecision>,
    pub tau_sf: Option<f64>,
    pub dead_end: bool,
}

/// A directed acyclic graph of neurons grown from one root (or, after
/// merging, several roots) for a single query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub query_id: String,
    pub root: NeuronRef,
    /// Contributing roots; `[root]` for a single circuit.
    pub roots: Vec<NeuronRef>,
    pub thresholds: Vec<SourceDecision>,
    pub nodes: BTreeSet<NeuronRef>,
    pub edges: Vec<CircuitEdge>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl Circuit {
    pub fn single(query_id: impl Into<String>, root: NeuronRef) -> Self {
        Self {
            query_id: query_id.into(),
            root,
            roots: vec![root],
            thresholds: Vec::new(),
            nodes: BTreeSet::from([root]),
            edges: Vec::new(),
            truncated: false,
        }
    }

    /// Sorts edges by `(src, tgt)` and decisions by source.
    pub fn canonicalize(&mut self) {
        self.edges.sort_by_key(|e| (e.src, e.tgt));
        self.thresholds.sort_by_key(|d| d.source);
        self.roots.sort();
        self.roots.dedup();
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges whose source sits at probe layer `layer`.
    pub fn edges_from_layer(&self, layer: usize) -> impl Iterator<Item = &CircuitEdge> {
        self.edges
            .iter()
            .filter(move |e| e.src.probe_layer == layer)
    }

    pub fn layers(&self) -> BTreeSet<usize> {
        self.nodes.iter().map(|n| n.probe_layer).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut c = self.clone();
        c.canonicalize();
        serde_json::to_string_pretty(&c).map_err(|e| GccError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GccError::Serde(e.to_string()))
    }

    /// Checks the structural invariants every emitted circuit must satisfy:
    /// layer adjacency, acyclicity, reachability from the roots, no edge into
    /// a single circuit's root, and edges meeting their recorded thresholds.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(GccError::Invariant(format!(
                "circuit {}: {msg}",
                self.label()
            )))
        };
        if !self.roots.contains(&self.root) {
            return fail("root missing from root list".into());
        }
        for r in &self.roots {
            if !self.nodes.contains(r) {
                return fail(format!("root {r} is not a node"));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.tgt.probe_layer != e.src.probe_layer + 1 {
                return fail(format!("edge {} -> {} skips layers", e.src, e.tgt));
            }
            if !self.nodes.contains(&e.src) || !self.nodes.contains(&e.tgt) {
                return fail(format!(
                    "edge {} -> {} has a dangling endpoint",
                    e.src, e.tgt
                ));
            }
            if !seen.insert((e.src, e.tgt)) {
                return fail(format!("duplicate edge {} -> {}", e.src, e.tgt));
            }
            if !(0.0..=1.0).contains(&e.s_ns) || !(0.0..=1.0).contains(&e.s_sf) {
                return fail(format!(
                    "edge {} -> {} has scores out of [0, 1]",
                    e.src, e.tgt
                ));
            }
        }
        if self.roots.len() == 1 && self.edges.iter().any(|e| e.tgt == self.root) {
            return fail("root has an incoming edge".into());
        }
        if !is_acyclic(&self.nodes, &self.edges) {
            return fail("cycle detected".into());
        }
        let reached = reachable(&self.roots, &self.edges);
        if let Some(n) = self.nodes.iter().find(|n| !reached.contains(n)) {
            return fail(format!("node {n} unreachable from the roots"));
        }
        let decisions: BTreeMap<NeuronRef, &SourceDecision> =
            self.thresholds.iter().map(|d| (d.source, d)).collect();
        for e in &self.edges {
            let Some(d) = decisions.get(&e.src) else {
                return fail(format!("no threshold record for source {}", e.src));
            };
            let (Some(tns), Some(tsf)) = (&d.tau_ns, d.tau_sf) else {
                return fail(format!("source {} has edges but no thresholds", e.src));
            };
            if e.s_ns < tns.tau || e.s_ns <= 0.0 || e.s_sf < tsf {
                return fail(format!(
                    "edge {} -> {} (s_ns {}, s_sf {}) violates tau_ns {} / tau_sf {}",
                    e.src, e.tgt, e.s_ns, e.s_sf, tns.tau, tsf
                ));
            }
        }
        Ok(())
    }

    fn label(&self) -> String {
        format!("{}@{}", self.query_id, self.root)
    }
}

/// Kahn's algorithm over the node set.
pub(crate) fn is_acyclic(nodes: &BTreeSet<NeuronRef>, edges: &[CircuitEdge]) -> bool {
    let mut indeg: HashMap<NeuronRef, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    let mut out: HashMap<NeuronRef, Vec<NeuronRef>> = HashMap::new();
    for e in edges {
        *indeg.entry(e.tgt).or_default() += 1;
        indeg.entry(e.src).or_default();
        out.entry(e.src).or_default().push(e.tgt);
    }
    let mut queue: VecDeque<NeuronRef> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut visited = 0;
    while let Some(n) = queue.pop_front() {
        visited += 1;
        for t in out.get(&n).into_iter().flatten() {
            let d = indeg.get_mut(t).expect("target registered");
            *d -= 1;
            if *d == 0 {
                queue.push_back(*t);
            }
        }
    }
    visited == indeg.len()
}

pub(crate) fn reachable(roots: &[NeuronRef], edges: &[CircuitEdge]) -> BTreeSet<NeuronRef> {
    let mut out: HashMap<NeuronRef, Vec<NeuronRef>> = HashMap::new();
    for e in edges {
        out.entry(e.src).or_default().push(e.tgt);
    }
    let mut seen: BTreeSet<NeuronRef> = roots.iter().copied().collect();
    let mut queue: VecDeque<NeuronRef> = roots.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        for t in out.get(&n).into_iter().flatten() {
            if seen.insert(*t) {
                queue.push_back(*t);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(l: usize, c: usize) -> NeuronRef {
        NeuronRef::new(l, c)
    }

    fn edge(a: NeuronRef, b: NeuronRef) -> CircuitEdge {
        CircuitEdge {
            src: a,
            tgt: b,
            s_ns: 0.5,
            s_sf: 0.5,
        }
    }

    fn decision(source: NeuronRef) -> SourceDecision {
        SourceDecision {
            source,
            tau_ns: Some(ThresholdDecision {
                strategy: "percentile".into(),
                tau: 0.4,
                initial: 0.4,
                fallback: false,
                fit: None,
                note: None,
            }),
            tau_sf: Some(0.2),
            dead_end: false,
        }
    }

    #[test]
    fn valid_chain() {
        let mut c = Circuit::single("q", n(0, 0));
        c.nodes.extend([n(1, 2), n(2, 1)]);
        c.edges = vec![edge(n(0, 0), n(1, 2)), edge(n(1, 2), n(2, 1))];
        c.thresholds = vec![decision(n(0, 0)), decision(n(1, 2))];
        c.validate().unwrap();
        let back = Circuit::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn detects_layer_skip_and_unreachable() {
        let mut c = Circuit::single("q", n(0, 0));
        c.nodes.insert(n(2, 0));
        c.edges = vec![edge(n(0, 0), n(2, 0))];
        c.thresholds = vec![decision(n(0, 0))];
        assert!(c.validate().is_err());

        let mut c = Circuit::single("q", n(0, 0));
        c.nodes.insert(n(1, 0));
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("unreachable"));
    }

    #[test]
    fn detects_threshold_violation() {
        let mut c = Circuit::single("q", n(0, 0));
        c.nodes.insert(n(1, 0));
        let mut e = edge(n(0, 0), n(1, 0));
        e.s_ns = 0.3;
        c.edges = vec![e];
        c.thresholds = vec![decision(n(0, 0))];
        assert!(c.validate().unwrap_err().to_string().contains("violates"));
    }

    #[test]
    fn kahn_finds_cycles() {
        let nodes = BTreeSet::from([n(0, 0), n(1, 0)]);
        let edges = vec![edge(n(0, 0), n(1, 0)), edge(n(1, 0), n(0, 0))];
        assert!(!is_acyclic(&nodes, &edges));
        assert!(is_acyclic(&nodes, &edges[..1]));
    }
}

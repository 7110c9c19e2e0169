// SPDX-License-Identifier: MIT OR Apache-2.0

//! Combining circuits: per-query merges and cross-query common / unique
//! concepts.

use std::collections::{BTreeMap, BTreeSet};

use super::circuit::{reachable, Circuit, CircuitEdge, SourceDecision};
use super::search::{Discoverer, ExpansionCache};
use crate::error::{GccError, Result};
use crate::model::ActivationTrace;
use crate::neuron::NeuronRef;
use crate::threshold::ThresholdDecision;

/// Union of circuits of one query. Duplicate edges keep the larger `s_ns`.
pub fn merge_circuits(circuits: &[Circuit]) -> Result<Circuit> {
    let first = circuits
        .first()
        .ok_or_else(|| GccError::Config("nothing to merge".into()))?;
    let mut merged = first.clone();
    let mut edges: BTreeMap<(NeuronRef, NeuronRef), CircuitEdge> = first
        .edges
        .iter()
        .map(|e| ((e.src, e.tgt), e.clone()))
        .collect();
    let mut decisions: BTreeMap<NeuronRef, SourceDecision> = first
        .thresholds
        .iter()
        .map(|d| (d.source, d.clone()))
        .collect();
    for c in &circuits[1..] {
        if c.query_id != merged.query_id {
            return Err(GccError::MixedQueries(
                merged.query_id.clone(),
                c.query_id.clone(),
            ));
        }
        merged.roots.extend(&c.roots);
        merged.nodes.extend(&c.nodes);
        merged.truncated |= c.truncated;
        for e in &c.edges {
            edges
                .entry((e.src, e.tgt))
                .and_modify(|kept| {
                    if e.s_ns > kept.s_ns {
                        *kept = e.clone();
                    }
                })
                .or_insert_with(|| e.clone());
        }
        for d in &c.thresholds {
            decisions.entry(d.source).or_insert_with(|| d.clone());
        }
    }
    merged.edges = edges.into_values().collect();
    merged.thresholds = decisions.into_values().collect();
    merged.canonicalize();
    merged.root = merged.roots[0];
    Ok(merged)
}

fn min_decision(source: NeuronRef, ds: &[&SourceDecision]) -> SourceDecision {
    let ns: Vec<&ThresholdDecision> = ds.iter().filter_map(|d| d.tau_ns.as_ref()).collect();
    let tau_ns = (!ns.is_empty()).then(|| ThresholdDecision {
        strategy: "intersection".into(),
        tau: ns.iter().map(|d| d.tau).fold(f64::INFINITY, f64::min),
        initial: ns.iter().map(|d| d.initial).fold(f64::INFINITY, f64::min),
        fallback: ns.iter().any(|d| d.fallback),
        fit: None,
        note: Some(format!("minimum over {} queries", ns.len())),
    });
    let sf: Vec<f64> = ds.iter().filter_map(|d| d.tau_sf).collect();
    SourceDecision {
        source,
        tau_ns,
        tau_sf: (!sf.is_empty()).then(|| sf.iter().copied().fold(f64::INFINITY, f64::min)),
        dead_end: ds.iter().all(|d| d.dead_end),
    }
}

/// Edge-wise intersection of circuits grown from the same root for several
/// queries. Scores and thresholds are the per-query minima; nodes no longer
/// reachable from the root are dropped.
pub fn intersect_circuits(circuits: &[Circuit]) -> Result<Circuit> {
    let first = circuits
        .first()
        .ok_or_else(|| GccError::Config("nothing to intersect".into()))?;
    if circuits.iter().any(|c| c.root != first.root) {
        return Err(GccError::Config(
            "intersected circuits must share a root".into(),
        ));
    }
    let mut edges: BTreeMap<(NeuronRef, NeuronRef), CircuitEdge> = first
        .edges
        .iter()
        .map(|e| ((e.src, e.tgt), e.clone()))
        .collect();
    for c in &circuits[1..] {
        let other: BTreeMap<_, _> = c.edges.iter().map(|e| ((e.src, e.tgt), e)).collect();
        edges.retain(|k, _| other.contains_key(k));
        for (k, e) in edges.iter_mut() {
            let o = other[k];
            e.s_ns = e.s_ns.min(o.s_ns);
            e.s_sf = e.s_sf.min(o.s_sf);
        }
    }
    let kept: Vec<CircuitEdge> = edges.into_values().collect();
    let reach = reachable(&[first.root], &kept);
    let edges: Vec<CircuitEdge> = kept
        .into_iter()
        .filter(|e| reach.contains(&e.src))
        .collect();
    let nodes: BTreeSet<NeuronRef> = reach;

    let mut thresholds = Vec::new();
    for source in nodes.iter().filter(|n| edges.iter().any(|e| e.src == **n)) {
        let ds: Vec<&SourceDecision> = circuits
            .iter()
            .filter_map(|c| c.thresholds.iter().find(|d| d.source == *source))
            .collect();
        thresholds.push(min_decision(*source, &ds));
    }
    let mut out = Circuit {
        query_id: circuits
            .iter()
            .map(|c| c.query_id.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        root: first.root,
        roots: vec![first.root],
        thresholds,
        nodes,
        edges,
        truncated: circuits.iter().any(|c| c.truncated),
    };
    out.canonicalize();
    Ok(out)
}

/// Circuits rooted at neurons that are roots for every query, intersected
/// across queries.
pub fn common_concepts_with(
    d: &Discoverer<'_>,
    traces: &[ActivationTrace],
) -> Result<Vec<Circuit>> {
    if traces.len() < 2 {
        return Err(GccError::Config(
            "common concepts need at least two queries".into(),
        ));
    }
    let sets = d.root_sets(traces)?;
    let shared: BTreeSet<NeuronRef> = sets.iter().skip(1).fold(sets[0].clone(), |acc, s| {
        acc.intersection(s).copied().collect()
    });
    let caches: Vec<ExpansionCache> = traces.iter().map(|_| ExpansionCache::new()).collect();
    shared
        .iter()
        .map(|&root| {
            let per_query = traces
                .iter()
                .zip(&caches)
                .map(|(t, cache)| d.discover_circuit(t, root, Some(cache)))
                .collect::<Result<Vec<_>>>()?;
            intersect_circuits(&per_query)
        })
        .collect()
}

/// Per query, the circuits whose roots are roots for that query only.
pub fn unique_concepts_with(
    d: &Discoverer<'_>,
    traces: &[ActivationTrace],
) -> Result<Vec<Vec<Circuit>>> {
    if traces.len() < 2 {
        return Err(GccError::Config(
            "unique concepts need at least two queries".into(),
        ));
    }
    let sets = d.root_sets(traces)?;
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let others: BTreeSet<NeuronRef> = sets
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            let cache = ExpansionCache::new();
            sets[i]
                .iter()
                .filter(|r| !others.contains(r))
                .map(|&r| d.discover_circuit(t, r, Some(&cache)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(l: usize, c: usize) -> NeuronRef {
        NeuronRef::new(l, c)
    }

    fn circuit(query: &str, root: NeuronRef, edges: &[(NeuronRef, NeuronRef, f64)]) -> Circuit {
        let mut c = Circuit::single(query, root);
        for &(a, b, s) in edges {
            c.nodes.insert(a);
            c.nodes.insert(b);
            c.edges.push(CircuitEdge {
                src: a,
                tgt: b,
                s_ns: s,
                s_sf: 0.5,
            });
        }
        c.canonicalize();
        c
    }

    #[test]
    fn merge_single_is_identity() {
        let c = circuit("q", n(0, 0), &[(n(0, 0), n(1, 1), 0.6)]);
        assert_eq!(merge_circuits(std::slice::from_ref(&c)).unwrap(), c);
    }

    #[test]
    fn merge_shared_downstream_node() {
        let a = circuit("q", n(0, 0), &[(n(0, 0), n(1, 1), 0.6)]);
        let b = circuit("q", n(0, 2), &[(n(0, 2), n(1, 1), 0.7)]);
        let m = merge_circuits(&[a, b]).unwrap();
        assert_eq!(m.nodes.len(), 3);
        assert_eq!(m.edges.len(), 2);
        assert_eq!(m.roots, vec![n(0, 0), n(0, 2)]);
    }

    #[test]
    fn merge_keeps_max_duplicate() {
        let a = circuit("q", n(0, 0), &[(n(0, 0), n(1, 1), 0.6)]);
        let b = circuit("q", n(0, 0), &[(n(0, 0), n(1, 1), 0.9)]);
        let m = merge_circuits(&[a, b]).unwrap();
        assert_eq!(m.edges.len(), 1);
        assert_eq!(m.edges[0].s_ns, 0.9);
    }

    #[test]
    fn merge_rejects_mixed_queries() {
        let a = circuit("q1", n(0, 0), &[]);
        let b = circuit("q2", n(0, 0), &[]);
        assert!(merge_circuits(&[a, b])
            .unwrap_err()
            .to_string()
            .contains("cannot merge across queries"));
    }

    #[test]
    fn intersection_prunes_unreachable() {
        let a = circuit(
            "a",
            n(0, 0),
            &[
                (n(0, 0), n(1, 0), 0.6),
                (n(1, 0), n(2, 0), 0.5),
                (n(1, 1), n(2, 0), 0.5),
            ],
        );
        let b = circuit(
            "b",
            n(0, 0),
            &[(n(0, 0), n(1, 1), 0.6), (n(1, 1), n(2, 0), 0.4)],
        );
        // only (1,1)->(2,0) is shared and it is cut off from the root
        let x = intersect_circuits(&[a, b]).unwrap();
        assert_eq!(x.nodes, BTreeSet::from([n(0, 0)]));
        assert!(x.edges.is_empty());
        assert_eq!(x.query_id, "a+b");
    }
}

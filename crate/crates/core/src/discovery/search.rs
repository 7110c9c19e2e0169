// SPDX-License-Identifier: MIT OR Apache-2.0

//! Worklist circuit growth with memoized source expansions.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use super::circuit::{Circuit, CircuitEdge, SourceDecision};
use super::{DiscoveryConfig, FlowAnchor};
use crate::error::Result;
use crate::index::ActivationIndex;
use crate::model::{ActivationTrace, ModelSpec};
use crate::neuron::NeuronRef;
use crate::scores::{neuron_sensitivity, TopKTable};
use crate::threshold::{build_threshold, mean_threshold, ThresholdStrategy};

/// Result of expanding one source node: its outgoing edges and the
/// thresholds that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub decision: SourceDecision,
    pub edges: Vec<CircuitEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    query: String,
    /// Only set when flow is anchored at the root, which makes expansions
    /// root-dependent.
    anchor: Option<NeuronRef>,
    source: NeuronRef,
}

/// Memo of source expansions shared across the roots of a query.
///
/// Concurrent workers may compute the same key twice; the first published
/// value wins and later ones are discarded.
#[derive(Debug, Default)]
pub struct ExpansionCache {
    map: RwLock<HashMap<CacheKey, Arc<Expansion>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ExpansionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn get_or_compute(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<Expansion>,
    ) -> Result<Arc<Expansion>> {
        if let Some(hit) = self.map.read().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fresh = Arc::new(compute()?);
        let mut map = self.map.write().expect("cache lock");
        Ok(map.entry(key).or_insert(fresh).clone())
    }
}

/// Everything needed to expand nodes for any query on one model/index pair.
pub struct Discoverer<'a> {
    model: &'a ModelSpec,
    index: &'a ActivationIndex,
    cfg: DiscoveryConfig,
    table: TopKTable,
    strategy: Arc<dyn ThresholdStrategy>,
}

impl<'a> Discoverer<'a> {
    pub fn new(
        model: &'a ModelSpec,
        index: &'a ActivationIndex,
        cfg: &DiscoveryConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        index.check_model(model)?;
        Ok(Self {
            model,
            index,
            cfg: cfg.clone(),
            table: TopKTable::build(index, cfg.sf_k),
            strategy: build_threshold(&cfg.threshold, &cfg.pot)?,
        })
    }

    pub fn config(&self) -> &DiscoveryConfig {
        &self.cfg
    }

    pub fn roots(&self, trace: &ActivationTrace) -> Result<Vec<NeuronRef>> {
        self.index.select_roots(trace, self.cfg.root_fraction)
    }

    /// Scores every next-layer target of `source` and keeps those passing
    /// both thresholds.
    pub fn expand(
        &self,
        trace: &ActivationTrace,
        source: NeuronRef,
        root: NeuronRef,
    ) -> Result<Expansion> {
        let dead = |source| Expansion {
            decision: SourceDecision {
                source,
                tau_ns: None,
                tau_sf: None,
                dead_end: true,
            },
            edges: Vec::new(),
        };
        if source.probe_layer + 1 >= self.model.probe_count() {
            return Ok(dead(source));
        }
        let sv = neuron_sensitivity(self.model, trace, source, self.cfg.agg)?;
        if sv.is_dead_end() {
            return Ok(dead(source));
        }
        let tau_ns = self.strategy.threshold(&sv.values);
        let anchor = match self.cfg.sf_anchor {
            FlowAnchor::Source => source,
            FlowAnchor::Root => root,
        };
        let anchor_pos = self.index.position(anchor)?;
        let next = source.probe_layer + 1;
        let first = self.index.position(NeuronRef::new(next, 0))?;
        let flows: Vec<f64> = (0..sv.values.len())
            .map(|i| self.table.flow(anchor_pos, first + i))
            .collect();
        let tau_sf = mean_threshold(&flows);
        let edges = sv
            .values
            .iter()
            .zip(&flows)
            .enumerate()
            .filter(|&(_, (&ns, &sf))| ns > 0.0 && ns >= tau_ns.tau && sf >= tau_sf)
            .map(|(i, (&ns, &sf))| CircuitEdge {
                src: source,
                tgt: NeuronRef::new(next, i),
                s_ns: ns,
                s_sf: sf,
            })
            .collect();
        Ok(Expansion {
            decision: SourceDecision {
                source,
                tau_ns: Some(tau_ns),
                tau_sf: Some(tau_sf),
                dead_end: false,
            },
            edges,
        })
    }

    fn expand_cached(
        &self,
        trace: &ActivationTrace,
        source: NeuronRef,
        root: NeuronRef,
        cache: Option<&ExpansionCache>,
    ) -> Result<Arc<Expansion>> {
        match cache {
            None => Ok(Arc::new(self.expand(trace, source, root)?)),
            Some(cache) => {
                let key = CacheKey {
                    query: trace.query_id.clone(),
                    anchor: (self.cfg.sf_anchor == FlowAnchor::Root).then_some(root),
                    source,
                };
                cache.get_or_compute(key, || self.expand(trace, source, root))
            }
        }
    }

    /// Breadth-first growth from `root`; every node is expanded at most once
    /// and a node reached from two parents keeps both edges.
    pub fn discover_circuit(
        &self,
        trace: &ActivationTrace,
        root: NeuronRef,
        cache: Option<&ExpansionCache>,
    ) -> Result<Circuit> {
        self.model.check_neuron(root)?;
        let mut circuit = Circuit::single(trace.query_id.clone(), root);
        let mut queue = VecDeque::from([root]);
        while let Some(source) = queue.pop_front() {
            let exp = self.expand_cached(trace, source, root, cache)?;
            circuit.thresholds.push(exp.decision.clone());
            for e in &exp.edges {
                if !circuit.nodes.contains(&e.tgt) {
                    if circuit.nodes.len() >= self.cfg.max_nodes {
                        circuit.truncated = true;
                        continue;
                    }
                    circuit.nodes.insert(e.tgt);
                    queue.push_back(e.tgt);
                }
                circuit.edges.push(e.clone());
            }
        }
        circuit.canonicalize();
        Ok(circuit)
    }

    /// One circuit per root, in `(layer, channel)` root order.
    pub fn discover_all(
        &self,
        trace: &ActivationTrace,
        cache: Option<&ExpansionCache>,
    ) -> Result<Vec<Circuit>> {
        let roots = self.roots(trace)?;
        roots
            .par_iter()
            .map(|&r| self.discover_circuit(trace, r, cache))
            .collect()
    }

    /// Root sets of several queries.
    pub fn root_sets(&self, traces: &[ActivationTrace]) -> Result<Vec<BTreeSet<NeuronRef>>> {
        traces
            .iter()
            .map(|t| Ok(self.roots(t)?.into_iter().collect()))
            .collect()
    }
}

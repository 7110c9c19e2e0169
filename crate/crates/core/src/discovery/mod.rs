// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circuit discovery.
//!
//! For a query trace, roots are the neurons whose activation ranks in the
//! top fraction of the dataset. From each root a FIFO worklist expands one
//! source at a time: its sensitivity vector is thresholded by the configured
//! strategy (`τ_NS`, per source), flow scores against every next-layer
//! neuron are thresholded at their mean (`τ_SF`), and targets passing both
//! become new nodes. Expansions are memoized per `(query, source)` and shared
//! by all roots of the query.

mod circuit;
mod concepts;
mod search;

use serde::{Deserialize, Serialize};

pub use circuit::{Circuit, CircuitEdge, SourceDecision};
pub use concepts::{
    common_concepts_with, intersect_circuits, merge_circuits, unique_concepts_with,
};
pub use search::{Discoverer, Expansion, ExpansionCache};

use crate::error::{GccError, Result};
use crate::index::{ActivationIndex, Aggregation};
use crate::model::{ActivationTrace, ModelSpec};
use crate::neuron::NeuronRef;
use crate::threshold::PotConfig;

/// Which neuron the semantic-flow score of a candidate target is measured
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowAnchor {
    #[default]
    Source,
    Root,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub root_fraction: f64,
    pub sf_k: usize,
    pub pot: PotConfig,
    /// Registered name of the `τ_NS` strategy.
    pub threshold: String,
    pub sf_anchor: FlowAnchor,
    pub agg: Aggregation,
    /// Safety cap on nodes per circuit.
    pub max_nodes: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            root_fraction: 0.01,
            sf_k: 20,
            pot: PotConfig::default(),
            threshold: "pot".into(),
            sf_anchor: FlowAnchor::Source,
            agg: Aggregation::SpatialMean,
            max_nodes: 10_000,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.root_fraction > 0.0 && self.root_fraction <= 1.0) {
            return Err(GccError::Config(format!(
                "root fraction must be in (0, 1], got {}",
                self.root_fraction
            )));
        }
        if self.sf_k == 0 {
            return Err(GccError::Config("sf_k must be at least 1".into()));
        }
        if self.max_nodes == 0 {
            return Err(GccError::Config("max_nodes must be at least 1".into()));
        }
        self.pot.validate()
    }
}

pub fn discover_circuit(
    model: &ModelSpec,
    index: &ActivationIndex,
    trace: &ActivationTrace,
    root: NeuronRef,
    cfg: &DiscoveryConfig,
) -> Result<Circuit> {
    Discoverer::new(model, index, cfg)?.discover_circuit(trace, root, None)
}

/// All circuits of one query, sharing a fresh expansion cache.
pub fn discover_all(
    model: &ModelSpec,
    index: &ActivationIndex,
    trace: &ActivationTrace,
    cfg: &DiscoveryConfig,
) -> Result<Vec<Circuit>> {
    let cache = ExpansionCache::new();
    Discoverer::new(model, index, cfg)?.discover_all(trace, Some(&cache))
}

pub fn common_concepts(
    model: &ModelSpec,
    index: &ActivationIndex,
    traces: &[ActivationTrace],
    cfg: &DiscoveryConfig,
) -> Result<Vec<Circuit>> {
    common_concepts_with(&Discoverer::new(model, index, cfg)?, traces)
}

pub fn unique_concepts(
    model: &ModelSpec,
    index: &ActivationIndex,
    traces: &[ActivationTrace],
    cfg: &DiscoveryConfig,
) -> Result<Vec<Vec<Circuit>>> {
    unique_concepts_with(&Discoverer::new(model, index, cfg)?, traces)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Connectivity scores between a source neuron and the next probe layer.
//!
//! * Neuron sensitivity: zero the source channel in the query's cached
//!   activation, re-run only the span to the next probe layer, and measure the
//!   clipped drop of every target channel's aggregated activation. Drops are
//!   normalized to sum to one over the targets.
//! * Semantic flow: fraction of the source's top-k samples that are also in
//!   the target's top-k samples.

use serde::{Deserialize, Serialize};

use crate::error::{GccError, Result};
use crate::index::{ActivationIndex, Aggregation};
use crate::model::{ActivationTrace, ModelSpec};
use crate::neuron::NeuronRef;
use crate::tensor::mask_channel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityVector {
    pub source: NeuronRef,
    /// Normalized scores, one per target channel of the next probe layer.
    pub values: Vec<f64>,
    /// Clipped activation drops before normalization.
    pub raw_deltas: Vec<f64>,
}

impl SensitivityVector {
    pub fn is_dead_end(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

pub fn neuron_sensitivity(
    model: &ModelSpec,
    trace: &ActivationTrace,
    source: NeuronRef,
    agg: Aggregation,
) -> Result<SensitivityVector> {
    model.check_neuron(source)?;
    let layer = source.probe_layer;
    if layer + 1 >= model.probe_count() {
        return Err(GccError::NoSuccessorLayer(source.to_string()));
    }
    let masked = mask_channel(trace.probe(layer), source.channel)?;
    let after = agg.reduce(&model.forward_from(layer, &masked)?);
    let before = agg.reduce(trace.probe(layer + 1));
    let raw_deltas: Vec<f64> = before
        .iter()
        .zip(&after)
        .map(|(b, a)| f64::from(b - a).max(0.0))
        .collect();
    let total: f64 = raw_deltas.iter().sum();
    let values = if total > 0.0 {
        raw_deltas.iter().map(|d| d / total).collect()
    } else {
        vec![0.0; raw_deltas.len()]
    };
    Ok(SensitivityVector {
        source,
        values,
        raw_deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowScore {
    pub source: NeuronRef,
    pub target: NeuronRef,
    pub value: f64,
    pub k: usize,
}

/// `|topk(source) ∩ topk(target)| / |topk(source)|`.
pub fn semantic_flow(
    index: &ActivationIndex,
    source: NeuronRef,
    target: NeuronRef,
    k: usize,
) -> Result<FlowScore> {
    let k = k.max(1);
    let src = index.topk_ids(source, k)?;
    let tgt = index.topk_ids(target, k)?;
    let shared = src.iter().filter(|s| tgt.contains(s)).count();
    Ok(FlowScore {
        source,
        target,
        value: overlap_ratio(shared, src.len()),
        k,
    })
}

pub(crate) fn overlap_ratio(shared: usize, source_len: usize) -> f64 {
    if source_len == 0 {
        0.0
    } else {
        shared as f64 / source_len as f64
    }
}

/// Top-k sets of every neuron, sorted by sample id for fast intersection.
#[derive(Debug, Clone)]
pub struct TopKTable {
    k: usize,
    sets: Vec<Vec<u32>>,
}

impl TopKTable {
    pub fn build(index: &ActivationIndex, k: usize) -> Self {
        let k = k.max(1);
        let sets = index
            .summary()
            .neurons
            .iter()
            .map(|&n| {
                let mut ids = index.topk_ids(n, k).expect("neuron from index").to_vec();
                ids.sort_unstable();
                ids
            })
            .collect();
        Self { k, sets }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Flow score between two neurons given their flat index positions.
    pub fn flow(&self, source: usize, target: usize) -> f64 {
        let (a, b) = (&self.sets[source], &self.sets[target]);
        let (mut i, mut j, mut shared) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        overlap_ratio(shared, a.len())
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset-wide activation statistics.
//!
//! A sweep runs every dataset sample through the model once and reduces each
//! probe channel to one scalar per sample. The resulting [`ActivationIndex`]
//! answers top-k queries (the sample sets behind semantic flow) and picks
//! root neurons for a query by per-neuron activation rank.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! u32 sample_count, u32 neuron_count, u32 agg_mode (0 = mean, 1 = max)
//! u8[32] SHA-256 of the model blob
//! f32[sample_count * neuron_count]    row-major [sample][neuron]
//! (u32 probe_layer, u32 channel)[neuron_count]
//! ```

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetPack;
use crate::error::{GccError, Result};
use crate::model::{ActivationTrace, ModelSpec};
use crate::neuron::NeuronRef;
use crate::tensor::Tensor;

/// Spatial reduction of a channel to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    SpatialMean,
    SpatialMax,
}

impl Aggregation {
    fn code(self) -> u32 {
        match self {
            Aggregation::SpatialMean => 0,
            Aggregation::SpatialMax => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Aggregation::SpatialMean),
            1 => Ok(Aggregation::SpatialMax),
            other => Err(GccError::IndexFile(format!(
                "unknown aggregation mode {other}"
            ))),
        }
    }

    pub fn reduce_channel(self, values: &[f32]) -> f32 {
        match self {
            Aggregation::SpatialMean => {
                (values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64) as f32
            }
            Aggregation::SpatialMax => values.iter().copied().fold(f32::NEG_INFINITY, f32::max),
        }
    }

    /// One scalar per channel of `t`.
    pub fn reduce(self, t: &Tensor) -> Vec<f32> {
        (0..t.channels())
            .map(|c| self.reduce_channel(t.channel(c)))
            .collect()
    }
}

/// Scalar activations `[sample × neuron]` for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSummary {
    pub agg: Aggregation,
    pub neurons: Vec<NeuronRef>,
    pub values: Vec<f32>,
    pub sample_count: usize,
    /// Hex SHA-256 of the blob of the model that produced the summary.
    pub model_hash: String,
}

impl ActivationSummary {
    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    pub fn get(&self, sample: usize, neuron: usize) -> f32 {
        self.values[sample * self.neurons.len() + neuron]
    }

    pub fn row(&self, sample: usize) -> &[f32] {
        let n = self.neurons.len();
        &self.values[sample * n..(sample + 1) * n]
    }

    pub fn column(&self, neuron: usize) -> Vec<f32> {
        (0..self.sample_count)
            .map(|s| self.get(s, neuron))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let hash = hex::decode(&self.model_hash)
            .ok()
            .filter(|h| h.len() == 32)
            .ok_or_else(|| GccError::IndexFile(format!("bad model hash {:?}", self.model_hash)))?;
        let mut out = Vec::with_capacity(44 + self.values.len() * 4 + self.neurons.len() * 8);
        out.extend_from_slice(&(self.sample_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.neurons.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.agg.code().to_le_bytes());
        out.extend_from_slice(&hash);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for n in &self.neurons {
            out.extend_from_slice(&(n.probe_layer as u32).to_le_bytes());
            out.extend_from_slice(&(n.channel as u32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 44 {
            return Err(GccError::IndexFile("truncated header".into()));
        }
        let word = |off: usize| {
            u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
        };
        let samples = word(0) as usize;
        let neurons = word(4) as usize;
        let agg = Aggregation::from_code(word(8))?;
        let model_hash = hex::encode(&bytes[12..44]);
        let matrix_end = 44 + samples * neurons * 4;
        if bytes.len() != matrix_end + neurons * 8 {
            return Err(GccError::IndexFile(format!(
                "header implies {} bytes, file has {}",
                matrix_end + neurons * 8,
                bytes.len()
            )));
        }
        let values = bytes[44..matrix_end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let neurons = (0..neurons)
            .map(|i| {
                let off = matrix_end + i * 8;
                NeuronRef::new(word(off) as usize, word(off + 4) as usize)
            })
            .collect();
        Ok(Self {
            agg,
            neurons,
            values,
            sample_count: samples,
            model_hash,
        })
    }
}

/// Runs every sample through the model and aggregates each probe channel.
///
/// Parallel over samples; rows are collected in sample order so the result
/// does not depend on scheduling.
pub fn sweep(
    model: &ModelSpec,
    dataset: &DatasetPack,
    agg: Aggregation,
) -> Result<ActivationSummary> {
    if dataset.sample_shape().as_slice() != model.input_shape() {
        return Err(GccError::DatasetModelMismatch(format!(
            "dataset samples are {:?}, model expects {:?}",
            dataset.sample_shape(),
            model.input_shape()
        )));
    }
    let rows: Vec<Vec<f32>> = (0..dataset.len())
        .into_par_iter()
        .map(|s| {
            let trace = model.forward(&dataset.sample(s))?;
            Ok(trace_row(&trace, agg))
        })
        .collect::<Result<_>>()?;
    Ok(ActivationSummary {
        agg,
        neurons: model.neurons(),
        values: rows.concat(),
        sample_count: dataset.len(),
        model_hash: model.blob_hash().to_string(),
    })
}

/// Aggregated activations of every neuron of one trace, in neuron order.
pub fn trace_row(trace: &ActivationTrace, agg: Aggregation) -> Vec<f32> {
    trace.probes.iter().flat_map(|p| agg.reduce(p)).collect()
}

/// Top-k sample ids of one neuron, by descending activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKSet {
    pub neuron: NeuronRef,
    pub k: usize,
    pub samples: Vec<usize>,
}

/// An [`ActivationSummary`] plus, for every neuron, all sample ids sorted by
/// descending activation (ties by smaller id).
#[derive(Debug, Clone)]
pub struct ActivationIndex {
    summary: ActivationSummary,
    ranked: Vec<Vec<u32>>,
    offsets: Vec<usize>,
}

impl ActivationIndex {
    pub fn new(summary: ActivationSummary) -> Self {
        let mut offsets = Vec::new();
        for (i, n) in summary.neurons.iter().enumerate() {
            if offsets.len() <= n.probe_layer {
                offsets.resize(n.probe_layer + 1, i);
            }
        }
        let ranked = (0..summary.neuron_count())
            .into_par_iter()
            .map(|n| {
                let col = summary.column(n);
                let mut ids: Vec<u32> = (0..summary.sample_count as u32).collect();
                ids.sort_by(|&a, &b| {
                    col[b as usize]
                        .partial_cmp(&col[a as usize])
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                ids
            })
            .collect();
        Self {
            summary,
            ranked,
            offsets,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GccError::io(path, e))?;
        Ok(Self::new(ActivationSummary::from_bytes(&bytes)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary.to_bytes()?).map_err(|e| GccError::io(path, e))
    }

    pub fn summary(&self) -> &ActivationSummary {
        &self.summary
    }

    pub fn sample_count(&self) -> usize {
        self.summary.sample_count
    }

    /// Fails when the index was built for a different model.
    pub fn check_model(&self, model: &ModelSpec) -> Result<()> {
        if self.summary.model_hash != model.blob_hash() || self.summary.neurons != model.neurons() {
            return Err(GccError::IndexModelMismatch {
                index: self.summary.model_hash.clone(),
                model: model.blob_hash().to_string(),
            });
        }
        Ok(())
    }

    /// Flat column of `neuron` in the summary.
    pub fn position(&self, neuron: NeuronRef) -> Result<usize> {
        let start = *self
            .offsets
            .get(neuron.probe_layer)
            .ok_or_else(|| GccError::BadNeuron(neuron.to_string()))?;
        let pos = start + neuron.channel;
        match self.summary.neurons.get(pos) {
            Some(n) if *n == neuron => Ok(pos),
            _ => Err(GccError::BadNeuron(neuron.to_string())),
        }
    }

    /// Sample ids of the `k` largest activations; `k` is clamped to the
    /// dataset size.
    pub fn topk_ids(&self, neuron: NeuronRef, k: usize) -> Result<&[u32]> {
        let ranked = &self.ranked[self.position(neuron)?];
        Ok(&ranked[..k.min(ranked.len())])
    }

    pub fn topk_samples(&self, neuron: NeuronRef, k: usize) -> Result<TopKSet> {
        let k = k.max(1);
        Ok(TopKSet {
            neuron,
            k,
            samples: self
                .topk_ids(neuron, k)?
                .iter()
                .map(|&s| s as usize)
                .collect(),
        })
    }

    /// Activation a query must reach to rank in the top `top_fraction` of a
    /// neuron's dataset distribution: the ⌈(1 − f)·N⌉-th order statistic.
    pub fn root_cutoff(&self, position: usize, top_fraction: f64) -> f32 {
        let n = self.summary.sample_count;
        // tolerate float noise in (1 - f) * N, e.g. 0.99 * 2000
        let rank = (((1.0 - top_fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize;
        if rank == 0 || n == 0 {
            return f32::NEG_INFINITY;
        }
        let ranked = &self.ranked[position];
        // rank-th smallest == (n - rank)-th entry of the descending order
        self.summary.get(ranked[n - rank] as usize, position)
    }

    /// Neurons whose query activation ranks within the top `top_fraction`
    /// of their dataset-wide activations, in `(layer, channel)` order.
    pub fn select_roots(
        &self,
        trace: &ActivationTrace,
        top_fraction: f64,
    ) -> Result<Vec<NeuronRef>> {
        if !(top_fraction > 0.0 && top_fraction <= 1.0) {
            return Err(GccError::Config(format!(
                "root fraction must be in (0, 1], got {top_fraction}"
            )));
        }
        let row = trace_row(trace, self.summary.agg);
        if row.len() != self.summary.neuron_count() {
            return Err(GccError::DatasetModelMismatch(format!(
                "trace has {} neurons, index has {}",
                row.len(),
                self.summary.neuron_count()
            )));
        }
        Ok(self
            .summary
            .neurons
            .iter()
            .enumerate()
            .filter(|&(i, _)| row[i].is_finite() && row[i] >= self.root_cutoff(i, top_fraction))
            .map(|(_, n)| *n)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(cols: &[&[f32]]) -> ActivationSummary {
        let samples = cols[0].len();
        let neurons = (0..cols.len()).map(|c| NeuronRef::new(0, c)).collect();
        let values = (0..samples)
            .flat_map(|s| cols.iter().map(move |c| c[s]))
            .collect();
        ActivationSummary {
            agg: Aggregation::SpatialMean,
            neurons,
            values,
            sample_count: samples,
            model_hash: "00".repeat(32),
        }
    }

    fn trace(values: &[f32]) -> ActivationTrace {
        ActivationTrace {
            query_id: "q".into(),
            probes: vec![Tensor::from_vec(values.to_vec())],
            logits: Tensor::from_vec(vec![0.0]),
        }
    }

    #[test]
    fn topk_tie_break_by_id() {
        let idx = ActivationIndex::new(summary(&[&[1.0, 1.0, 1.0, 1.0]]));
        let t = idx.topk_samples(NeuronRef::new(0, 0), 2).unwrap();
        assert_eq!(t.samples, vec![0, 1]);
        let all = idx.topk_samples(NeuronRef::new(0, 0), 10).unwrap();
        assert_eq!(all.samples, vec![0, 1, 2, 3]);
    }

    #[test]
    fn topk_orders_by_value() {
        let idx = ActivationIndex::new(summary(&[&[0.5, 3.0, 2.0, 3.0]]));
        let t = idx.topk_samples(NeuronRef::new(0, 0), 3).unwrap();
        assert_eq!(t.samples, vec![1, 3, 2]);
    }

    #[test]
    fn root_cutoff_order_statistic() {
        // 100 samples 1..=100; top 1% -> cutoff is the 99th smallest = 99
        let col: Vec<f32> = (1..=100).map(|v| v as f32).collect();
        let idx = ActivationIndex::new(summary(&[&col]));
        assert_eq!(idx.root_cutoff(0, 0.01), 99.0);
        assert_eq!(idx.root_cutoff(0, 0.10), 90.0);
        assert_eq!(idx.root_cutoff(0, 1.0), f32::NEG_INFINITY);
        assert_eq!(idx.select_roots(&trace(&[99.0]), 0.01).unwrap().len(), 1);
        assert!(idx.select_roots(&trace(&[98.5]), 0.01).unwrap().is_empty());
    }

    #[test]
    fn full_fraction_selects_everything() {
        let idx = ActivationIndex::new(summary(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let roots = idx.select_roots(&trace(&[-5.0, -5.0]), 1.0).unwrap();
        assert_eq!(roots.len(), 2);
    }

    #[test]
    fn zero_query_against_positive_dataset() {
        let idx = ActivationIndex::new(summary(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert!(idx
            .select_roots(&trace(&[0.0, 0.0]), 0.5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bad_fraction() {
        let idx = ActivationIndex::new(summary(&[&[1.0]]));
        assert!(idx.select_roots(&trace(&[1.0]), 0.0).is_err());
        assert!(idx.select_roots(&trace(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn index_bytes_roundtrip() {
        let s = summary(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let back = ActivationSummary::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}

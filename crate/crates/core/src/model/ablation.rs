// SPDX-License-Identifier: MIT OR Apache-2.0

//! Channel interventions and per-edge weight ablation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{LayerKind, ModelSpec};
use crate::error::{GccError, Result};
use crate::neuron::NeuronRef;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "alpha", rename_all = "snake_case")]
pub enum AblationMode {
    Zero,
    Scale(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub neuron: NeuronRef,
    pub mode: AblationMode,
}

/// Channel interventions applied after their probe layer computes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationSet {
    entries: Vec<Ablation>,
}

impl AblationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeroing(neurons: impl IntoIterator<Item = NeuronRef>) -> Self {
        neurons.into_iter().fold(Self::new(), Self::zero)
    }

    pub fn scaling(neurons: impl IntoIterator<Item = NeuronRef>, alpha: f32) -> Self {
        neurons
            .into_iter()
            .fold(Self::new(), |set, n| set.scale(n, alpha))
    }

    pub fn zero(mut self, neuron: NeuronRef) -> Self {
        self.entries.push(Ablation {
            neuron,
            mode: AblationMode::Zero,
        });
        self
    }

    pub fn scale(mut self, neuron: NeuronRef, alpha: f32) -> Self {
        self.entries.push(Ablation {
            neuron,
            mode: AblationMode::Scale(alpha),
        });
        self
    }

    pub fn entries(&self) -> &[Ablation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        for a in &self.entries {
            model.check_neuron(a.neuron)?;
            if let AblationMode::Scale(alpha) = a.mode {
                if !(alpha.is_finite() && alpha >= 0.0) {
                    return Err(GccError::BadAblation(format!(
                        "scale factor {alpha} for {} must be finite and >= 0",
                        a.neuron
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn apply(&self, probe: usize, activation: &mut Tensor) {
        for a in self
            .entries
            .iter()
            .filter(|a| a.neuron.probe_layer == probe)
        {
            let slice = activation.channel_mut(a.neuron.channel);
            match a.mode {
                AblationMode::Zero => slice.fill(0.0),
                AblationMode::Scale(alpha) => slice.iter_mut().for_each(|v| *v *= alpha),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    /// Zero the listed `(src, tgt)` weight slices.
    Delete,
    /// Zero every `(src, tgt)` slice except the listed ones.
    KeepOnly,
}

impl ModelSpec {
    /// Index of the single weight-bearing layer between probe `probe` and
    /// `probe + 1`, with the source/target channel counts it connects.
    pub fn edge_span(&self, probe: usize) -> Result<usize> {
        let span = self.span_layers(probe)?;
        let weighted: Vec<usize> = span
            .clone()
            .filter(|&i| self.layers()[i].kind.is_weight_bearing())
            .collect();
        if weighted.len() != 1 {
            return Err(GccError::EdgeAblationUnsupported(format!(
                "probe {probe} -> {} spans {} weight-bearing layers",
                probe + 1,
                weighted.len()
            )));
        }
        let index = weighted[0];
        let (src, tgt) = (
            self.probes()[probe].channels(),
            self.probes()[probe + 1].channels(),
        );
        let ok = match self.layers()[index].kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                ..
            } => in_channels == src && out_channels == tgt,
            LayerKind::Dense {
                in_features,
                out_features,
            } => in_features % src == 0 && out_features == tgt,
            _ => false,
        };
        if !ok {
            return Err(GccError::EdgeAblationUnsupported(format!(
                "layer {index} does not map {src} source channels onto {tgt} target channels"
            )));
        }
        Ok(index)
    }

    /// Returns a copy of the model with inter-channel weight slices in the
    /// span after probe `probe` zeroed according to `mode`.
    pub fn edge_ablate(
        &self,
        probe: usize,
        edges: &BTreeSet<(usize, usize)>,
        mode: EdgeMode,
    ) -> Result<ModelSpec> {
        let index = self.edge_span(probe)?;
        let (src_n, tgt_n) = (
            self.probes()[probe].channels(),
            self.probes()[probe + 1].channels(),
        );
        for &(s, t) in edges {
            if s >= src_n {
                return Err(GccError::BadChannel {
                    channel: s,
                    channels: src_n,
                });
            }
            if t >= tgt_n {
                return Err(GccError::BadChannel {
                    channel: t,
                    channels: tgt_n,
                });
            }
        }
        let layer = &self.layers()[index];
        // every (tgt, src) slice is a contiguous run of `block` weights in a
        // row of `row_len`.
        let (row_len, block) = match layer.kind {
            LayerKind::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => (in_channels * kernel_h * kernel_w, kernel_h * kernel_w),
            LayerKind::Dense { in_features, .. } => (in_features, in_features / src_n),
            _ => unreachable!("edge_span only returns weight-bearing layers"),
        };
        let mut weights = layer.weights().to_vec();
        for t in 0..tgt_n {
            for s in 0..src_n {
                let listed = edges.contains(&(s, t));
                let zero = match mode {
                    EdgeMode::Delete => listed,
                    EdgeMode::KeepOnly => !listed,
                };
                if zero {
                    let start = t * row_len + s * block;
                    weights[start..start + block].fill(0.0);
                }
            }
        }
        Ok(self.with_layer_weights(index, weights))
    }
}

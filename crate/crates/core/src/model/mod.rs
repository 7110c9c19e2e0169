// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal layered feed-forward inference engine.
//!
//! A [`ModelSpec`] is an ordered list of layers, some of which are flagged
//! as *probe* layers. Probe outputs are captured during [`ModelSpec::forward`]
//! and are the only places where interventions and circuit nodes live.
//!
//! Weights are immutable after loading; edge ablation returns a modified copy
//! that shares every untouched layer.

mod ablation;
mod forward;
mod manifest;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GccError, Result};
use crate::neuron::NeuronRef;
use crate::tensor::Tensor;

pub use ablation::{Ablation, AblationMode, AblationSet, EdgeMode};
pub use manifest::{load_model, load_model_from_path};

/// Layer kinds understood by the engine. Dense and conv layers carry no
/// bias; biases are separate `BiasAdd` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Weight layout `[out, in]`.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// Weight layout `[out_ch, in_ch, kH, kW]`.
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    /// Global average pooling, `[C, H, W] -> [C, 1, 1]`.
    AvgPool2d,
    Flatten,
    /// Per-channel additive bias.
    BiasAdd {
        channels: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::AvgPool2d => "avgpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::BiasAdd { .. } => "bias_add",
        }
    }

    pub fn is_weight_bearing(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    /// Number of `f32` parameters the layer reads from the blob.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Dense {
                in_features,
                out_features,
            } => in_features * out_features,
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => out_channels * in_channels * kernel_h * kernel_w,
            LayerKind::BiasAdd { channels } => channels,
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or an error if they do not compose.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(GccError::Manifest(format!(
                "{} layer cannot consume shape {:?}: {}",
                self.name(),
                input,
                what
            )))
        };
        match *self {
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                if input.len() != 1 || input[0] != in_features {
                    return mismatch(&format!("expected [{in_features}]"));
                }
                Ok(vec![out_features])
            }
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return mismatch(&format!("expected [{in_channels}, H, W]"));
                }
                if stride == 0 {
                    return mismatch("stride must be positive");
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel_h || w < kernel_w {
                    return mismatch("kernel larger than padded input");
                }
                Ok(vec![
                    out_channels,
                    (h - kernel_h) / stride + 1,
                    (w - kernel_w) / stride + 1,
                ])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool2d { size, stride } => {
                if input.len() != 3 {
                    return mismatch("expected [C, H, W]");
                }
                if size == 0 || stride == 0 || input[1] < size || input[2] < size {
                    return mismatch("bad pooling window");
                }
                Ok(vec![
                    input[0],
                    (input[1] - size) / stride + 1,
                    (input[2] - size) / stride + 1,
                ])
            }
            LayerKind::AvgPool2d => {
                if input.len() != 3 {
                    return mismatch("expected [C, H, W]");
                }
                Ok(vec![input[0], 1, 1])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::BiasAdd { channels } => {
                if input.first() != Some(&channels) {
                    return mismatch(&format!("expected {channels} channels"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub is_probe: bool,
    weights: Arc<[f32]>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, is_probe: bool, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != kind.param_count() {
            return Err(GccError::ManifestBlob(format!(
                "{} layer needs {} weights, got {}",
                kind.name(),
                kind.param_count(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(GccError::ManifestBlob(format!(
                "{} layer has non-finite weights",
                kind.name()
            )));
        }
        Ok(Self {
            kind,
            is_probe,
            weights: weights.into(),
        })
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// Location and output shape of one probe layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeInfo {
    pub layer_index: usize,
    pub shape: Vec<usize>,
}

impl ProbeInfo {
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn is_spatial(&self) -> bool {
        self.shape.len() == 3
    }
}

/// A validated, immutable model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    name: String,
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    class_count: usize,
    probes: Vec<ProbeInfo>,
    blob_hash: String,
}

impl ModelSpec {
    /// Validates layer composition and builds the probe table.
    pub fn new(
        name: impl Into<String>,
        layers: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        class_count: usize,
        blob_hash: String,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(GccError::Manifest("model has no layers".into()));
        }
        let mut shape = input_shape.clone();
        let mut probes = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.kind.output_shape(&shape)?;
            if layer.is_probe {
                probes.push(ProbeInfo {
                    layer_index: i,
                    shape: shape.clone(),
                });
            }
        }
        if shape != [class_count] {
            return Err(GccError::Manifest(format!(
                "final layer outputs {shape:?}, expected a logit vector of length {class_count}"
            )));
        }
        if probes.is_empty() {
            return Err(GccError::Manifest("model declares no probe layers".into()));
        }
        Ok(Self {
            name: name.into(),
            layers,
            input_shape,
            class_count,
            probes,
            blob_hash,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn probes(&self) -> &[ProbeInfo] {
        &self.probes
    }

    pub fn probe_count(&self) -> usize {
        self.probes.len()
    }

    /// Hex SHA-256 of the weight blob the model was loaded from.
    pub fn blob_hash(&self) -> &str {
        &self.blob_hash
    }

    /// Total number of addressable neurons across all probe layers.
    pub fn neuron_count(&self) -> usize {
        self.probes.iter().map(ProbeInfo::channels).sum()
    }

    /// All neurons in `(layer, channel)` order.
    pub fn neurons(&self) -> Vec<NeuronRef> {
        self.probes
            .iter()
            .enumerate()
            .flat_map(|(l, p)| (0..p.channels()).map(move |c| NeuronRef::new(l, c)))
            .collect()
    }

    pub fn check_neuron(&self, n: NeuronRef) -> Result<()> {
        match self.probes.get(n.probe_layer) {
            Some(p) if n.channel < p.channels() => Ok(()),
            _ => Err(GccError::BadNeuron(n.to_string())),
        }
    }

    /// Layer index range `(start, end]` applied between probe `p` and `p + 1`.
    pub fn span_layers(&self, probe: usize) -> Result<std::ops::Range<usize>> {
        if probe + 1 >= self.probes.len() {
            return Err(GccError::NoSuccessorProbe(probe));
        }
        Ok(self.probes[probe].layer_index + 1..self.probes[probe + 1].layer_index + 1)
    }

    pub(crate) fn with_layer_weights(&self, index: usize, weights: Vec<f32>) -> Self {
        let mut out = self.clone();
        out.layers[index].weights = weights.into();
        out
    }
}

/// Per-probe activations of one input plus its logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub query_id: String,
    pub probes: Vec<Tensor>,
    pub logits: Tensor,
}

impl ActivationTrace {
    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = id.into();
        self
    }

    pub fn probe(&self, layer: usize) -> &Tensor {
        &self.probes[layer]
    }

    pub fn predicted_class(&self) -> usize {
        self.logits.argmax()
    }
}

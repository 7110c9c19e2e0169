// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major `f32` tensor.
//!
//! Activations are laid out channel-first: `[C, H, W]` for convolutional
//! maps and `[N]` for dense layers. Dimension 0 is always the channel axis,
//! which is the unit that circuits address.

use serde::{Deserialize, Serialize};

use crate::error::{GccError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GccError::BadInputShape {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of dimension 0.
    pub fn channels(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements per channel (spatial extent; 1 for dense vectors).
    pub fn channel_stride(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let stride = self.channel_stride();
        &self.data[c * stride..(c + 1) * stride]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let stride = self.channel_stride();
        &mut self.data[c * stride..(c + 1) * stride]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn reshape_unchecked(&mut self, shape: Vec<usize>) {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
    }
}

/// Returns a copy of `activation` with channel `channel` set to zero.
pub fn mask_channel(activation: &Tensor, channel: usize) -> Result<Tensor> {
    let channels = activation.channels();
    if channel >= channels {
        return Err(GccError::BadChannel { channel, channels });
    }
    let mut out = activation.clone();
    out.channel_mut(channel).fill(0.0);
    Ok(out)
}

/// Numerically stable softmax over a logit vector.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|v| f64::from(v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{AblationSet, ActivationTrace, LayerKind, LayerSpec, ModelSpec};
use crate::error::{GccError, Result};
use crate::tensor::Tensor;

fn dense(input: &Tensor, weights: &[f32], in_features: usize, out_features: usize) -> Tensor {
    let x = input.data();
    let out = (0..out_features)
        .map(|o| {
            let row = &weights[o * in_features..(o + 1) * in_features];
            row.iter().zip(x).fold(0.0f32, |acc, (w, v)| acc + w * v)
        })
        .collect();
    Tensor::from_vec(out)
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    input: &Tensor,
    weights: &[f32],
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
) -> Tensor {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let mut out = vec![0.0f32; out_channels * oh * ow];
    for o in 0..out_channels {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..in_channels {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = weights[((o * in_channels + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("conv output shape")
}

fn maxpool(input: &Tensor, size: usize, stride: usize, out_shape: &[usize]) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        m = m.max(src[(oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("pool output shape")
}

fn global_avgpool(input: &Tensor) -> Tensor {
    let c = input.channels();
    let n = input.channel_stride() as f32;
    let out = (0..c)
        .map(|ch| input.channel(ch).iter().sum::<f32>() / n)
        .collect();
    Tensor::new(vec![c, 1, 1], out).expect("avgpool output shape")
}

pub(crate) fn apply_layer(layer: &LayerSpec, input: &Tensor) -> Tensor {
    let out_shape = layer
        .kind
        .output_shape(input.shape())
        .expect("shapes validated at load");
    match layer.kind {
        LayerKind::Dense {
            in_features,
            out_features,
        } => dense(input, layer.weights(), in_features, out_features),
        LayerKind::Conv2d {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => conv2d(
            input,
            layer.weights(),
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            &out_shape,
        ),
        LayerKind::Relu => {
            let mut t = input.clone();
            t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            t
        }
        LayerKind::MaxPool2d { size, stride } => maxpool(input, size, stride, &out_shape),
        LayerKind::AvgPool2d => global_avgpool(input),
        LayerKind::Flatten => {
            let mut t = input.clone();
            t.reshape_unchecked(out_shape);
            t
        }
        LayerKind::BiasAdd { .. } => {
            let mut t = input.clone();
            for (c, b) in layer.weights().iter().enumerate() {
                t.channel_mut(c).iter_mut().for_each(|v| *v += b);
            }
            t
        }
    }
}

impl ModelSpec {
    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape() {
            return Err(GccError::BadInputShape {
                expected: self.input_shape().to_vec(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_probe_activation(&self, probe: usize, activation: &Tensor) -> Result<()> {
        let expected = &self.probes()[probe].shape;
        if activation.shape() != expected.as_slice() {
            return Err(GccError::BadInputShape {
                expected: expected.clone(),
                got: activation.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the whole network, capturing every probe output.
    pub fn forward(&self, input: &Tensor) -> Result<ActivationTrace> {
        self.run(input, None)
    }

    /// Forward pass with channel interventions applied right after each
    /// probe layer computes. Returns the logits.
    pub fn ablate_forward(&self, input: &Tensor, ablations: &AblationSet) -> Result<Tensor> {
        ablations.validate(self)?;
        Ok(self.run(input, Some(ablations))?.logits)
    }

    /// Like [`ModelSpec::ablate_forward`] but returns the full trace.
    pub fn ablate_trace(&self, input: &Tensor, ablations: &AblationSet) -> Result<ActivationTrace> {
        ablations.validate(self)?;
        self.run(input, Some(ablations))
    }

    fn run(&self, input: &Tensor, ablations: Option<&AblationSet>) -> Result<ActivationTrace> {
        self.check_input(input)?;
        let mut probes = Vec::with_capacity(self.probe_count());
        let mut x = input.clone();
        for layer in self.layers() {
            x = apply_layer(layer, &x);
            if layer.is_probe {
                if let Some(set) = ablations {
                    set.apply(probes.len(), &mut x);
                }
                probes.push(x.clone());
            }
        }
        Ok(ActivationTrace {
            query_id: String::new(),
            probes,
            logits: x,
        })
    }

    /// Applies exactly the layers between probe `probe` and probe `probe + 1`
    /// to a (possibly intervened) activation of probe `probe`.
    pub fn forward_from(&self, probe: usize, activation: &Tensor) -> Result<Tensor> {
        let span = self.span_layers(probe)?;
        self.check_probe_activation(probe, activation)?;
        let mut x = activation.clone();
        for layer in &self.layers()[span] {
            x = apply_layer(layer, &x);
        }
        Ok(x)
    }

    /// Runs from probe `start`'s cached activation to the logits, applying
    /// the interventions at `start` and every later probe. Bit-identical to
    /// [`ModelSpec::ablate_forward`] on the input that produced the cache.
    pub fn ablate_from_probe(
        &self,
        start: usize,
        activation: &Tensor,
        ablations: &AblationSet,
    ) -> Result<Tensor> {
        ablations.validate(self)?;
        if let Some(a) = ablations
            .entries()
            .iter()
            .find(|a| a.neuron.probe_layer < start)
        {
            return Err(GccError::BadAblation(format!(
                "{} lies before the starting probe {start}",
                a.neuron
            )));
        }
        if start >= self.probe_count() {
            return Err(GccError::BadNeuron(format!("probe layer {start}")));
        }
        self.check_probe_activation(start, activation)?;
        let mut x = activation.clone();
        ablations.apply(start, &mut x);
        let mut probe = start;
        for layer in &self.layers()[self.probes()[start].layer_index + 1..] {
            x = apply_layer(layer, &x);
            if layer.is_probe {
                probe += 1;
                ablations.apply(probe, &mut x);
            }
        }
        Ok(x)
    }

    /// Runs from probe `probe`'s activation to the logits.
    pub fn logits_from(&self, probe: usize, activation: &Tensor) -> Result<Tensor> {
        if probe >= self.probe_count() {
            return Err(GccError::BadNeuron(format!("probe layer {probe}")));
        }
        self.check_probe_activation(probe, activation)?;
        let start = self.probes()[probe].layer_index + 1;
        let mut x = activation.clone();
        for layer in &self.layers()[start..] {
            x = apply_layer(layer, &x);
        }
        Ok(x)
    }
}

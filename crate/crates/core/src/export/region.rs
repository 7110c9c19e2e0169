// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{GccError, Result};
use crate::model::ActivationTrace;
use crate::neuron::NeuronRef;
use crate::threshold::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    /// Gaussian blur standard deviation in image pixels; 0 disables blur.
    pub blur_sigma: f64,
    pub mask_quantile: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 2.0,
            mask_quantile: 0.7,
        }
    }
}

impl RegionConfig {
    /// Default settings with the blur rescaled from a 64-pixel reference
    /// frame to an image of `hw`.
    pub fn scaled_for(hw: (usize, usize)) -> Self {
        let d = Self::default();
        Self {
            blur_sigma: d.blur_sigma * hw.0.max(hw.1) as f64 / 64.0,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(GccError::Config(format!(
                "blur sigma {} must be finite and >= 0",
                self.blur_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_quantile) {
            return Err(GccError::Config(format!(
                "mask quantile {} outside [0, 1]",
                self.mask_quantile
            )));
        }
        Ok(())
    }
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BitMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Binary portable bitmap (P4), set bits black.
    pub fn to_pbm(&self) -> Vec<u8> {
        let mut out = format!("P4\n{} {}\n", self.width, self.height).into_bytes();
        let stride = self.width.div_ceil(8);
        for y in 0..self.height {
            let mut row = vec![0u8; stride];
            for x in 0..self.width {
                if self.get(x, y) {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_pbm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GccError::Serde(format!("pbm: {m}"));
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 3 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
        if fields[0] != "P4" {
            return Err(bad("not a P4 file"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let data = &bytes[i + 1..];
        let stride = width.div_ceil(8);
        if data.len() != stride * height {
            return Err(bad("raster length"));
        }
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| data[y * stride + x / 8] & (0x80 >> (x % 8)) != 0)
            .collect();
        Ok(Self {
            width,
            height,
            bits,
        })
    }
}

/// Bounding box of the largest connected high-activation region, in input
/// pixels. `x1`/`y1` are exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub sample: String,
    pub neuron: NeuronRef,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub threshold: f64,
    pub area: usize,
    pub mask_file: String,
    pub config: RegionConfig,
    #[serde(skip)]
    pub mask: Option<BitMask>,
}

pub fn mask_file_name(query: &str, neuron: NeuronRef, sample: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    format!(
        "{}_{}_{}_{}.pbm",
        clean(query),
        neuron.probe_layer,
        neuron.channel,
        clean(sample)
    )
}

fn upsample_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |d: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let v = |yy: usize, xx: usize| f64::from(src[yy * w + xx]);
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur, borders replicated.
fn blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| {
                    let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    kv * img[y * w + xx]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| {
                    let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    kv * tmp[yy * w + x]
                })
                .sum();
        }
    }
    out
}

/// Largest 4-connected component; ties go to the component met first in
/// row-major order.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; h * w];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Upsamples the neuron's activation map to `image_hw`, blurs it, keeps the
/// pixels at or above the `mask_quantile` quantile (never the minimum value
/// unless the map is constant) and boxes the largest 4-connected component.
pub fn activation_region(
    trace: &ActivationTrace,
    neuron: NeuronRef,
    image_hw: (usize, usize),
    cfg: &RegionConfig,
) -> Result<RegionBox> {
    cfg.validate()?;
    let act = trace
        .probes
        .get(neuron.probe_layer)
        .ok_or_else(|| GccError::BadNeuron(neuron.to_string()))?;
    if act.shape().len() != 3 {
        return Err(GccError::NoSpatialMap(neuron.to_string()));
    }
    if neuron.channel >= act.channels() {
        return Err(GccError::BadChannel {
            channel: neuron.channel,
            channels: act.channels(),
        });
    }
    let (oh, ow) = image_hw;
    if oh == 0 || ow == 0 {
        return Err(GccError::Config("image size must be positive".into()));
    }
    let (h, w) = (act.shape()[1], act.shape()[2]);
    let map = blur(
        &upsample_bilinear(act.channel(neuron.channel), h, w, oh, ow),
        oh,
        ow,
        cfg.blur_sigma,
    );

    let mut sorted = map.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&sorted, cfg.mask_quantile);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let constant = lo == hi;
    let mask: Vec<bool> = map
        .iter()
        .map(|&v| v >= threshold && (constant || v > lo))
        .collect();
    let comp = largest_component(&mask, oh, ow);

    let mut bits = vec![false; oh * ow];
    let (mut x0, mut y0, mut x1, mut y1) = (ow, oh, 0, 0);
    for &p in &comp {
        bits[p] = true;
        let (y, x) = (p / ow, p % ow);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    if comp.is_empty() {
        return Err(GccError::Invariant(format!(
            "empty activation mask for {neuron}"
        )));
    }
    Ok(RegionBox {
        sample: trace.query_id.clone(),
        neuron,
        x0,
        y0,
        x1,
        y1,
        threshold,
        area: comp.len(),
        mask_file: mask_file_name(&trace.query_id, neuron, &trace.query_id),
        config: *cfg,
        mask: Some(BitMask {
            width: ow,
            height: oh,
            bits,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn trace(map: Vec<f32>, h: usize, w: usize) -> ActivationTrace {
        ActivationTrace {
            query_id: "s".into(),
            probes: vec![Tensor::new(vec![1, h, w], map).unwrap()],
            logits: Tensor::from_vec(vec![0.0]),
        }
    }

    #[test]
    fn constant_map_covers_frame() {
        let r = activation_region(
            &trace(vec![1.0; 16], 4, 4),
            NeuronRef::new(0, 0),
            (8, 8),
            &RegionConfig::default(),
        )
        .unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0, 0, 8, 8));
    }

    #[test]
    fn dense_probe_has_no_map() {
        let t = ActivationTrace {
            query_id: "s".into(),
            probes: vec![Tensor::from_vec(vec![1.0, 2.0])],
            logits: Tensor::from_vec(vec![0.0]),
        };
        let err = activation_region(&t, NeuronRef::new(0, 0), (8, 8), &RegionConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("no spatial map"));
    }

    #[test]
    fn single_pixel_same_size() {
        let mut m = vec![0.0; 16];
        m[5] = 3.0;
        let cfg = RegionConfig {
            blur_sigma: 0.0,
            mask_quantile: 0.7,
        };
        let r = activation_region(&trace(m, 4, 4), NeuronRef::new(0, 0), (4, 4), &cfg).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (1, 1, 2, 2));
    }

    #[test]
    fn pbm_round_trip() {
        let m = BitMask {
            width: 11,
            height: 3,
            bits: (0..33).map(|i| i % 3 == 0).collect(),
        };
        assert_eq!(BitMask::from_pbm(&m.to_pbm()).unwrap(), m);
    }

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(1.3);
        assert_eq!(k.len(), 9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

//! Fixture loaders and a straightforward nested-loop reference network that
//! reads the manifest and blob on its own.

use std::path::PathBuf;
use std::sync::OnceLock;

use gcc_core::index::sweep;
use gcc_core::{
    load_model_from_path, ActivationIndex, ActivationTrace, Aggregation, DatasetPack, ModelSpec,
};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/tiny_cnn")
        .join(name)
}

pub fn model() -> &'static ModelSpec {
    static M: OnceLock<ModelSpec> = OnceLock::new();
    M.get_or_init(|| load_model_from_path(&fixture("model.toml")).unwrap())
}

fn pack(name: &str) -> DatasetPack {
    DatasetPack::read(&fixture(name)).unwrap()
}

pub fn queries() -> &'static DatasetPack {
    static P: OnceLock<DatasetPack> = OnceLock::new();
    P.get_or_init(|| pack("queries.pack"))
}

pub fn hard() -> &'static DatasetPack {
    static P: OnceLock<DatasetPack> = OnceLock::new();
    P.get_or_init(|| pack("hard.pack"))
}

pub fn train() -> &'static DatasetPack {
    static P: OnceLock<DatasetPack> = OnceLock::new();
    P.get_or_init(|| pack("train.pack"))
}

/// Index of the training pack, spatial-mean aggregation.
pub fn index() -> &'static ActivationIndex {
    static I: OnceLock<ActivationIndex> = OnceLock::new();
    I.get_or_init(|| {
        ActivationIndex::new(sweep(model(), train(), Aggregation::SpatialMean).unwrap())
    })
}

pub fn query_trace(pos: usize) -> ActivationTrace {
    model()
        .forward(&queries().sample(pos))
        .unwrap()
        .with_query_id(format!("q{pos:04}"))
}

// ---------------------------------------------------------------------------
// reference network

#[derive(Debug, Clone)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [c, h, w] => (c, h, w),
            [c] => (c, 1, 1),
            _ => panic!("shape {:?}", self.shape),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.chw();
        self.data[(c * h + y) * w + x]
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let (_, h, w) = self.chw();
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += self.at(c, y, x);
            }
        }
        s / (h * w) as f64
    }
}

#[derive(Debug, Clone)]
pub enum RefLayer {
    Conv {
        w: Vec<f64>,
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        w: Vec<f64>,
        out_f: usize,
        in_f: usize,
    },
    Bias(Vec<f64>),
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool,
    Flatten,
}

#[derive(Debug, Clone)]
pub struct RefNet {
    pub layers: Vec<(RefLayer, bool)>,
}

fn int(v: &toml::Value, key: &str) -> Option<usize> {
    v.get(key).and_then(|x| x.as_integer()).map(|x| x as usize)
}

impl RefNet {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(fixture("model.toml")).unwrap();
        let doc: toml::Table = toml::from_str(&text).unwrap();
        let blob = std::fs::read(fixture("model.bin")).unwrap();
        let floats: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let mut layers = Vec::new();
        for l in doc["layers"].as_array().unwrap() {
            let probe = l.get("is_probe").and_then(|p| p.as_bool()).unwrap_or(false);
            let shape: Vec<usize> = l
                .get("shape")
                .and_then(|s| s.as_array())
                .map(|s| s.iter().map(|x| x.as_integer().unwrap() as usize).collect())
                .unwrap_or_default();
            let weights = || {
                let off = int(l, "weight_offset").unwrap();
                let len = int(l, "weight_len").unwrap();
                floats[off..off + len].to_vec()
            };
            let layer = match l["kind"].as_str().unwrap() {
                "conv2d" => RefLayer::Conv {
                    w: weights(),
                    out_c: shape[0],
                    in_c: shape[1],
                    kh: shape[2],
                    kw: shape[3],
                    stride: int(l, "stride").unwrap_or(1),
                    pad: int(l, "padding").unwrap_or(0),
                },
                "dense" => RefLayer::Dense {
                    w: weights(),
                    out_f: shape[0],
                    in_f: shape[1],
                },
                "bias_add" => RefLayer::Bias(weights()),
                "relu" => RefLayer::Relu,
                "maxpool2d" => RefLayer::MaxPool {
                    size: int(l, "size").unwrap(),
                    stride: int(l, "stride").unwrap(),
                },
                "avgpool2d" => RefLayer::AvgPool,
                "flatten" => RefLayer::Flatten,
                k => panic!("kind {k}"),
            };
            layers.push((layer, probe));
        }
        Self { layers }
    }

    pub fn apply(layer: &RefLayer, x: &Arr) -> Arr {
        match layer {
            RefLayer::Conv {
                w,
                out_c,
                in_c,
                kh,
                kw,
                stride,
                pad,
            } => {
                let (c, h, wd) = x.chw();
                assert_eq!(c, *in_c);
                let oh = (h + 2 * pad - kh) / stride + 1;
                let ow = (wd + 2 * pad - kw) / stride + 1;
                let mut out = vec![0.0; out_c * oh * ow];
                for o in 0..*out_c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = 0.0;
                            for i in 0..*in_c {
                                for ky in 0..*kh {
                                    for kx in 0..*kw {
                                        let y = (oy * stride + ky) as isize - *pad as isize;
                                        let xx = (ox * stride + kx) as isize - *pad as isize;
                                        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                            continue;
                                        }
                                        s += w[((o * in_c + i) * kh + ky) * kw + kx]
                                            * x.at(i, y as usize, xx as usize);
                                    }
                                }
                            }
                            out[(o * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                Arr {
                    shape: vec![*out_c, oh, ow],
                    data: out,
                }
            }
            RefLayer::Dense { w, out_f, in_f } => {
                assert_eq!(x.data.len(), *in_f);
                let data = (0..*out_f)
                    .map(|o| (0..*in_f).map(|i| w[o * in_f + i] * x.data[i]).sum())
                    .collect();
                Arr {
                    shape: vec![*out_f],
                    data,
                }
            }
            RefLayer::Bias(b) => {
                let per = x.data.len() / b.len();
                Arr {
                    shape: x.shape.clone(),
                    data: x
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v + b[i / per])
                        .collect(),
                }
            }
            RefLayer::Relu => Arr {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| v.max(0.0)).collect(),
            },
            RefLayer::MaxPool { size, stride } => {
                let (c, h, w) = x.chw();
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut data = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..*size {
                                for dx in 0..*size {
                                    m = m.max(x.at(ch, oy * stride + dy, ox * stride + dx));
                                }
                            }
                            data.push(m);
                        }
                    }
                }
                Arr {
                    shape: vec![c, oh, ow],
                    data,
                }
            }
            RefLayer::AvgPool => {
                let (c, _, _) = x.chw();
                Arr {
                    shape: vec![c, 1, 1],
                    data: (0..c).map(|ch| x.channel_mean(ch)).collect(),
                }
            }
            RefLayer::Flatten => Arr {
                shape: vec![x.data.len()],
                data: x.data.clone(),
            },
        }
    }

    /// Probe activations and logits.
    pub fn forward(&self, input: &[f32], shape: &[usize]) -> (Vec<Arr>, Vec<f64>) {
        let mut x = Arr {
            shape: shape.to_vec(),
            data: input.iter().map(|&v| f64::from(v)).collect(),
        };
        let mut probes = Vec::new();
        for (l, probe) in &self.layers {
            x = Self::apply(l, &x);
            if *probe {
                probes.push(x.clone());
            }
        }
        (probes, x.data)
    }

    /// Layers strictly after probe `p` up to and including probe `p + 1`.
    pub fn span(&self, p: usize) -> &[(RefLayer, bool)] {
        let probe_at: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, (_, is))| *is)
            .map(|(i, _)| i)
            .collect();
        &self.layers[probe_at[p] + 1..=probe_at[p + 1]]
    }

    pub fn run_span(&self, p: usize, x: &Arr) -> Arr {
        self.span(p)
            .iter()
            .fold(x.clone(), |a, (l, _)| Self::apply(l, &a))
    }
}

pub fn to_arr(t: &gcc_core::Tensor) -> Arr {
    Arr {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&v| f64::from(v)).collect(),
    }
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

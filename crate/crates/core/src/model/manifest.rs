// SPDX-License-Identifier: MIT OR Apache-2.0

//! TOML layer manifest + little-endian `f32` weight blob.
//!
//! ```toml
//! name = "tiny"
//! blob = "model.bin"          # resolved relative to the manifest
//! input_shape = [1, 24, 24]
//! class_count = 10
//!
//! [[layers]]
//! kind = "conv2d"
//! shape = [16, 1, 3, 3]       # [out_ch, in_ch, kH, kW]
//! stride = 1
//! padding = 1
//! weight_offset = 0           # in f32 elements
//! weight_len = 144
//! is_probe = false
//! ```
//!
//! Weight-bearing layers must be concatenated in manifest order, so every
//! `weight_offset` equals the running sum of the preceding `weight_len`s.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{LayerKind, LayerSpec, ModelSpec};
use crate::error::{GccError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    #[serde(default)]
    name: Option<String>,
    // read separately by `load_model_from_path`
    #[serde(default)]
    #[allow(dead_code)]
    blob: Option<String>,
    input_shape: Vec<usize>,
    class_count: usize,
    #[serde(default)]
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    kind: String,
    #[serde(default)]
    shape: Option<Vec<usize>>,
    #[serde(default)]
    weight_offset: Option<usize>,
    #[serde(default)]
    weight_len: Option<usize>,
    #[serde(default)]
    is_probe: bool,
    #[serde(default)]
    stride: Option<usize>,
    #[serde(default)]
    padding: Option<usize>,
    #[serde(default)]
    size: Option<usize>,
}

fn shape_of(entry: &LayerEntry, rank: usize) -> Result<&[usize]> {
    match entry.shape.as_deref() {
        Some(s) if s.len() == rank => Ok(s),
        other => Err(GccError::Manifest(format!(
            "{} layer needs a shape of rank {rank}, got {other:?}",
            entry.kind
        ))),
    }
}

fn parse_kind(entry: &LayerEntry) -> Result<LayerKind> {
    let kind = match entry.kind.as_str() {
        "dense" => {
            let s = shape_of(entry, 2)?;
            LayerKind::Dense {
                out_features: s[0],
                in_features: s[1],
            }
        }
        "conv2d" => {
            let s = shape_of(entry, 4)?;
            LayerKind::Conv2d {
                out_channels: s[0],
                in_channels: s[1],
                kernel_h: s[2],
                kernel_w: s[3],
                stride: entry.stride.unwrap_or(1),
                padding: entry.padding.unwrap_or(0),
            }
        }
        "relu" => LayerKind::Relu,
        "maxpool2d" => {
            let size = entry.size.unwrap_or(2);
            LayerKind::MaxPool2d {
                size,
                stride: entry.stride.unwrap_or(size),
            }
        }
        "avgpool2d" => LayerKind::AvgPool2d,
        "flatten" => LayerKind::Flatten,
        "bias_add" | "bias-add" => {
            let s = shape_of(entry, 1)?;
            LayerKind::BiasAdd { channels: s[0] }
        }
        other => return Err(GccError::UnsupportedLayer(other.to_string())),
    };
    Ok(kind)
}

/// Parses a manifest and its weight blob into a validated [`ModelSpec`].
pub fn load_model(manifest: &str, blob: &[u8]) -> Result<ModelSpec> {
    let doc: ManifestDoc =
        toml::from_str(manifest).map_err(|e| GccError::Manifest(e.to_string()))?;

    let mut kinds = Vec::with_capacity(doc.layers.len());
    let mut declared = 0usize;
    for (i, entry) in doc.layers.iter().enumerate() {
        let kind = parse_kind(entry)?;
        let need = kind.param_count();
        let len = entry.weight_len.unwrap_or(0);
        if len != need {
            return Err(GccError::ManifestBlob(format!(
                "layer {i} ({}) declares weight_len {len}, shape implies {need}",
                entry.kind
            )));
        }
        if need > 0 {
            let offset = entry.weight_offset.unwrap_or(declared);
            if offset != declared {
                return Err(GccError::ManifestBlob(format!(
                    "layer {i} weight_offset {offset}, expected {declared} (weights must be concatenated in order)"
                )));
            }
        }
        declared += len;
        kinds.push(kind);
    }
    if blob.len() != declared * 4 {
        return Err(GccError::ManifestBlob(format!(
            "manifest declares {} bytes of weights, blob has {}",
            declared * 4,
            blob.len()
        )));
    }

    let mut cursor = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut layers = Vec::with_capacity(kinds.len());
    for (kind, entry) in kinds.into_iter().zip(&doc.layers) {
        let weights: Vec<f32> = cursor.by_ref().take(kind.param_count()).collect();
        layers.push(LayerSpec::new(kind, entry.is_probe, weights)?);
    }

    let hash = hex::encode(Sha256::digest(blob));
    ModelSpec::new(
        doc.name.unwrap_or_else(|| "model".into()),
        layers,
        doc.input_shape,
        doc.class_count,
        hash,
    )
}

/// Loads a manifest from disk; the blob path comes from the manifest's
/// `blob` key (relative to the manifest) or defaults to `<stem>.bin`.
pub fn load_model_from_path(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| GccError::io(path, e))?;
    #[derive(Deserialize)]
    struct BlobOnly {
        blob: Option<String>,
    }
    let blob_name = toml::from_str::<BlobOnly>(&text)
        .ok()
        .and_then(|b| b.blob)
        .unwrap_or_else(|| {
            path.with_extension("bin")
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(blob_name);
    let blob = std::fs::read(&blob_path).map_err(|e| GccError::io(&blob_path, e))?;
    load_model(&text, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DENSE_4_3: &str = r#"
input_shape = [4]
class_count = 3

[[layers]]
kind = "dense"
shape = [3, 4]
weight_offset = 0
weight_len = 12

[[layers]]
kind = "bias_add"
shape = [3]
weight_offset = 12
weight_len = 3
is_probe = true
"#;

    fn blob(n: usize) -> Vec<u8> {
        (0..n)
            .flat_map(|i| (i as f32 * 0.1).to_le_bytes())
            .collect()
    }

    #[test]
    fn minimal_dense_model() {
        let m = load_model(DENSE_4_3, &blob(15)).unwrap();
        assert_eq!(m.probe_count(), 1);
        assert_eq!(m.class_count(), 3);
        assert_eq!(m.layers()[0].weights()[11], 11.0f32 * 0.1);
        assert_eq!(
            m.layers()[1].weights(),
            &[12.0f32 * 0.1, 13.0 * 0.1, 14.0 * 0.1]
        );
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut b = blob(15);
        b.pop();
        let err = load_model(DENSE_4_3, &b).unwrap_err();
        assert!(
            err.to_string().contains("manifest/blob inconsistency"),
            "{err}"
        );
    }

    #[test]
    fn unknown_layer_kind() {
        let text = DENSE_4_3.replace("kind = \"dense\"", "kind = \"lstm\"");
        let err = load_model(&text, &blob(15)).unwrap_err();
        assert!(err.to_string().contains("unsupported layer"), "{err}");
    }

    #[test]
    fn out_of_order_offsets() {
        let text = DENSE_4_3.replace("weight_offset = 12", "weight_offset = 0");
        assert!(matches!(
            load_model(&text, &blob(15)),
            Err(GccError::ManifestBlob(_))
        ));
    }

    #[test]
    fn final_layer_must_emit_logits() {
        let text = DENSE_4_3.replace("class_count = 3", "class_count = 5");
        assert!(matches!(
            load_model(&text, &blob(15)),
            Err(GccError::Manifest(_))
        ));
    }

    #[test]
    fn blob_hash_tracks_weights() {
        let a = load_model(DENSE_4_3, &blob(15)).unwrap();
        let mut b = blob(15);
        b[0] ^= 1;
        let b = load_model(DENSE_4_3, &b).unwrap();
        assert_ne!(a.blob_hash(), b.blob_hash());
        assert_eq!(a.blob_hash().len(), 64);
    }
}

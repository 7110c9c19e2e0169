// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset pack: a flat binary container of images and labels.
//!
//! Layout (all little-endian):
//!
//! ```text
//! u32 sample_count, u32 channels, u32 height, u32 width, u32 label_count
//! f32[sample_count * channels * height * width]   row-major samples
//! u16[label_count]                                 labels (0 or sample_count)
//! ```

use std::path::Path;

use crate::error::{GccError, Result};
use crate::tensor::Tensor;

const HEADER_BYTES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPack {
    shape: [usize; 3],
    samples: Vec<f32>,
    labels: Vec<u16>,
}

impl DatasetPack {
    pub fn new(shape: [usize; 3], samples: Vec<f32>, labels: Vec<u16>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || !samples.len().is_multiple_of(per) {
            return Err(GccError::DatasetPack(format!(
                "{} values do not split into samples of shape {shape:?}",
                samples.len()
            )));
        }
        let count = samples.len() / per;
        if !labels.is_empty() && labels.len() != count {
            return Err(GccError::DatasetPack(format!(
                "{} labels for {count} samples",
                labels.len()
            )));
        }
        Ok(Self {
            shape,
            samples,
            labels,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(GccError::DatasetPack("truncated header".into()));
        }
        let word = |i: usize| {
            u32::from_le_bytes([
                bytes[4 * i],
                bytes[4 * i + 1],
                bytes[4 * i + 2],
                bytes[4 * i + 3],
            ]) as usize
        };
        let (n, c, h, w, labels) = (word(0), word(1), word(2), word(3), word(4));
        let values = n * c * h * w;
        let expected = HEADER_BYTES + values * 4 + labels * 2;
        if bytes.len() != expected {
            return Err(GccError::DatasetPack(format!(
                "header implies {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_BYTES..HEADER_BYTES + values * 4];
        let samples: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(GccError::DatasetPack("non-finite sample values".into()));
        }
        let labels = bytes[HEADER_BYTES + values * 4..]
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        Self::new([c, h, w], samples, labels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(HEADER_BYTES + self.samples.len() * 4 + self.labels.len() * 2);
        for v in [
            self.len(),
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.labels.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GccError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| GccError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.shape.iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn sample(&self, i: usize) -> Tensor {
        let per: usize = self.shape.iter().product();
        Tensor::new(
            self.shape.to_vec(),
            self.samples[i * per..(i + 1) * per].to_vec(),
        )
        .expect("pack shape validated")
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.get(i).map(|&l| usize::from(l))
    }

    /// Keeps only the listed samples, in the given order.
    pub fn select(&self, ids: &[usize]) -> Self {
        let per: usize = self.shape.iter().product();
        let samples = ids
            .iter()
            .flat_map(|&i| self.samples[i * per..(i + 1) * per].iter().copied())
            .collect();
        let labels = if self.labels.is_empty() {
            Vec::new()
        } else {
            ids.iter().map(|&i| self.labels[i]).collect()
        };
        Self {
            shape: self.shape,
            samples,
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip() {
        let pack =
            DatasetPack::new([1, 2, 2], (0..8).map(|v| v as f32).collect(), vec![3, 7]).unwrap();
        let bytes = pack.to_bytes();
        assert_eq!(bytes.len(), 20 + 32 + 4);
        assert_eq!(DatasetPack::from_bytes(&bytes).unwrap(), pack);
        assert_eq!(pack.sample(1).data(), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(pack.label(1), Some(7));
    }

    #[test]
    fn truncated_pack() {
        let pack = DatasetPack::new([1, 1, 1], vec![1.0], vec![]).unwrap();
        let mut bytes = pack.to_bytes();
        bytes.pop();
        assert!(DatasetPack::from_bytes(&bytes).is_err());
    }

    #[test]
    fn select_reorders() {
        let pack = DatasetPack::new([1, 1, 1], vec![0.0, 1.0, 2.0], vec![0, 1, 2]).unwrap();
        let s = pack.select(&[2, 0]);
        assert_eq!(s.sample(0).data(), &[2.0]);
        assert_eq!(s.labels(), &[2, 0]);
    }
}

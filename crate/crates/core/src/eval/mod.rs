// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circuit validation protocols.
//!
//! * [`faithfulness_completeness`]: ablate the circuit neurons, an equal
//!   number of random neurons, and an equal per-layer number of non-circuit
//!   neurons; compare the drop of the original top-1 output.
//! * [`deletion_insertion`]: remove / restore inter-channel weight edges of
//!   one span in ranked order and trace the top-1 class probability.
//! * [`audit_misclassification`]: zero or double each circuit's neurons and
//!   measure the true-class logit gain.

mod audit;
mod curves;
mod faithfulness;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use audit::{audit_misclassification, AuditEntry, AuditReport};
pub use curves::{
    auc, deletion_insertion, edge_order_registry, CurvePoint, CurveReport, EdgeOrder,
    FullSensitivityOrder, RandomOrder, RankedEdge, SensitivityOrder, SpanEdges,
};
pub use faithfulness::{
    faithfulness_completeness, faithfulness_with_circuits, EvalConfig, EvalReport, QueryRecord,
};

use crate::registry::Registry;
use crate::tensor::Tensor;

/// One evaluation query: an input with an optional ground-truth label.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: String,
    pub input: Tensor,
    pub label: Option<usize>,
}

/// Scalar read off the logits for a reference class.
pub trait EvalMetric: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn score(&self, logits: &Tensor, class: usize) -> f64;
    /// Reference class: the original top-1 prediction, or the label for
    /// metrics that grade correctness.
    fn reference_class(&self, original: &Tensor, label: Option<usize>) -> usize {
        let _ = label;
        original.argmax()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogitMetric;

impl EvalMetric for LogitMetric {
    fn name(&self) -> &'static str {
        "logit"
    }

    fn score(&self, logits: &Tensor, class: usize) -> f64 {
        f64::from(logits.data()[class])
    }
}

/// 1 when the top-1 prediction equals the reference class, else 0; the mean
/// over queries is an accuracy.
#[derive(Debug, Clone, Copy, Default)]
pub struct AccuracyMetric;

impl EvalMetric for AccuracyMetric {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn score(&self, logits: &Tensor, class: usize) -> f64 {
        if logits.argmax() == class {
            1.0
        } else {
            0.0
        }
    }

    fn reference_class(&self, original: &Tensor, label: Option<usize>) -> usize {
        label.unwrap_or_else(|| original.argmax())
    }
}

pub fn metric_registry() -> Registry<dyn EvalMetric> {
    let mut reg: Registry<dyn EvalMetric> = Registry::new("metric");
    reg.register("logit", Arc::new(LogitMetric));
    reg.register("accuracy", Arc::new(AccuracyMetric));
    reg
}

/// Independent deterministic stream per query.
pub(crate) fn query_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

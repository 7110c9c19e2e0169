// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::discovery::Circuit;
use crate::error::{GccError, Result};
use crate::model::{AblationSet, ActivationTrace, ModelSpec};
use crate::neuron::NeuronRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Position of the circuit in the input list.
    pub circuit: usize,
    pub root: NeuronRef,
    pub neurons: Vec<NeuronRef>,
    pub gain_inhibit: f64,
    pub gain_stimulate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub query_id: String,
    pub true_class: usize,
    pub predicted_class: usize,
    /// True-class logit of the unmodified forward.
    pub baseline: f64,
    pub span: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub entries: Vec<AuditEntry>,
    /// Circuit positions by descending inhibit gain.
    pub rank_inhibit: Vec<usize>,
    /// Circuit positions by descending stimulate gain.
    pub rank_stimulate: Vec<usize>,
}

pub const STIMULATE_FACTOR: f32 = 2.0;

fn ranking(entries: &[AuditEntry], gain: impl Fn(&AuditEntry) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| {
        gain(&entries[b])
            .total_cmp(&gain(&entries[a]))
            .then(a.cmp(&b))
    });
    idx.into_iter().map(|i| entries[i].circuit).collect()
}

/// Zeroes, then doubles, every neuron of each circuit and records the change
/// of the true-class logit against the unmodified forward. With `span =
/// Some(p)` only circuit neurons in probe layers `p` and `p + 1` take part.
pub fn audit_misclassification(
    model: &ModelSpec,
    trace: &ActivationTrace,
    true_class: usize,
    circuits: &[Circuit],
    span: Option<usize>,
) -> Result<AuditReport> {
    if true_class >= model.class_count() {
        return Err(GccError::BadClass {
            class: true_class,
            classes: model.class_count(),
        });
    }
    if let Some(p) = span {
        model.span_layers(p)?;
    }
    let predicted = trace.predicted_class();
    let warning = (predicted == true_class).then(|| {
        tracing::warn!(query = %trace.query_id, "query is classified correctly; auditing anyway");
        format!("predicted class equals the true class {true_class}")
    });
    let baseline = f64::from(trace.logits.data()[true_class]);
    let logit = |set: AblationSet| -> Result<f64> {
        let logits = model.ablate_from_probe(0, trace.probe(0), &set)?;
        Ok(f64::from(logits.data()[true_class]))
    };
    let entries = circuits
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let neurons: Vec<NeuronRef> = c
                .nodes
                .iter()
                .filter(|n| span.is_none_or(|p| n.probe_layer == p || n.probe_layer == p + 1))
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let (gain_inhibit, gain_stimulate) = if neurons.is_empty() {
                (0.0, 0.0)
            } else {
                (
                    logit(AblationSet::zeroing(neurons.iter().copied()))? - baseline,
                    logit(AblationSet::scaling(
                        neurons.iter().copied(),
                        STIMULATE_FACTOR,
                    ))? - baseline,
                )
            };
            Ok(AuditEntry {
                circuit: i,
                root: c.root,
                neurons,
                gain_inhibit,
                gain_stimulate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditReport {
        query_id: trace.query_id.clone(),
        true_class,
        predicted_class: predicted,
        baseline,
        span,
        warning,
        rank_inhibit: ranking(&entries, |e| e.gain_inhibit),
        rank_stimulate: ranking(&entries, |e| e.gain_stimulate),
        entries,
    })
}

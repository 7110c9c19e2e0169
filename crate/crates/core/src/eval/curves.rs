// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::query_rng;
use crate::discovery::Circuit;
use crate::error::Result;
use crate::index::Aggregation;
use crate::model::{ActivationTrace, EdgeMode, ModelSpec};
use crate::neuron::NeuronRef;
use crate::registry::Registry;
use crate::scores::neuron_sensitivity;
use crate::tensor::softmax;

/// One inter-channel edge of a span, identified by channel indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEdge {
    pub src: usize,
    pub tgt: usize,
    pub s_ns: f64,
    pub in_circuit: bool,
}

/// Everything an ordering may look at: every edge of the span with the
/// query's sensitivity score, circuit edges flagged (and carrying the
/// circuit's score).
#[derive(Debug, Clone)]
pub struct SpanEdges {
    pub edges: Vec<RankedEdge>,
}

pub trait EdgeOrder: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn rank(&self, span: &SpanEdges, rng: &mut ChaCha8Rng) -> Vec<RankedEdge>;
}

/// Circuit edges by descending `s_ns`; the remaining edges follow in the
/// order [`RandomOrder`] produces from the same generator, so a paired
/// comparison against the random order differs only in the circuit prefix.
#[derive(Debug, Clone, Copy, Default)]
pub struct SensitivityOrder;

impl EdgeOrder for SensitivityOrder {
    fn name(&self) -> &'static str {
        "s-ns"
    }

    fn rank(&self, span: &SpanEdges, rng: &mut ChaCha8Rng) -> Vec<RankedEdge> {
        let shuffled = RandomOrder.rank(span, rng);
        let mut head: Vec<RankedEdge> = shuffled.iter().filter(|e| e.in_circuit).copied().collect();
        head.sort_by(|a, b| {
            b.s_ns
                .total_cmp(&a.s_ns)
                .then((a.src, a.tgt).cmp(&(b.src, b.tgt)))
        });
        head.extend(shuffled.into_iter().filter(|e| !e.in_circuit));
        head
    }
}

/// Circuit edges by descending `s_ns`, then every other span edge by the
/// query's descending `s_ns`; ties by `(src, tgt)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullSensitivityOrder;

impl EdgeOrder for FullSensitivityOrder {
    fn name(&self) -> &'static str {
        "s-ns-all"
    }

    fn rank(&self, span: &SpanEdges, _rng: &mut ChaCha8Rng) -> Vec<RankedEdge> {
        let mut edges = span.edges.clone();
        edges.sort_by(|a, b| {
            b.in_circuit
                .cmp(&a.in_circuit)
                .then(b.s_ns.total_cmp(&a.s_ns))
                .then((a.src, a.tgt).cmp(&(b.src, b.tgt)))
        });
        edges
    }
}

/// Seeded uniform shuffle of every span edge.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomOrder;

impl EdgeOrder for RandomOrder {
    fn name(&self) -> &'static str {
        "random"
    }

    fn rank(&self, span: &SpanEdges, rng: &mut ChaCha8Rng) -> Vec<RankedEdge> {
        let mut edges = span.edges.clone();
        edges.shuffle(rng);
        edges
    }
}

pub fn edge_order_registry() -> Registry<dyn EdgeOrder> {
    let mut reg: Registry<dyn EdgeOrder> = Registry::new("edge order");
    reg.register("s-ns", Arc::new(SensitivityOrder));
    reg.register("s-ns-all", Arc::new(FullSensitivityOrder));
    reg.register("random", Arc::new(RandomOrder));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Edges removed (deletion) or kept (insertion) so far.
    pub step: usize,
    /// The edge handled at this step; `None` at step 0.
    pub edge: Option<RankedEdge>,
    pub deletion: f64,
    pub insertion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub query_id: String,
    pub span: usize,
    pub order: String,
    /// Original top-1 class whose probability is traced.
    pub class: usize,
    pub circuit_edges: usize,
    pub points: Vec<CurvePoint>,
    pub auc_deletion: Option<f64>,
    pub auc_insertion: Option<f64>,
}

impl CurveReport {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One row per step: `rank,src,tgt,s_ns,deletion,insertion`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,src,tgt,s_ns,deletion,insertion\n");
        for p in &self.points {
            match p.edge {
                Some(e) => out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.step, e.src, e.tgt, e.s_ns, p.deletion, p.insertion
                )),
                None => out.push_str(&format!("{},,,,{},{}\n", p.step, p.deletion, p.insertion)),
            }
        }
        out
    }
}

/// Trapezoidal area under `ys` sampled at evenly spaced points of `[0, 1]`.
pub fn auc(ys: &[f64]) -> f64 {
    if ys.len() < 2 {
        return ys.first().copied().unwrap_or(0.0);
    }
    let h = 1.0 / (ys.len() - 1) as f64;
    ys.windows(2).map(|w| (w[0] + w[1]) * 0.5 * h).sum()
}

fn span_edges(
    model: &ModelSpec,
    trace: &ActivationTrace,
    circuits: &[Circuit],
    span: usize,
    agg: Aggregation,
) -> Result<SpanEdges> {
    let mut circuit: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in circuits.iter().flat_map(|c| c.edges_from_layer(span)) {
        let s = circuit
            .entry((e.src.channel, e.tgt.channel))
            .or_insert(e.s_ns);
        *s = s.max(e.s_ns);
    }
    let mut edges = Vec::new();
    for src in 0..model.probes()[span].channels() {
        let sv = neuron_sensitivity(model, trace, NeuronRef::new(span, src), agg)?;
        for (tgt, &v) in sv.values.iter().enumerate() {
            let hit = circuit.get(&(src, tgt));
            edges.push(RankedEdge {
                src,
                tgt,
                s_ns: hit.copied().unwrap_or(v),
                in_circuit: hit.is_some(),
            });
        }
    }
    Ok(SpanEdges { edges })
}

/// Removes (deletion) or restores (insertion) the inter-channel weight
/// edges of span `span` one at a time in ranked order, tracing the softmax
/// probability of the original top-1 class. Every edge of the span is
/// ranked so both curves share their endpoints.
#[allow(clippy::too_many_arguments)]
pub fn deletion_insertion(
    model: &ModelSpec,
    trace: &ActivationTrace,
    circuits: &[Circuit],
    span: usize,
    order: &dyn EdgeOrder,
    agg: Aggregation,
    seed: u64,
    stream: u64,
) -> Result<CurveReport> {
    model.edge_span(span)?;
    let class = trace.predicted_class();
    let circuit_edges = circuits
        .iter()
        .flat_map(|c| c.edges_from_layer(span))
        .map(|e| (e.src.channel, e.tgt.channel))
        .collect::<BTreeSet<_>>()
        .len();
    let mut report = CurveReport {
        query_id: trace.query_id.clone(),
        span,
        order: order.name().into(),
        class,
        circuit_edges,
        points: Vec::new(),
        auc_deletion: None,
        auc_insertion: None,
    };
    if circuit_edges == 0 {
        return Ok(report);
    }
    let edges = span_edges(model, trace, circuits, span, agg)?;
    let ranked = order.rank(&edges, &mut query_rng(seed, stream));

    let activation = trace.probe(span);
    let prob = |m: &ModelSpec| -> Result<f64> {
        let logits = m.logits_from(span, activation)?;
        Ok(f64::from(softmax(logits.data())[class]))
    };
    let mut prefix = BTreeSet::new();
    for step in 0..=ranked.len() {
        if step > 0 {
            let e = ranked[step - 1];
            prefix.insert((e.src, e.tgt));
        }
        let deletion = prob(&model.edge_ablate(span, &prefix, EdgeMode::Delete)?)?;
        let insertion = prob(&model.edge_ablate(span, &prefix, EdgeMode::KeepOnly)?)?;
        report.points.push(CurvePoint {
            step,
            edge: step.checked_sub(1).map(|i| ranked[i]),
            deletion,
            insertion,
        });
    }
    let del: Vec<f64> = report.points.iter().map(|p| p.deletion).collect();
    let ins: Vec<f64> = report.points.iter().map(|p| p.insertion).collect();
    report.auc_deletion = Some(auc(&del));
    report.auc_insertion = Some(auc(&ins));
    Ok(report)
}

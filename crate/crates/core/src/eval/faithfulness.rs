// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metric_registry, query_rng, EvalMetric, Query};
use crate::discovery::{Circuit, Discoverer, DiscoveryConfig, ExpansionCache};
use crate::error::{GccError, Result};
use crate::index::ActivationIndex;
use crate::model::{AblationSet, ModelSpec};
use crate::neuron::NeuronRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub discovery: DiscoveryConfig,
    pub seed: u64,
    /// Registered metric name (`logit` or `accuracy`).
    pub metric: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            discovery: DiscoveryConfig::default(),
            seed: 0,
            metric: "logit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub class: usize,
    pub circuit_count: usize,
    pub original: f64,
    pub circuit_ablated: f64,
    pub random_ablated: f64,
    pub complement_ablated: f64,
    /// Neurons ablated in each condition (equal by construction).
    pub neuron_counts: [usize; 3],
    /// Circuit neurons per probe layer.
    pub per_layer: Vec<usize>,
    /// Complement neurons that had to be drawn from other layers.
    pub complement_deficit: usize,
}

impl QueryRecord {
    pub fn circuit_drop(&self) -> f64 {
        self.original - self.circuit_ablated
    }

    pub fn random_drop(&self) -> f64 {
        self.original - self.random_ablated
    }

    pub fn complement_drop(&self) -> f64 {
        self.original - self.complement_ablated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub reference: String,
    pub seed: u64,
    pub records: Vec<QueryRecord>,
    pub mean_original: f64,
    pub mean_circuit: f64,
    pub mean_random: f64,
    pub mean_complement: f64,
    pub mean_circuit_drop: f64,
    pub mean_random_drop: f64,
    pub mean_complement_drop: f64,
    pub count_parity: bool,
}

impl EvalReport {
    fn from_records(metric: &dyn EvalMetric, seed: u64, records: Vec<QueryRecord>) -> Self {
        let mean = |f: &dyn Fn(&QueryRecord) -> f64| {
            if records.is_empty() {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / records.len() as f64
            }
        };
        Self {
            metric: metric.name().into(),
            reference: match metric.name() {
                "accuracy" => "top-1 prediction vs. label (original top-1 when unlabelled)".into(),
                _ => "logit of the original top-1 class".into(),
            },
            seed,
            mean_original: mean(&|r| r.original),
            mean_circuit: mean(&|r| r.circuit_ablated),
            mean_random: mean(&|r| r.random_ablated),
            mean_complement: mean(&|r| r.complement_ablated),
            mean_circuit_drop: mean(&QueryRecord::circuit_drop),
            mean_random_drop: mean(&QueryRecord::random_drop),
            mean_complement_drop: mean(&QueryRecord::complement_drop),
            count_parity: records.iter().all(|r| {
                r.neuron_counts[0] == r.neuron_counts[1] && r.neuron_counts[1] == r.neuron_counts[2]
            }),
            records,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "query_id,class,circuits,neurons,original,circuit_ablated,random_ablated,complement_ablated,complement_deficit\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.query_id,
                r.class,
                r.circuit_count,
                r.neuron_counts[0],
                r.original,
                r.circuit_ablated,
                r.random_ablated,
                r.complement_ablated,
                r.complement_deficit
            ));
        }
        out
    }
}

/// Complement neurons: per layer as many as the circuit has
/// there, with any per-layer shortfall drawn from non-circuit neurons of the
/// other layers. Returns the picks and the shortfall.
fn complement_sample(
    model: &ModelSpec,
    circuit: &BTreeSet<NeuronRef>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<NeuronRef>, usize) {
    let mut picked = Vec::new();
    let mut deficit = 0;
    for (layer, probe) in model.probes().iter().enumerate() {
        let want = circuit.iter().filter(|n| n.probe_layer == layer).count();
        let pool: Vec<NeuronRef> = (0..probe.channels())
            .map(|c| NeuronRef::new(layer, c))
            .filter(|n| !circuit.contains(n))
            .collect();
        let take = want.min(pool.len());
        deficit += want - take;
        picked.extend(sample(rng, pool.len(), take).into_iter().map(|i| pool[i]));
    }
    if deficit > 0 {
        let chosen: BTreeSet<NeuronRef> = picked.iter().copied().collect();
        let pool: Vec<NeuronRef> = model
            .neurons()
            .into_iter()
            .filter(|n| !circuit.contains(n) && !chosen.contains(n))
            .collect();
        let take = deficit.min(pool.len());
        picked.extend(sample(rng, pool.len(), take).into_iter().map(|i| pool[i]));
    }
    picked.sort();
    (picked, deficit)
}

fn evaluate_query(
    model: &ModelSpec,
    query: &Query,
    circuits: &[Circuit],
    metric: &dyn EvalMetric,
    seed: u64,
    stream: u64,
) -> Result<QueryRecord> {
    let trace = model.forward(&query.input)?;
    let class = metric.reference_class(&trace.logits, query.label);
    if class >= model.class_count() {
        return Err(GccError::BadClass {
            class,
            classes: model.class_count(),
        });
    }
    let neurons: BTreeSet<NeuronRef> = circuits
        .iter()
        .flat_map(|c| c.nodes.iter().copied())
        .collect();
    let count = neurons.len();
    let mut rng = query_rng(seed, stream);
    let (complement, deficit) = complement_sample(model, &neurons, &mut rng);
    let all = model.neurons();
    let random: Vec<NeuronRef> = sample(&mut rng, all.len(), count.min(all.len()))
        .into_iter()
        .map(|i| all[i])
        .collect();

    let score = |set: &AblationSet| -> Result<f64> {
        Ok(metric.score(&model.ablate_from_probe(0, trace.probe(0), set)?, class))
    };
    let original = metric.score(&trace.logits, class);
    let (circuit_ablated, random_ablated, complement_ablated) = if count == 0 {
        (original, original, original)
    } else {
        (
            score(&AblationSet::zeroing(neurons.iter().copied()))?,
            score(&AblationSet::zeroing(random.iter().copied()))?,
            score(&AblationSet::zeroing(complement.iter().copied()))?,
        )
    };
    Ok(QueryRecord {
        query_id: query.id.clone(),
        class,
        circuit_count: circuits.len(),
        original,
        circuit_ablated,
        random_ablated,
        complement_ablated,
        neuron_counts: [count, random.len(), complement.len()],
        per_layer: (0..model.probe_count())
            .map(|l| neurons.iter().filter(|n| n.probe_layer == l).count())
            .collect(),
        complement_deficit: deficit,
    })
}

/// Ablation comparison over already discovered circuits (one list per query).
pub fn faithfulness_with_circuits(
    model: &ModelSpec,
    queries: &[Query],
    circuits: &[Vec<Circuit>],
    seed: u64,
    metric: &str,
) -> Result<EvalReport> {
    if queries.len() != circuits.len() {
        return Err(GccError::Config(format!(
            "{} queries but {} circuit lists",
            queries.len(),
            circuits.len()
        )));
    }
    let metric = metric_registry().get(metric)?;
    let records = queries
        .par_iter()
        .zip(circuits.par_iter())
        .enumerate()
        .map(|(i, (q, cs))| evaluate_query(model, q, cs, metric.as_ref(), seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(metric.as_ref(), seed, records))
}

/// Discovers every query's circuits, then runs the three ablation conditions.
pub fn faithfulness_completeness(
    model: &ModelSpec,
    index: &ActivationIndex,
    queries: &[Query],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let d = Discoverer::new(model, index, &cfg.discovery)?;
    let circuits = queries
        .iter()
        .map(|q| {
            let trace = model.forward(&q.input)?.with_query_id(q.id.clone());
            d.discover_all(&trace, Some(&ExpansionCache::new()))
        })
        .collect::<Result<Vec<_>>>()?;
    faithfulness_with_circuits(model, queries, &circuits, cfg.seed, &cfg.metric)
}

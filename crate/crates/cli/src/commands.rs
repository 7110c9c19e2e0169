// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gcc_core::discovery::{Discoverer, DiscoveryConfig, SourceDecision};
use gcc_core::eval::{
    audit_misclassification, deletion_insertion, edge_order_registry, faithfulness_with_circuits,
    AuditReport, CurveReport, Query,
};
use gcc_core::export::{activation_region, mask_file_name, to_dot, to_sankey, RegionConfig};
use gcc_core::index::sweep as sweep_dataset;
use gcc_core::report::{write_bytes, write_text, RunConfig, RunReport};
use gcc_core::{
    load_model_from_path, merge_circuits, ActivationIndex, ActivationTrace, Circuit, DatasetPack,
    ModelSpec, NeuronRef,
};

use crate::{
    AuditArgs, Common, CurvesArgs, DiscoverArgs, EvaluateArgs, ExportArgs, ExportFormat, QueryArgs,
    SweepArgs, UsageError,
};

fn load_model(path: &Path) -> Result<ModelSpec> {
    if !path.exists() {
        bail!("model not found: {}", path.display());
    }
    Ok(load_model_from_path(path)?)
}

fn load_dataset(path: &Path) -> Result<DatasetPack> {
    if !path.exists() {
        bail!("dataset not found: {}", path.display());
    }
    Ok(DatasetPack::read(path)?)
}

fn index_path(common: &Common, explicit: Option<&PathBuf>) -> PathBuf {
    explicit
        .cloned()
        .unwrap_or_else(|| common.out.join("index.bin"))
}

fn load_index(path: &Path, model: &ModelSpec) -> Result<ActivationIndex> {
    if !path.exists() {
        bail!("index not found: {} (run sweep first)", path.display());
    }
    let index = ActivationIndex::read(path)?;
    index.check_model(model)?;
    Ok(index)
}

/// Selected queries as `(id, position)` pairs.
fn select_queries(pack: &DatasetPack, args: &QueryArgs) -> Result<Vec<(String, usize)>> {
    let mut ids: Vec<usize> = if args.query_ids.is_empty() {
        (0..pack.len()).collect()
    } else {
        args.query_ids.clone()
    };
    if let Some(&bad) = ids.iter().find(|&&i| i >= pack.len()) {
        return Err(UsageError(format!(
            "query id {bad} out of range (pack has {} samples)",
            pack.len()
        ))
        .into());
    }
    if let Some(n) = args.query_count {
        ids.truncate(n);
    }
    Ok(ids.into_iter().map(|i| (format!("q{i:04}"), i)).collect())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn circuit_dir(out: &Path, query: &str) -> PathBuf {
    out.join("circuits").join(query)
}

fn circuit_file_name(root: NeuronRef) -> String {
    format!("root_L{}_C{}.json", root.probe_layer, root.channel)
}

/// Listing written next to the circuit files of one query.
#[derive(Debug, Serialize, Deserialize)]
struct CircuitListing {
    query_id: String,
    files: Vec<String>,
}

fn load_circuits(out: &Path, query: &str) -> Result<Vec<Circuit>> {
    let dir = circuit_dir(out, query);
    let listing = dir.join("circuits.json");
    if !listing.exists() {
        bail!(
            "no circuits for {query} under {} (run discover first)",
            dir.display()
        );
    }
    let text = std::fs::read_to_string(&listing).with_context(|| path_str(&listing))?;
    let listing: CircuitListing =
        serde_json::from_str(&text).with_context(|| path_str(&listing))?;
    listing
        .files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            let text = std::fs::read_to_string(&p).with_context(|| path_str(&p))?;
            Ok(Circuit::from_json(&text)?)
        })
        .collect()
}

fn discovery_config(out: &Path) -> Result<DiscoveryConfig> {
    let p = out.join("reports").join("discover.json");
    if !p.exists() {
        bail!(
            "no discovery report at {} (run discover first)",
            p.display()
        );
    }
    let text = std::fs::read_to_string(&p).with_context(|| path_str(&p))?;
    let report: RunReport<serde_json::Value> =
        serde_json::from_str(&text).with_context(|| path_str(&p))?;
    Ok(report.config.discovery)
}

fn run_config(
    common: &Common,
    dataset: Option<&Path>,
    index: Option<&Path>,
    queries: Option<&QueryArgs>,
    discovery: DiscoveryConfig,
    seed: u64,
    metric: &str,
) -> RunConfig {
    RunConfig {
        model: path_str(&common.model),
        dataset: dataset.map(path_str),
        index: index.map(path_str),
        queries: queries.map(|q| path_str(&q.queries)),
        query_ids: queries
            .map(|q| q.query_ids.iter().map(|i| i.to_string()).collect())
            .unwrap_or_default(),
        discovery,
        seed,
        metric: metric.into(),
        out: path_str(&common.out),
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let dataset = load_dataset(&a.dataset)?;
    let t = Instant::now();
    let summary = sweep_dataset(&model, &dataset, a.agg.into())?;
    let index = ActivationIndex::new(summary);
    let path = a.common.out.join("index.bin");
    std::fs::create_dir_all(&a.common.out).with_context(|| path_str(&a.common.out))?;
    index.write(&path)?;
    println!(
        "indexed {} neurons over {} samples in {:.2}s",
        model.neuron_count(),
        index.sample_count(),
        t.elapsed().as_secs_f64()
    );
    announce(&path);
    let cfg = DiscoveryConfig {
        agg: a.agg.into(),
        ..DiscoveryConfig::default()
    };
    let report = RunReport::new(
        "sweep",
        run_config(
            &a.common,
            Some(&a.dataset),
            Some(&path),
            None,
            cfg,
            0,
            "logit",
        ),
        serde_json::json!({
            "neurons": model.neuron_count(),
            "samples": index.sample_count(),
            "model_hash": model.blob_hash(),
        }),
    );
    let rp = a.common.out.join("reports").join("sweep.json");
    report.write(&rp)?;
    announce(&rp);
    Ok(())
}

#[derive(Debug, Serialize)]
struct DiscoverEntry {
    query_id: String,
    position: usize,
    label: Option<usize>,
    predicted: usize,
    roots: Vec<NeuronRef>,
    circuits: usize,
    merged_nodes: usize,
    merged_edges: usize,
    truncated: bool,
    fallbacks: usize,
    thresholds: Vec<SourceDecision>,
}

pub fn discover(a: &DiscoverArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let index_file = index_path(&a.common, a.discovery.index.as_ref());
    let index = load_index(&index_file, &model)?;
    let pack = load_dataset(&a.queries.queries)?;
    let cfg = a.discovery.config(index.summary().agg);
    let d = Discoverer::new(&model, &index, &cfg)?;
    let mut entries = Vec::new();
    for (qid, pos) in select_queries(&pack, &a.queries)? {
        let trace = model.forward(&pack.sample(pos))?.with_query_id(qid.clone());
        let circuits = d.discover_all(&trace, Some(&gcc_core::ExpansionCache::new()))?;
        let dir = circuit_dir(&a.common.out, &qid);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| path_str(&dir))?;
        }
        let mut files = Vec::new();
        for c in &circuits {
            c.validate()?;
            let name = circuit_file_name(c.root);
            write_text(&dir.join(&name), &c.to_json()?)?;
            files.push(name);
        }
        let merged = if circuits.is_empty() {
            None
        } else {
            let m = merge_circuits(&circuits)?;
            m.validate()?;
            write_text(&dir.join("merged.json"), &m.to_json()?)?;
            Some(m)
        };
        let listing = CircuitListing {
            query_id: qid.clone(),
            files,
        };
        write_text(
            &dir.join("circuits.json"),
            &(serde_json::to_string_pretty(&listing)? + "\n"),
        )?;
        println!("{qid}: {} circuits", circuits.len());
        let thresholds = merged
            .as_ref()
            .map(|m| m.thresholds.clone())
            .unwrap_or_default();
        entries.push(DiscoverEntry {
            query_id: qid,
            position: pos,
            label: pack.label(pos),
            predicted: trace.predicted_class(),
            roots: circuits.iter().map(|c| c.root).collect(),
            circuits: circuits.len(),
            merged_nodes: merged.as_ref().map_or(0, |m| m.nodes.len()),
            merged_edges: merged.as_ref().map_or(0, |m| m.edges.len()),
            truncated: merged.as_ref().is_some_and(|m| m.truncated),
            fallbacks: thresholds
                .iter()
                .filter(|t| t.tau_ns.as_ref().is_some_and(|d| d.fallback))
                .count(),
            thresholds,
        });
    }
    let report = RunReport::new(
        "discover",
        run_config(
            &a.common,
            None,
            Some(&index_file),
            Some(&a.queries),
            cfg,
            0,
            "logit",
        ),
        entries,
    );
    let rp = a.common.out.join("reports").join("discover.json");
    report.write(&rp)?;
    announce(&rp);
    Ok(())
}

fn queries_with_circuits(
    out: &Path,
    pack: &DatasetPack,
    args: &QueryArgs,
) -> Result<Vec<(Query, usize, Vec<Circuit>)>> {
    select_queries(pack, args)?
        .into_iter()
        .map(|(id, pos)| {
            let circuits = load_circuits(out, &id)?;
            Ok((
                Query {
                    id,
                    input: pack.sample(pos),
                    label: pack.label(pos),
                },
                pos,
                circuits,
            ))
        })
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let pack = load_dataset(&a.queries.queries)?;
    let selected = queries_with_circuits(&a.common.out, &pack, &a.queries)?;
    let cfg = if selected.is_empty() {
        DiscoveryConfig::default()
    } else {
        discovery_config(&a.common.out)?
    };
    let (queries, circuits): (Vec<Query>, Vec<Vec<Circuit>>) =
        selected.into_iter().map(|(q, _, c)| (q, c)).unzip();
    let result = faithfulness_with_circuits(&model, &queries, &circuits, a.seed, &a.metric)?;
    println!(
        "{} queries: mean {} original {:.4}, circuit {:.4}, random {:.4}, complement {:.4}",
        result.records.len(),
        result.metric,
        result.mean_original,
        result.mean_circuit,
        result.mean_random,
        result.mean_complement
    );
    let csv = a.common.out.join("reports").join("evaluate.csv");
    write_text(&csv, &result.to_csv())?;
    let report = RunReport::new(
        "evaluate",
        run_config(
            &a.common,
            None,
            None,
            Some(&a.queries),
            cfg,
            a.seed,
            &a.metric,
        ),
        result,
    );
    let rp = a.common.out.join("reports").join("evaluate.json");
    report.write(&rp)?;
    announce(&rp);
    announce(&csv);
    Ok(())
}

#[derive(Debug, Serialize)]
struct OrderSummary {
    order: String,
    queries: usize,
    mean_auc_deletion: Option<f64>,
    mean_auc_insertion: Option<f64>,
    /// Queries where this order beats `random` (lower deletion AUC /
    /// higher insertion AUC), when `random` was traced too.
    deletion_wins: Option<usize>,
    insertion_wins: Option<usize>,
}

#[derive(Debug, Serialize)]
struct CurvesResult {
    span: usize,
    summaries: Vec<OrderSummary>,
    reports: Vec<CurveReport>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn curves(a: &CurvesArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let pack = load_dataset(&a.queries.queries)?;
    let span = match a.span {
        Some(s) => s,
        None => model
            .probe_count()
            .checked_sub(2)
            .ok_or_else(|| UsageError("the model has a single probe layer and no span".into()))?,
    };
    model.edge_span(span)?;
    let registry = edge_order_registry();
    let orders = a
        .orders
        .iter()
        .map(|name| registry.get(name))
        .collect::<gcc_core::Result<Vec<_>>>()?;
    let selected = queries_with_circuits(&a.common.out, &pack, &a.queries)?;
    let cfg = if selected.is_empty() {
        DiscoveryConfig::default()
    } else {
        discovery_config(&a.common.out)?
    };
    let reports: Vec<Vec<CurveReport>> = selected
        .par_iter()
        .map(|(q, pos, circuits)| {
            let trace = model.forward(&q.input)?.with_query_id(q.id.clone());
            orders
                .iter()
                .map(|o| {
                    deletion_insertion(
                        &model,
                        &trace,
                        circuits,
                        span,
                        o.as_ref(),
                        cfg.agg,
                        a.seed,
                        *pos as u64,
                    )
                })
                .collect()
        })
        .collect::<gcc_core::Result<_>>()?;

    let dir = a.common.out.join("curves");
    for r in reports.iter().flatten().filter(|r| !r.is_empty()) {
        let p = dir.join(format!("{}_{}.csv", r.query_id, r.order));
        write_text(&p, &r.to_csv())?;
    }
    let random = orders.iter().position(|o| o.name() == "random");
    let summaries = orders
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let rows: Vec<(&CurveReport, Option<&CurveReport>)> = reports
                .iter()
                .filter(|rs| !rs[k].is_empty())
                .map(|rs| (&rs[k], random.map(|r| &rs[r])))
                .collect();
            let del: Vec<f64> = rows.iter().filter_map(|(r, _)| r.auc_deletion).collect();
            let ins: Vec<f64> = rows.iter().filter_map(|(r, _)| r.auc_insertion).collect();
            let wins = |better: fn(f64, f64) -> bool, pick: fn(&CurveReport) -> Option<f64>| {
                random.map(|_| {
                    rows.iter()
                        .filter(|(r, b)| match (pick(r), b.and_then(pick)) {
                            (Some(x), Some(y)) => better(x, y),
                            _ => false,
                        })
                        .count()
                })
            };
            OrderSummary {
                order: o.name().into(),
                queries: rows.len(),
                mean_auc_deletion: mean(&del),
                mean_auc_insertion: mean(&ins),
                deletion_wins: wins(|x, y| x < y, |r| r.auc_deletion),
                insertion_wins: wins(|x, y| x > y, |r| r.auc_insertion),
            }
        })
        .collect::<Vec<_>>();
    for s in &summaries {
        println!(
            "{}: {} queries with span edges, mean AUC deletion {} insertion {}",
            s.order,
            s.queries,
            s.mean_auc_deletion
                .map_or("-".into(), |v| format!("{v:.4}")),
            s.mean_auc_insertion
                .map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    let result = CurvesResult {
        span,
        summaries,
        reports: reports.into_iter().flatten().collect(),
    };
    let report = RunReport::new(
        "curves",
        run_config(
            &a.common,
            None,
            None,
            Some(&a.queries),
            cfg,
            a.seed,
            "top-1 probability",
        ),
        result,
    );
    let rp = a.common.out.join("reports").join("curves.json");
    report.write(&rp)?;
    announce(&rp);
    Ok(())
}

#[derive(Debug, Serialize)]
struct AuditResult {
    skipped_correct: Vec<String>,
    unlabelled: Vec<String>,
    reports: Vec<AuditReport>,
}

pub fn audit(a: &AuditArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let pack = load_dataset(&a.queries.queries)?;
    let selected = queries_with_circuits(&a.common.out, &pack, &a.queries)?;
    let cfg = if selected.is_empty() {
        DiscoveryConfig::default()
    } else {
        discovery_config(&a.common.out)?
    };
    let mut result = AuditResult {
        skipped_correct: Vec::new(),
        unlabelled: Vec::new(),
        reports: Vec::new(),
    };
    for (q, _, circuits) in &selected {
        let Some(label) = q.label else {
            result.unlabelled.push(q.id.clone());
            continue;
        };
        let trace: ActivationTrace = model.forward(&q.input)?.with_query_id(q.id.clone());
        if trace.predicted_class() == label && !a.all {
            result.skipped_correct.push(q.id.clone());
            continue;
        }
        let r = audit_misclassification(&model, &trace, label, circuits, a.span)?;
        if let (Some(&i), Some(&s)) = (r.rank_inhibit.first(), r.rank_stimulate.first()) {
            println!(
                "{}: true {} predicted {}; top inhibit circuit {} ({:+.4}), top stimulate circuit {} ({:+.4})",
                q.id,
                label,
                r.predicted_class,
                r.entries[i].root,
                r.entries[i].gain_inhibit,
                r.entries[s].root,
                r.entries[s].gain_stimulate
            );
        }
        result.reports.push(r);
    }
    let report = RunReport::new(
        "audit",
        run_config(
            &a.common,
            None,
            None,
            Some(&a.queries),
            cfg,
            0,
            "true-class logit",
        ),
        result,
    );
    let rp = a.common.out.join("reports").join("audit.json");
    report.write(&rp)?;
    announce(&rp);
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let pack = load_dataset(&a.queries.queries)?;
    let needs_index = matches!(a.format, ExportFormat::Sankey | ExportFormat::Masks);
    let index_file = index_path(&a.common, a.index.as_ref());
    let index = if needs_index {
        Some(load_index(&index_file, &model)?)
    } else {
        None
    };
    let dataset = match (a.format, &a.dataset) {
        (ExportFormat::Masks, Some(p)) => Some(load_dataset(p)?),
        (ExportFormat::Masks, None) => {
            return Err(
                UsageError("--format masks needs --dataset (the indexed dataset)".into()).into(),
            )
        }
        _ => None,
    };
    let root = a.common.out.join("export");
    for (qid, _) in select_queries(&pack, &a.queries)? {
        let circuits = load_circuits(&a.common.out, &qid)?;
        if circuits.is_empty() {
            println!("{qid}: no circuits, nothing to export");
            continue;
        }
        let merged = merge_circuits(&circuits)?;
        let dir = root.join(&qid);
        match a.format {
            ExportFormat::Dot => {
                let p = dir.join("circuit.dot");
                write_text(&p, &to_dot(&merged))?;
                announce(&p);
            }
            ExportFormat::Sankey => {
                let doc = to_sankey(&merged, index.as_ref().expect("index loaded"), a.exemplars)?;
                let p = dir.join("sankey.json");
                write_text(&p, &doc.to_json()?)?;
                announce(&p);
                let p = dir.join("sankey.html");
                write_text(&p, &doc.to_html()?)?;
                announce(&p);
            }
            ExportFormat::Masks => {
                let index = index.as_ref().expect("index loaded");
                let data = dataset.as_ref().expect("dataset loaded");
                if data.len() != index.sample_count() {
                    bail!(
                        "dataset has {} samples but the index covers {}",
                        data.len(),
                        index.sample_count()
                    );
                }
                let hw = (model.input_shape()[1], model.input_shape()[2]);
                let cfg = RegionConfig {
                    blur_sigma: a
                        .blur_sigma
                        .unwrap_or_else(|| RegionConfig::scaled_for(hw).blur_sigma),
                    mask_quantile: a.mask_quantile,
                };
                let mut regions = Vec::new();
                for &n in &merged.nodes {
                    if !model.probes()[n.probe_layer].is_spatial() {
                        tracing::warn!(neuron = %n, "no spatial map; skipping masks");
                        continue;
                    }
                    for &s in index
                        .topk_ids(n, a.exemplars.max(1))?
                        .iter()
                        .take(a.exemplars)
                    {
                        let sample = s.to_string();
                        let trace = model
                            .forward(&data.sample(s as usize))?
                            .with_query_id(sample.clone());
                        let mut region = activation_region(&trace, n, hw, &cfg)?;
                        region.mask_file = mask_file_name(&qid, n, &sample);
                        let mask = region
                            .mask
                            .take()
                            .ok_or_else(|| anyhow!("region without mask"))?;
                        let p = dir.join("masks").join(&region.mask_file);
                        write_bytes(&p, &mask.to_pbm())?;
                        announce(&p);
                        regions.push(region);
                    }
                }
                let p = dir.join("regions.json");
                write_text(&p, &(serde_json::to_string_pretty(&regions)? + "\n"))?;
                announce(&p);
            }
        }
    }
    Ok(())
}

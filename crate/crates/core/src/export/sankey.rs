// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::discovery::Circuit;
use crate::error::{GccError, Result};
use crate::index::ActivationIndex;
use crate::neuron::NeuronRef;

/// Exemplars are drawn from this many top-activating samples.
pub const EXEMPLAR_POOL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: String,
    pub probe_layer: usize,
    pub channel: usize,
    pub label: String,
    pub root: bool,
    pub exemplars: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: String,
    pub target: String,
    pub value: f64,
    pub s_sf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyDoc {
    pub query_id: String,
    /// Probe layers present, ascending; one column each.
    pub columns: Vec<usize>,
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
}

pub fn to_sankey(
    circuit: &Circuit,
    index: &ActivationIndex,
    exemplars_per_node: usize,
) -> Result<SankeyDoc> {
    if circuit.nodes.is_empty() {
        return Err(GccError::Config("cannot export an empty circuit".into()));
    }
    let pool = EXEMPLAR_POOL.max(exemplars_per_node);
    let nodes = circuit
        .nodes
        .iter()
        .map(|&n| {
            let top = index.topk_ids(n, pool)?;
            Ok(SankeyNode {
                id: n.to_string(),
                probe_layer: n.probe_layer,
                channel: n.channel,
                label: n.to_string(),
                root: circuit.roots.contains(&n),
                exemplars: top.iter().take(exemplars_per_node).copied().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let links = circuit
        .edges
        .iter()
        .map(|e| SankeyLink {
            source: e.src.to_string(),
            target: e.tgt.to_string(),
            value: e.s_ns,
            s_sf: e.s_sf,
        })
        .collect();
    Ok(SankeyDoc {
        query_id: circuit.query_id.clone(),
        columns: circuit.layers().into_iter().collect(),
        nodes,
        links,
    })
}

const COL_GAP: f64 = 220.0;
const ROW_GAP: f64 = 44.0;
const NODE_W: f64 = 14.0;
const NODE_H: f64 = 28.0;
const MARGIN: f64 = 40.0;
const LINK_SCALE: f64 = 24.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl SankeyDoc {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn layout(&self) -> BTreeMap<&str, (f64, f64)> {
        let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
        let mut pos = BTreeMap::new();
        for n in &self.nodes {
            let col = self
                .columns
                .iter()
                .position(|&c| c == n.probe_layer)
                .unwrap_or(0);
            let row = rows.entry(col).or_insert(0);
            pos.insert(
                n.id.as_str(),
                (
                    MARGIN + col as f64 * COL_GAP,
                    MARGIN + *row as f64 * ROW_GAP,
                ),
            );
            *row += 1;
        }
        pos
    }

    /// Self-contained HTML page with an inline SVG rendering and the JSON
    /// document embedded for reuse.
    pub fn to_html(&self) -> Result<String> {
        let pos = self.layout();
        let tallest = self
            .columns
            .iter()
            .map(|c| self.nodes.iter().filter(|n| n.probe_layer == *c).count())
            .max()
            .unwrap_or(0);
        let width = 2.0 * MARGIN + self.columns.len().saturating_sub(1) as f64 * COL_GAP + 120.0;
        let height = 2.0 * MARGIN + tallest as f64 * ROW_GAP;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\">"
        );
        for l in &self.links {
            let (Some(&(x0, y0)), Some(&(x1, y1))) =
                (pos.get(l.source.as_str()), pos.get(l.target.as_str()))
            else {
                continue;
            };
            let (sx, sy, tx, ty) = (x0 + NODE_W, y0 + NODE_H / 2.0, x1, y1 + NODE_H / 2.0);
            let mx = (sx + tx) / 2.0;
            let _ = writeln!(
                svg,
                "  <path d=\"M{sx:.1},{sy:.1} C{mx:.1},{sy:.1} {mx:.1},{ty:.1} {tx:.1},{ty:.1}\" \
                 fill=\"none\" stroke=\"#4a7fb5\" stroke-opacity=\"0.45\" stroke-width=\"{:.2}\">\
                 <title>{} -&gt; {}: {:.4}</title></path>",
                (l.value * LINK_SCALE).max(0.5),
                escape(&l.source),
                escape(&l.target),
                l.value
            );
        }
        for n in &self.nodes {
            let (x, y) = pos[n.id.as_str()];
            let fill = if n.root { "#c0392b" } else { "#34495e" };
            let _ = writeln!(
                svg,
                "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{NODE_W}\" height=\"{NODE_H}\" fill=\"{fill}\">\
                 <title>{} exemplars {:?}</title></rect>\n  <text x=\"{:.1}\" y=\"{:.1}\" \
                 font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                escape(&n.label),
                n.exemplars,
                x + NODE_W + 4.0,
                y + NODE_H / 2.0 + 4.0,
                escape(&n.label)
            );
        }
        svg.push_str("</svg>\n");

        let data = serde_json::to_string(self)?.replace("</", "<\\/");
        Ok(format!(
            "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>circuit {}</title>\n</head>\n\
             <body>\n<h1>circuit {}</h1>\n{svg}<script type=\"application/json\" id=\"sankey-data\">{data}</script>\n\
             </body>\n</html>\n",
            escape(&self.query_id),
            escape(&self.query_id)
        ))
    }

    pub fn node(&self, n: NeuronRef) -> Option<&SankeyNode> {
        self.nodes
            .iter()
            .find(|x| x.probe_layer == n.probe_layer && x.channel == n.channel)
    }
}

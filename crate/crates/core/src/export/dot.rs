// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write;

use crate::discovery::Circuit;

/// Pen width per unit of `s_ns`.
pub const PEN_SCALE: f64 = 10.0;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Directed-graph text, one node statement per neuron and one edge
/// statement per circuit edge. Nodes of one probe layer share a rank.
pub fn to_dot(circuit: &Circuit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(&circuit.query_id));
    if circuit.nodes.is_empty() {
        out.push_str("}\n");
        return out;
    }
    out.push_str("  rankdir=LR;\n");
    for layer in circuit.layers() {
        let _ = write!(out, "  {{ rank=same;");
        for n in circuit.nodes.iter().filter(|n| n.probe_layer == layer) {
            let shape = if circuit.roots.contains(n) {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = write!(out, " {} [shape={shape}];", quote(&n.to_string()));
        }
        out.push_str(" }\n");
    }
    for e in &circuit.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [penwidth={:.4}, label=\"{:.4}\", sf={:.4}];",
            quote(&e.src.to_string()),
            quote(&e.tgt.to_string()),
            PEN_SCALE * e.s_ns,
            e.s_ns,
            e.s_sf
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::CircuitEdge;
    use crate::neuron::NeuronRef;

    #[test]
    fn one_edge_one_statement() {
        let mut c = Circuit::single("q", NeuronRef::new(0, 1));
        c.nodes.insert(NeuronRef::new(1, 2));
        c.edges.push(CircuitEdge {
            src: NeuronRef::new(0, 1),
            tgt: NeuronRef::new(1, 2),
            s_ns: 0.5,
            s_sf: 0.25,
        });
        let dot = to_dot(&c);
        assert_eq!(dot.matches("->").count(), 1);
        assert!(dot.contains("penwidth=5.0000"));
    }

    #[test]
    fn empty_circuit_has_empty_body() {
        let mut c = Circuit::single("q", NeuronRef::new(0, 0));
        c.nodes.clear();
        assert_eq!(to_dot(&c), "digraph \"q\" {\n}\n");
    }
}

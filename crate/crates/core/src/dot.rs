//! Graphviz DOT rendering of graphs and flow networks.

use std::fmt::Write;

use crate::graphs::{BipartiteGraph, FlowNetwork, UnipartiteGraph, FLOW_EPSILON};
use crate::linalg::Label;

/// Pen width of a unit flow.
const PEN_SCALE: f64 = 6.0;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Node ids are namespaced so a trial and a treatment may share a name.
fn node_id(label: &Label) -> String {
    match label {
        Label::Trial { name } => quote(&format!("trial:{name}")),
        Label::Treatment { name } => quote(&format!("treatment:{name}")),
        other => quote(&other.to_string()),
    }
}

fn node_name(label: &Label) -> String {
    match label {
        Label::Trial { name } | Label::Treatment { name } => name.clone(),
        other => other.to_string(),
    }
}

/// Four significant digits without exponent notation for typical flows.
pub fn four_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn bipartite_dot(graph: &BipartiteGraph) -> String {
    let mut out = String::from("graph bipartite {\n");
    out.push_str("  { rank=same;");
    for t in graph.trial_labels() {
        let _ = write!(out, " {} [label={}, shape=box];", node_id(&t), quote(&node_name(&t)));
    }
    out.push_str(" }\n  { rank=same;");
    for t in graph.treatment_labels() {
        let _ = write!(
            out,
            " {} [label={}, shape=ellipse];",
            node_id(&t),
            quote(&node_name(&t))
        );
    }
    out.push_str(" }\n");
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "  {} -- {} [weight={}];",
            node_id(&Label::trial(&graph.trials[e.trial])),
            node_id(&Label::treatment(&graph.treatments[e.treatment])),
            four_significant(e.weight)
        );
    }
    out.push_str("}\n");
    out
}

pub fn unipartite_dot(graph: &UnipartiteGraph) -> String {
    let mut out = String::from("graph unipartite {\n");
    for t in graph.node_labels() {
        let _ = writeln!(out, "  {} [label={}];", node_id(&t), quote(&node_name(&t)));
    }
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "  {} -- {} [label={}];",
            node_id(&Label::treatment(&graph.treatments[e.from])),
            node_id(&Label::treatment(&graph.treatments[e.to])),
            quote(&four_significant(e.weight))
        );
    }
    out.push_str("}\n");
    out
}

/// Directed edges in the direction of flow; source and sink are filled.
pub fn flow_dot(net: &FlowNetwork) -> String {
    let mut out = String::from("digraph flow {\n");
    let source = Label::treatment(&net.source);
    let sink = Label::treatment(&net.sink);
    let _ = writeln!(
        out,
        "  {} [label={}, style=filled, fillcolor=\"#9ecae1\"];",
        node_id(&source),
        quote(&net.source)
    );
    if net.sink != net.source {
        let _ = writeln!(
            out,
            "  {} [label={}, style=filled, fillcolor=\"#fdae6b\"];",
            node_id(&sink),
            quote(&net.sink)
        );
    }
    let mut seen = vec![source, sink];
    for f in &net.flows {
        for n in [&f.from, &f.to] {
            if !seen.contains(n) {
                let shape = if matches!(n, Label::Trial { .. }) {
                    "box"
                } else {
                    "ellipse"
                };
                let _ = writeln!(out, "  {} [label={}, shape={shape}];", node_id(n), quote(&node_name(n)));
                seen.push(n.clone());
            }
        }
    }
    for f in &net.flows {
        let m = if f.magnitude < FLOW_EPSILON { 0.0 } else { f.magnitude };
        let _ = writeln!(
            out,
            "  {} -> {} [label={}, penwidth={}];",
            node_id(&f.from),
            node_id(&f.to),
            quote(&four_significant(m)),
            four_significant(PEN_SCALE * m)
        );
    }
    out.push_str("}\n");
    out
}

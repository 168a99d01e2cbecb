//! Reaching definitions and the data dependence graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::cfg::{Cfg, Node};
use crate::pseudocode::DecompiledFunction;

/// `to` reads `var`, and the definition of `var` at `from` may reach it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DataEdge {
    pub from: usize,
    pub to: usize,
    pub var: String,
}

type Defs = BTreeSet<(usize, String)>;

/// Flow-sensitive reaching definitions over `cfg`.
///
/// Whole-variable writes kill earlier definitions; partial writes through
/// pointers, indices or fields only add one.
pub fn reaching_definitions(function: &DecompiledFunction, cfg: &Cfg) -> BTreeMap<Node, Defs> {
    let mut preds: BTreeMap<Node, Vec<Node>> = BTreeMap::new();
    for (a, b) in cfg.edges() {
        preds.entry(b).or_default().push(a);
    }
    let transfer = |n: Node, input: &Defs| -> Defs {
        let Some(line) = n.stmt().and_then(|i| function.line(i)) else {
            return input.clone();
        };
        let mut out: Defs = input
            .iter()
            .filter(|(_, v)| !line.facts.kills.contains(v))
            .cloned()
            .collect();
        out.extend(line.facts.defs.iter().map(|v| (line.index, v.clone())));
        out
    };
    let mut ins: BTreeMap<Node, Defs> = cfg.nodes().map(|n| (n, Defs::new())).collect();
    let mut outs: BTreeMap<Node, Defs> = cfg.nodes().map(|n| (n, Defs::new())).collect();
    let mut queue: VecDeque<Node> = cfg.nodes().collect();
    let mut queued: BTreeSet<Node> = queue.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        queued.remove(&n);
        let input: Defs = preds
            .get(&n)
            .into_iter()
            .flatten()
            .flat_map(|p| outs[p].iter().cloned())
            .collect();
        let out = transfer(n, &input);
        ins.insert(n, input);
        if out != outs[&n] {
            outs.insert(n, out);
            for s in cfg.successors(n) {
                if queued.insert(s) {
                    queue.push_back(s);
                }
            }
        }
    }
    ins
}

pub fn build_ddg(function: &DecompiledFunction, cfg: &Cfg) -> BTreeSet<DataEdge> {
    let reach = reaching_definitions(function, cfg);
    let mut edges = BTreeSet::new();
    for line in &function.lines {
        let Some(input) = reach.get(&Node::Stmt(line.index)) else {
            continue;
        };
        for (def, var) in input {
            if line.facts.uses.contains(var) {
                edges.insert(DataEdge {
                    from: *def,
                    to: line.index,
                    var: var.clone(),
                });
            }
        }
    }
    edges
}

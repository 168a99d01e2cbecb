//! Program dependence analysis: CFG, control and data dependence, and the
//! per-variable backward trace used to scope redundancy checks.

mod cfg;
mod dataflow;
mod postdom;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::pseudocode::DecompiledFunction;

pub use cfg::{build_cfg, Cfg, CfgWarning, Node};
pub use dataflow::{build_ddg, reaching_definitions, DataEdge};
pub use postdom::{build_cdg, compute_post_dominators, PostDominators};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependenceGraph {
    pub cdg_edges: BTreeSet<(usize, usize)>,
    pub ddg_edges: BTreeSet<DataEdge>,
    /// Union of control and data edges, unlabelled.
    pub pdg_edges: BTreeSet<(usize, usize)>,
    preds: BTreeMap<usize, BTreeSet<usize>>,
}

impl DependenceGraph {
    pub fn new(cdg_edges: BTreeSet<(usize, usize)>, ddg_edges: BTreeSet<DataEdge>) -> Self {
        let mut pdg_edges = cdg_edges.clone();
        pdg_edges.extend(ddg_edges.iter().map(|e| (e.from, e.to)));
        let mut preds: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for &(a, b) in &pdg_edges {
            preds.entry(b).or_default().insert(a);
        }
        Self {
            cdg_edges,
            ddg_edges,
            pdg_edges,
            preds,
        }
    }

    /// Statements that `stmt` depends on, ascending.
    pub fn predecessors(&self, stmt: usize) -> impl Iterator<Item = usize> + '_ {
        self.preds.get(&stmt).into_iter().flatten().copied()
    }

    pub fn to_dot(&self, function: &DecompiledFunction) -> String {
        let mut out = String::from("digraph pdg {\n  node [shape=box, fontname=monospace];\n");
        for line in &function.lines {
            let n = Node::Stmt(line.index);
            out.push_str(&format!("  {} [label=\"{}\"];\n", cfg::dot_id(n), cfg::dot_label(n, function)));
        }
        for (a, b) in &self.cdg_edges {
            out.push_str(&format!("  n{a} -> n{b} [style=dashed];\n"));
        }
        for e in &self.ddg_edges {
            out.push_str(&format!("  n{} -> n{} [label=\"{}\"];\n", e.from, e.to, e.var));
        }
        out.push_str("}\n");
        out
    }
}

/// Everything derived from one function's control flow.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub cfg: Cfg,
    pub post_dominators: PostDominators,
    pub graph: DependenceGraph,
}

pub fn analyze(function: &DecompiledFunction) -> Analysis {
    let cfg = build_cfg(function);
    let post_dominators = compute_post_dominators(&cfg);
    let cdg = build_cdg(&cfg, &post_dominators);
    let ddg = build_ddg(function, &cfg);
    Analysis {
        cfg,
        post_dominators,
        graph: DependenceGraph::new(cdg, ddg),
    }
}

/// Statements reached by walking dependence edges backwards from every
/// statement mentioning `var`, re-seeding with each variable found on a
/// collected statement. Returned in first-visit order.
pub fn trace_variable(graph: &DependenceGraph, function: &DecompiledFunction, var: &str) -> Vec<usize> {
    let mentions = mention_index(function);
    let mut tracer = Tracer {
        graph,
        function,
        mentions: &mentions,
        visited: BTreeSet::new(),
        order: Vec::new(),
    };
    tracer.trace(var);
    tracer.order
}

fn mention_index(function: &DecompiledFunction) -> BTreeMap<&str, Vec<usize>> {
    let mut idx: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for line in &function.lines {
        for v in &line.facts.mentions {
            idx.entry(v.as_str()).or_default().push(line.index);
        }
    }
    idx
}

struct Tracer<'a> {
    graph: &'a DependenceGraph,
    function: &'a DecompiledFunction,
    mentions: &'a BTreeMap<&'a str, Vec<usize>>,
    visited: BTreeSet<usize>,
    order: Vec<usize>,
}

impl Tracer<'_> {
    fn trace(&mut self, var: &str) {
        let Some(sites) = self.mentions.get(var) else {
            return;
        };
        for &s in sites {
            let preds: Vec<usize> = self.graph.predecessors(s).collect();
            for p in preds {
                if !self.visited.insert(p) {
                    continue;
                }
                self.order.push(p);
                let vars: Vec<String> = self
                    .function
                    .line(p)
                    .map(|l| l.facts.mentions.iter().cloned().collect())
                    .unwrap_or_default();
                for v in vars {
                    self.trace(&v);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DependentStatement {
    pub index: usize,
    pub text: String,
}

/// Variable → dependent statements in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DependencyMap {
    pub entries: BTreeMap<String, Vec<DependentStatement>>,
}

impl DependencyMap {
    pub fn get(&self, var: &str) -> Option<&[DependentStatement]> {
        self.entries.get(var).map(Vec::as_slice)
    }

    pub fn indices(&self, var: &str) -> BTreeSet<usize> {
        self.get(var)
            .into_iter()
            .flatten()
            .map(|s| s.index)
            .collect()
    }

    /// Statement texts for `var` with duplicate texts dropped.
    pub fn texts(&self, var: &str) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.get(var)
            .into_iter()
            .flatten()
            .map(|s| s.text.trim())
            .filter(|t| seen.insert(*t))
            .collect()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn dependency_map(function: &DecompiledFunction, graph: &DependenceGraph) -> DependencyMap {
    let mut entries = BTreeMap::new();
    for var in &function.variables {
        let mut idx = trace_variable(graph, function, var);
        idx.sort_unstable();
        let stmts = idx
            .into_iter()
            .filter_map(|i| function.line(i))
            .map(|l| DependentStatement {
                index: l.index,
                text: l.text.clone(),
            })
            .collect();
        entries.insert(var.clone(), stmts);
    }
    DependencyMap { entries }
}

/// Full analysis followed by the trace for every variable.
pub fn variable_dependency_analysis(function: &DecompiledFunction) -> DependencyMap {
    dependency_map(function, &analyze(function).graph)
}

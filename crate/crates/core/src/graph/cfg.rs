//! Control-flow graph over physical lines.
//!
//! Lines are first grouped into a statement tree (blocks, `if`/`else`,
//! loops, `do`/`while`, `switch`) using brace matching with a
//! single-statement fallback for brace-less bodies. Edges are then emitted
//! back to front so every statement knows its continuation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::pseudocode::{DecompiledFunction, Token};

/// CFG node: a 1-based statement line or one of the two virtual nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Node {
    Entry,
    Stmt(usize),
    Exit,
}

impl Node {
    pub fn stmt(self) -> Option<usize> {
        match self {
            Node::Stmt(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum CfgWarning {
    /// A `{` without a matching `}`; the rest of the function became its block.
    UnbalancedBraces { line: usize },
    /// A `}` with no open block.
    StrayClose { line: usize },
    /// `goto` to a label not present in the function; treated as fall-through.
    UnresolvedGoto { line: usize, label: String },
    /// `break`/`continue` outside any loop or switch; treated as fall-through.
    StrayJump { line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    len: usize,
    succ: BTreeMap<Node, BTreeSet<Node>>,
    pub warnings: Vec<CfgWarning>,
}

impl Cfg {
    fn empty(len: usize) -> Self {
        let mut succ = BTreeMap::new();
        succ.insert(Node::Entry, BTreeSet::new());
        succ.insert(Node::Exit, BTreeSet::new());
        for i in 1..=len {
            succ.insert(Node::Stmt(i), BTreeSet::new());
        }
        Self {
            len,
            succ,
            warnings: Vec::new(),
        }
    }

    /// Builds a CFG directly from an edge list over `len` statements.
    ///
    /// Entry/Exit fix-ups are applied so the graph satisfies the usual
    /// invariants (every statement reachable from Entry, Exit reachable from
    /// every node).
    pub fn from_edges(len: usize, edges: impl IntoIterator<Item = (Node, Node)>) -> Self {
        let mut cfg = Self::empty(len);
        for (a, b) in edges {
            cfg.add_edge(a, b);
        }
        cfg.normalize();
        cfg
    }

    pub fn statement_count(&self) -> usize {
        self.len
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.succ.keys().copied()
    }

    pub fn successors(&self, n: Node) -> impl Iterator<Item = Node> + '_ {
        self.succ.get(&n).into_iter().flatten().copied()
    }

    pub fn predecessors(&self, n: Node) -> Vec<Node> {
        self.succ
            .iter()
            .filter(|(_, s)| s.contains(&n))
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn edges(&self) -> BTreeSet<(Node, Node)> {
        self.succ
            .iter()
            .flat_map(|(a, s)| s.iter().map(move |b| (*a, *b)))
            .collect()
    }

    pub fn has_edge(&self, a: Node, b: Node) -> bool {
        self.succ.get(&a).is_some_and(|s| s.contains(&b))
    }

    fn add_edge(&mut self, a: Node, b: Node) {
        if a == Node::Exit || b == Node::Entry {
            return;
        }
        self.succ.entry(a).or_default().insert(b);
    }

    fn reachable_from_entry(&self) -> BTreeSet<Node> {
        let mut seen = BTreeSet::from([Node::Entry]);
        let mut queue = VecDeque::from([Node::Entry]);
        while let Some(n) = queue.pop_front() {
            for s in self.successors(n) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        seen
    }

    fn reaching_exit(&self) -> BTreeSet<Node> {
        let mut preds: BTreeMap<Node, Vec<Node>> = BTreeMap::new();
        for (a, b) in self.edges() {
            preds.entry(b).or_default().push(a);
        }
        let mut seen = BTreeSet::from([Node::Exit]);
        let mut queue = VecDeque::from([Node::Exit]);
        while let Some(n) = queue.pop_front() {
            for &p in preds.get(&n).into_iter().flatten() {
                if seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
        seen
    }

    /// Dead statements get an Entry edge; nodes that cannot reach Exit get
    /// a synthetic Exit edge.
    fn normalize(&mut self) {
        loop {
            let reach = self.reachable_from_entry();
            match (1..=self.len).map(Node::Stmt).find(|n| !reach.contains(n)) {
                Some(n) => self.add_edge(Node::Entry, n),
                None => break,
            }
        }
        loop {
            let reach = self.reaching_exit();
            let stuck = self
                .succ
                .keys()
                .rev()
                .copied()
                .find(|n| !reach.contains(n));
            match stuck {
                Some(n) => self.add_edge(n, Node::Exit),
                None => break,
            }
        }
    }

    /// Graphviz rendering, statement nodes labelled with their text.
    pub fn to_dot(&self, function: &DecompiledFunction) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box, fontname=monospace];\n");
        for n in self.nodes() {
            out.push_str(&format!("  {} [label=\"{}\"];\n", dot_id(n), dot_label(n, function)));
        }
        for (a, b) in self.edges() {
            out.push_str(&format!("  {} -> {};\n", dot_id(a), dot_id(b)));
        }
        out.push_str("}\n");
        out
    }
}

pub(crate) fn dot_id(n: Node) -> String {
    match n {
        Node::Entry => "entry".into(),
        Node::Exit => "exit".into(),
        Node::Stmt(i) => format!("n{i}"),
    }
}

pub(crate) fn dot_label(n: Node, function: &DecompiledFunction) -> String {
    match n {
        Node::Entry => "ENTRY".into(),
        Node::Exit => "EXIT".into(),
        Node::Stmt(i) => {
            let text = function.line(i).map(|l| l.text.trim()).unwrap_or("");
            format!("{i}: {}", text.replace('\\', "\\\\").replace('"', "\\\""))
        }
    }
}

// ---------------------------------------------------------------------------
// Statement tree

#[derive(Debug)]
enum Body {
    /// `{ ... }` opened on the header line. `shared` marks a closing line that
    /// also carries the next clause (`} else {`, `} while (x);`).
    Braced {
        inner: Vec<Stmt>,
        close: Option<usize>,
        shared: bool,
    },
    Stmt(Box<Stmt>),
    /// Body on the header line itself, e.g. `if ( x ) return 0;`.
    Inline,
    Missing,
}

#[derive(Debug)]
enum Stmt {
    Simple(usize),
    Block {
        open: usize,
        inner: Vec<Stmt>,
        close: Option<usize>,
    },
    If {
        head: usize,
        then: Body,
        otherwise: Option<Box<Stmt>>,
    },
    Else {
        head: usize,
        body: Body,
    },
    Loop {
        head: usize,
        body: Body,
    },
    DoWhile {
        head: usize,
        body: Body,
        tail: Option<usize>,
    },
    Switch {
        head: usize,
        body: Body,
    },
}

struct Lines<'a> {
    toks: Vec<&'a [Token]>,
    /// For each line, the closing line of the first `{` on it that closes later.
    open_close: Vec<Option<Option<usize>>>,
    labels: BTreeMap<String, usize>,
    warnings: Vec<CfgWarning>,
}

impl<'a> Lines<'a> {
    fn new(function: &'a DecompiledFunction) -> Self {
        let n = function.len();
        let toks: Vec<&[Token]> = function.lines.iter().map(|l| l.tokens()).collect();
        let mut open_close: Vec<Option<Option<usize>>> = vec![None; n + 1];
        let mut warnings = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        let mut closes: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, t) in toks.iter().enumerate() {
            let line = i + 1;
            for tok in t.iter() {
                if tok.is_punct("{") {
                    stack.push(line);
                } else if tok.is_punct("}") {
                    match stack.pop() {
                        Some(open) => closes.entry(open).or_default().push((open, line)),
                        None => warnings.push(CfgWarning::StrayClose { line }),
                    }
                }
            }
        }
        // Matches were recorded innermost first; the outermost `{` on a line
        // is the first one opened, which closes last.
        for (open, pairs) in &closes {
            if let Some(&(_, close)) = pairs.iter().filter(|(_, c)| c > open).max_by_key(|(_, c)| *c) {
                open_close[*open] = Some(Some(close));
            }
        }
        for open in stack {
            if open_close[open].is_none() {
                warnings.push(CfgWarning::UnbalancedBraces { line: open });
                open_close[open] = Some(None);
            }
        }
        let mut labels = BTreeMap::new();
        for (i, t) in toks.iter().enumerate() {
            if let (Some(Token::Ident(name)), Some(colon)) = (t.first(), t.get(1)) {
                let is_label = colon.is_punct(":")
                    && name != "case"
                    && name != "default"
                    && !t.get(2).is_some_and(|x| x.is_punct(":"));
                if is_label {
                    labels.entry(name.clone()).or_insert(i + 1);
                }
            }
        }
        Self {
            toks,
            open_close,
            labels,
            warnings,
        }
    }

    fn tokens(&self, line: usize) -> &[Token] {
        self.toks[line - 1]
    }

    /// Index of the first token after leading `}`s.
    fn lead_pos(&self, line: usize) -> usize {
        self.tokens(line)
            .iter()
            .position(|t| !t.is_punct("}"))
            .unwrap_or(usize::MAX)
    }

    fn word_at(&self, line: usize, pos: usize) -> Option<&str> {
        self.tokens(line).get(pos).and_then(Token::ident)
    }

    fn lead(&self, line: usize) -> Option<&str> {
        self.word_at(line, self.lead_pos(line))
    }

    fn contains_word(&self, line: usize, word: &str) -> bool {
        self.tokens(line).iter().any(|t| t.ident() == Some(word))
    }

    /// Token index right after the parenthesized condition following `kw`.
    fn after_condition(&self, line: usize, kw: usize) -> Option<usize> {
        let t = self.tokens(line);
        let open = (kw + 1..t.len()).find(|&i| t[i].is_punct("("))?;
        let mut depth = 0;
        for (i, tok) in t.iter().enumerate().skip(open) {
            if tok.is_punct("(") {
                depth += 1;
            } else if tok.is_punct(")") {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
        }
        None
    }

    /// Whether tokens at or after `from` carry a statement on this line.
    fn has_inline_body(&self, line: usize, from: Option<usize>) -> bool {
        match from {
            Some(p) => p < self.tokens(line).len(),
            // unterminated condition: treat the line as self-contained
            None => true,
        }
    }
}

struct Parser<'a> {
    l: Lines<'a>,
}

impl Parser<'_> {
    fn seq(&mut self, lo: usize, hi: usize) -> Vec<Stmt> {
        let mut out = Vec::new();
        let mut i = lo;
        while i <= hi {
            let (s, end) = self.stmt(i, hi);
            out.push(s);
            i = end + 1;
        }
        out
    }

    /// Parses the statement starting at `i`; returns it with its last line.
    fn stmt(&mut self, i: usize, hi: usize) -> (Stmt, usize) {
        let lead_pos = self.l.lead_pos(i);
        let lead = self.l.lead(i).map(str::to_string);
        match lead.as_deref() {
            Some("if") => self.if_stmt(i, lead_pos, hi),
            Some("else") => {
                if self.l.word_at(i, lead_pos + 1) == Some("if") {
                    return self.if_stmt(i, lead_pos + 1, hi);
                }
                let (body, end) = self.body(i, Some(lead_pos + 1), hi);
                (Stmt::Else { head: i, body }, end)
            }
            Some("while") | Some("for") => {
                let after = self.l.after_condition(i, lead_pos);
                let (body, end) = self.body(i, after, hi);
                (Stmt::Loop { head: i, body }, end)
            }
            Some("switch") => {
                let after = self.l.after_condition(i, lead_pos);
                let (body, end) = self.body(i, after, hi);
                (Stmt::Switch { head: i, body }, end)
            }
            Some("do") => self.do_stmt(i, lead_pos, hi),
            _ => match self.l.open_close[i] {
                Some(close) => {
                    let stop = close.unwrap_or(hi + 1).min(hi + 1);
                    let inner = self.seq(i + 1, stop - 1);
                    let close = close.filter(|&c| c <= hi);
                    (
                        Stmt::Block {
                            open: i,
                            inner,
                            close,
                        },
                        close.unwrap_or(hi),
                    )
                }
                None => (Stmt::Simple(i), i),
            },
        }
    }

    fn if_stmt(&mut self, i: usize, kw: usize, hi: usize) -> (Stmt, usize) {
        let after = self.l.after_condition(i, kw);
        let (then, mut end) = self.body(i, after, hi);
        let mut otherwise = None;
        // `} else ...` on the closing line of the then-block
        let shared_else = match &then {
            Body::Braced {
                close: Some(c),
                ..
            } => self.l.lead(*c) == Some("else"),
            _ => false,
        };
        let then = match then {
            Body::Braced {
                inner,
                close,
                shared: _,
            } if shared_else => {
                let c = close.expect("checked above");
                let (s, e) = self.stmt(c, hi);
                otherwise = Some(Box::new(s));
                end = e;
                Body::Braced {
                    inner,
                    close,
                    shared: true,
                }
            }
            other => {
                if end < hi && self.l.lead(end + 1) == Some("else") && self.l.lead_pos(end + 1) == 0 {
                    let (s, e) = self.stmt(end + 1, hi);
                    otherwise = Some(Box::new(s));
                    end = e;
                }
                other
            }
        };
        (
            Stmt::If {
                head: i,
                then,
                otherwise,
            },
            end,
        )
    }

    fn do_stmt(&mut self, i: usize, kw: usize, hi: usize) -> (Stmt, usize) {
        let (body, end) = self.body(i, Some(kw + 1), hi);
        match body {
            Body::Braced {
                inner,
                close: Some(c),
                ..
            } if self.l.lead(c) == Some("while") => (
                Stmt::DoWhile {
                    head: i,
                    body: Body::Braced {
                        inner,
                        close: Some(c),
                        shared: true,
                    },
                    tail: Some(c),
                },
                end,
            ),
            Body::Inline => (
                Stmt::DoWhile {
                    head: i,
                    body: Body::Inline,
                    tail: None,
                },
                end,
            ),
            body => {
                let tail = (end < hi && self.l.lead(end + 1) == Some("while")).then_some(end + 1);
                (
                    Stmt::DoWhile {
                        head: i,
                        body,
                        tail,
                    },
                    tail.unwrap_or(end),
                )
            }
        }
    }

    /// Body of a header at line `h`; `after` is the token index where an
    /// inline body would start.
    fn body(&mut self, h: usize, after: Option<usize>, hi: usize) -> (Body, usize) {
        if let Some(close) = self.l.open_close[h] {
            let stop = close.unwrap_or(hi + 1).min(hi + 1);
            let inner = self.seq(h + 1, stop - 1);
            let close = close.filter(|&c| c <= hi);
            return (
                Body::Braced {
                    inner,
                    close,
                    shared: false,
                },
                close.unwrap_or(hi),
            );
        }
        if self.l.has_inline_body(h, after) {
            return (Body::Inline, h);
        }
        if h >= hi {
            return (Body::Missing, h);
        }
        let (s, end) = self.stmt(h + 1, hi);
        (Body::Stmt(Box::new(s)), end)
    }
}

// ---------------------------------------------------------------------------
// Edge emission

#[derive(Clone, Copy, Default)]
struct Jumps {
    brk: Option<Node>,
    cont: Option<Node>,
}

struct Emitter<'a> {
    cfg: Cfg,
    l: &'a Lines<'a>,
    warnings: Vec<CfgWarning>,
}

impl Emitter<'_> {
    fn seq(&mut self, stmts: &[Stmt], next: Node, j: Jumps) -> Node {
        stmts
            .iter()
            .rev()
            .fold(next, |next, s| self.stmt(s, next, j))
    }

    /// Edges for a line whose control transfer is written on the line itself.
    /// Returns false when the line simply falls through.
    fn jump_edges(&mut self, line: usize, next: Node, j: Jumps) -> bool {
        let n = Node::Stmt(line);
        if self.l.contains_word(line, "return") {
            self.cfg.add_edge(n, Node::Exit);
            return true;
        }
        let toks = self.l.tokens(line);
        if let Some(p) = toks.iter().position(|t| t.ident() == Some("goto")) {
            let label = toks.get(p + 1).and_then(Token::ident).unwrap_or("").to_string();
            match self.l.labels.get(&label) {
                Some(&target) => self.cfg.add_edge(n, Node::Stmt(target)),
                None => {
                    self.warnings.push(CfgWarning::UnresolvedGoto { line, label });
                    self.cfg.add_edge(n, next);
                }
            }
            return true;
        }
        for (word, target) in [("break", j.brk), ("continue", j.cont)] {
            if self.l.contains_word(line, word) {
                match target {
                    Some(t) => self.cfg.add_edge(n, t),
                    None => {
                        self.warnings.push(CfgWarning::StrayJump { line });
                        self.cfg.add_edge(n, next);
                    }
                }
                return true;
            }
        }
        false
    }

    /// Entry node of a body, or None when the body lives on the header line.
    fn body(&mut self, body: &Body, next: Node, j: Jumps) -> Option<Node> {
        match body {
            Body::Braced {
                inner,
                close,
                shared,
            } => {
                let inner_next = match close {
                    Some(c) if !shared => {
                        let cn = Node::Stmt(*c);
                        self.cfg.add_edge(cn, next);
                        cn
                    }
                    _ => next,
                };
                Some(self.seq(inner, inner_next, j))
            }
            Body::Stmt(s) => Some(self.stmt(s, next, j)),
            Body::Inline | Body::Missing => None,
        }
    }

    fn stmt(&mut self, s: &Stmt, next: Node, j: Jumps) -> Node {
        match s {
            Stmt::Simple(line) => {
                if !self.jump_edges(*line, next, j) {
                    self.cfg.add_edge(Node::Stmt(*line), next);
                }
                Node::Stmt(*line)
            }
            Stmt::Block { open, inner, close } => {
                let inner_next = match close {
                    Some(c) => {
                        self.cfg.add_edge(Node::Stmt(*c), next);
                        Node::Stmt(*c)
                    }
                    None => next,
                };
                let entry = self.seq(inner, inner_next, j);
                let head = Node::Stmt(*open);
                if !self.jump_edges(*open, entry, j) {
                    self.cfg.add_edge(head, entry);
                }
                head
            }
            Stmt::If {
                head,
                then,
                otherwise,
            } => {
                let h = Node::Stmt(*head);
                match self.body(then, next, j) {
                    Some(entry) => self.cfg.add_edge(h, entry),
                    None => {
                        if !self.jump_edges(*head, next, j) || matches!(then, Body::Missing) {
                            self.cfg.add_edge(h, next);
                        }
                    }
                }
                let false_target = match otherwise {
                    Some(e) => self.stmt(e, next, j),
                    None => next,
                };
                self.cfg.add_edge(h, false_target);
                h
            }
            Stmt::Else { head, body } => {
                let h = Node::Stmt(*head);
                match self.body(body, next, j) {
                    Some(entry) => self.cfg.add_edge(h, entry),
                    None => {
                        if !self.jump_edges(*head, next, j) {
                            self.cfg.add_edge(h, next);
                        }
                    }
                }
                h
            }
            Stmt::Loop { head, body } => {
                let h = Node::Stmt(*head);
                let inner = Jumps {
                    brk: Some(next),
                    cont: Some(h),
                };
                match self.body(body, h, inner) {
                    Some(entry) => self.cfg.add_edge(h, entry),
                    None => self.cfg.add_edge(h, h),
                }
                self.cfg.add_edge(h, next);
                h
            }
            Stmt::DoWhile { head, body, tail } => {
                let h = Node::Stmt(*head);
                let latch = tail.map(Node::Stmt).unwrap_or(h);
                if let Some(t) = tail {
                    let tn = Node::Stmt(*t);
                    self.cfg.add_edge(tn, h);
                    self.cfg.add_edge(tn, next);
                }
                let inner = Jumps {
                    brk: Some(next),
                    cont: Some(latch),
                };
                match self.body(body, latch, inner) {
                    Some(entry) => self.cfg.add_edge(h, entry),
                    None => self.cfg.add_edge(h, h),
                }
                if tail.is_none() {
                    self.cfg.add_edge(h, next);
                }
                h
            }
            Stmt::Switch { head, body } => {
                let h = Node::Stmt(*head);
                let inner = Jumps {
                    brk: Some(next),
                    cont: j.cont,
                };
                let entry = self.body(body, next, inner);
                let stmts: &[Stmt] = match body {
                    Body::Braced { inner, .. } => inner,
                    Body::Stmt(b) => match b.as_ref() {
                        Stmt::Block { inner, .. } => inner,
                        _ => &[],
                    },
                    _ => &[],
                };
                let top_level: Vec<usize> = match stmts {
                    [] => Vec::new(),
                    inner => inner
                        .iter()
                        .filter_map(|s| match s {
                            Stmt::Simple(l) => Some(*l),
                            _ => None,
                        })
                        .filter(|&l| matches!(self.l.lead(l), Some("case") | Some("default")))
                        .collect(),
                };
                if top_level.is_empty() {
                    self.cfg.add_edge(h, entry.unwrap_or(next));
                } else {
                    for l in &top_level {
                        self.cfg.add_edge(h, Node::Stmt(*l));
                    }
                }
                let has_default = top_level.iter().any(|&l| self.l.lead(l) == Some("default"));
                if !has_default {
                    self.cfg.add_edge(h, next);
                }
                h
            }
        }
    }
}

/// Builds the control-flow graph of a parsed function.
pub fn build_cfg(function: &DecompiledFunction) -> Cfg {
    let n = function.len();
    let lines = Lines::new(function);
    let mut parser = Parser { l: lines };
    let tree = if n == 0 { Vec::new() } else { parser.seq(1, n) };
    let lines = parser.l;
    let mut em = Emitter {
        cfg: Cfg::empty(n),
        l: &lines,
        warnings: Vec::new(),
    };
    let first = em.seq(&tree, Node::Exit, Jumps::default());
    em.cfg.add_edge(Node::Entry, first);
    let mut cfg = em.cfg;
    cfg.warnings = lines.warnings.clone();
    cfg.warnings.extend(em.warnings);
    for w in &cfg.warnings {
        log::debug!("cfg: {w:?}");
    }
    cfg.normalize();
    cfg
}

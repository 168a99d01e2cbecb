//! Post-dominator sets and control dependence.

use std::collections::{BTreeMap, BTreeSet};

use super::cfg::{Cfg, Node};

/// Dense node numbering: Entry = 0, statements 1..=n, Exit = n + 1.
fn slot(n: Node, len: usize) -> usize {
    match n {
        Node::Entry => 0,
        Node::Stmt(i) => i,
        Node::Exit => len + 1,
    }
}

fn node_of(i: usize, len: usize) -> Node {
    match i {
        0 => Node::Entry,
        i if i == len + 1 => Node::Exit,
        i => Node::Stmt(i),
    }
}

#[derive(Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn full(n: usize) -> Self {
        let mut v = vec![u64::MAX; n.div_ceil(64)];
        if !n.is_multiple_of(64) {
            if let Some(last) = v.last_mut() {
                *last = (1u64 << (n % 64)) - 1;
            }
        }
        Bits(v)
    }

    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    #[cfg(test)]
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    fn and_assign(&mut self, o: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a &= b;
        }
    }

    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            (0..64).filter(move |b| word & (1 << b) != 0).map(move |b| w * 64 + b)
        })
    }
}

/// Post-dominator sets, each including the node itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostDominators {
    sets: BTreeMap<Node, BTreeSet<Node>>,
}

impl PostDominators {
    pub fn of(&self, n: Node) -> &BTreeSet<Node> {
        &self.sets[&n]
    }

    pub fn dominates(&self, a: Node, b: Node) -> bool {
        self.sets.get(&b).is_some_and(|s| s.contains(&a))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Node, &BTreeSet<Node>)> {
        self.sets.iter()
    }
}

/// Iterative fixed point: pdom(Exit) = {Exit},
/// pdom(n) = {n} ∪ ⋂ pdom(s) over successors s.
pub fn compute_post_dominators(cfg: &Cfg) -> PostDominators {
    let len = cfg.statement_count();
    let total = len + 2;
    let succ: Vec<Vec<usize>> = (0..total)
        .map(|i| {
            cfg.successors(node_of(i, len))
                .map(|s| slot(s, len))
                .collect()
        })
        .collect();
    let exit = len + 1;
    let mut pdom: Vec<Bits> = (0..total).map(|_| Bits::full(total)).collect();
    pdom[exit] = Bits::empty(total);
    pdom[exit].set(exit);
    let mut changed = true;
    while changed {
        changed = false;
        // reverse order converges faster on mostly-forward graphs
        for n in (0..total).rev() {
            if n == exit {
                continue;
            }
            let mut next = if succ[n].is_empty() {
                Bits::empty(total)
            } else {
                let mut acc = Bits::full(total);
                for &s in &succ[n] {
                    acc.and_assign(&pdom[s]);
                }
                acc
            };
            next.set(n);
            if next != pdom[n] {
                pdom[n] = next;
                changed = true;
            }
        }
    }
    let sets = pdom
        .iter()
        .enumerate()
        .map(|(i, b)| (node_of(i, len), b.ones().map(|j| node_of(j, len)).collect()))
        .collect();
    PostDominators { sets }
}

/// Control dependence edges `(controller, dependent)` between statements.
///
/// For each CFG edge u→w, every v post-dominating w but not strictly
/// post-dominating u is control dependent on u.
pub fn build_cdg(cfg: &Cfg, pdom: &PostDominators) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (u, w) in cfg.edges() {
        let Some(ui) = u.stmt() else { continue };
        let pu = pdom.of(u);
        for &v in pdom.of(w) {
            if v == u || !pu.contains(&v) {
                if let Some(vi) = v.stmt() {
                    out.insert((ui, vi));
                }
            }
        }
    }
    out
}

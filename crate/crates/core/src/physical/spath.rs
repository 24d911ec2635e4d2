//! PATH evaluation over a forest of expiry-annotated spanning trees.
//!
//! One tree per source vertex `x`; a node `(v, s)` in tree `x` means a
//! path from `x` to `v` whose label word drives the automaton to `s`.
//! Each node stores the widest expiry over all such paths (the largest
//! minimum edge expiry) and the parent realising it. Since a child's
//! expiry never exceeds its parent's, parent chains cannot form cycles.
//!
//! Insertions expand and refresh trees through a worklist. Deletions cut
//! the subtrees hanging off the deleted tree edge and re-attach what they
//! can with a widest-path Dijkstra over the remaining edges.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rustc_hash::{FxHashMap, FxHashSet};

use super::{Delta, Operator};
use crate::automaton::{Dfa, StateId};
use crate::model::{EdgeTriple, Interval, Label, Payload, Sgt, Timestamp, VertexId, NEVER};

pub type NodeKey = (VertexId, StateId);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PayloadMode {
    /// One triple per path edge, labelled with the edge's own label.
    #[default]
    Derived,
    /// Concatenate the payloads of the path edges.
    Expanded,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExpiryMode {
    /// Expired state is ignored on access and purged at slide boundaries.
    #[default]
    Direct,
    /// Nothing expires on its own; each input edge is deleted explicitly
    /// when time reaches its expiry.
    NegativeTuples,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PathConfig {
    pub payload: PayloadMode,
    pub expiry: ExpiryMode,
}

/// The input edge a node hangs from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Via {
    pub label: Label,
    pub interval: Interval,
    pub payload: Payload,
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub parent: Option<NodeKey>,
    pub via: Option<Via>,
    pub ts: Timestamp,
    pub exp: Timestamp,
    pub children: Vec<NodeKey>,
}

#[derive(Clone, Debug)]
pub struct SpanningTree {
    pub root: VertexId,
    pub nodes: FxHashMap<NodeKey, TreeNode>,
}

impl SpanningTree {
    pub fn node(&self, v: VertexId, s: StateId) -> Option<&TreeNode> {
        self.nodes.get(&(v, s))
    }
}

#[derive(Clone, Debug, Default)]
pub struct DeltaPathIndex {
    pub trees: FxHashMap<VertexId, SpanningTree>,
    pub inverted: FxHashMap<NodeKey, FxHashSet<VertexId>>,
}

#[derive(Clone, Debug)]
struct AdjEdge {
    other: VertexId,
    label: Label,
    interval: Interval,
    payload: Payload,
}

impl AdjEdge {
    fn via(&self) -> Via {
        Via { label: self.label, interval: self.interval, payload: self.payload.clone() }
    }
}

#[derive(Default)]
struct Adjacency {
    out: FxHashMap<VertexId, Vec<AdjEdge>>,
    inc: FxHashMap<VertexId, Vec<AdjEdge>>,
}

impl Adjacency {
    fn insert(&mut self, t: &Sgt) {
        let fwd = AdjEdge { other: t.trg, label: t.label, interval: t.interval, payload: t.payload.clone() };
        let bwd = AdjEdge { other: t.src, ..fwd.clone() };
        self.out.entry(t.src).or_default().push(fwd);
        self.inc.entry(t.trg).or_default().push(bwd);
    }

    fn remove(&mut self, src: VertexId, trg: VertexId, label: Label, interval: Interval) -> bool {
        let take = |m: &mut FxHashMap<VertexId, Vec<AdjEdge>>, at: VertexId, other: VertexId| -> bool {
            let Some(v) = m.get_mut(&at) else { return false };
            let Some(i) = v.iter().position(|e| e.other == other && e.label == label && e.interval == interval) else {
                return false;
            };
            v.swap_remove(i);
            if v.is_empty() {
                m.remove(&at);
            }
            true
        };
        let found = take(&mut self.out, src, trg);
        if found {
            take(&mut self.inc, trg, src);
        }
        found
    }

    fn len(&self) -> usize {
        self.out.values().map(Vec::len).sum()
    }
}

struct Item {
    root: VertexId,
    parent: NodeKey,
    child: NodeKey,
    edge: Via,
}

pub struct SpathOp {
    dfa: Dfa,
    label: Label,
    cfg: PathConfig,
    index: DeltaPathIndex,
    adj: Adjacency,
    node_expiry: BTreeMap<Timestamp, Vec<(VertexId, NodeKey)>>,
    edge_expiry: BTreeMap<Timestamp, Vec<(VertexId, VertexId, Label, Interval)>>,
    now: Timestamp,
    inputs: usize,
}

impl SpathOp {
    pub fn new(dfa: Dfa, label: Label, inputs: usize, cfg: PathConfig) -> Self {
        SpathOp {
            dfa,
            label,
            cfg,
            index: DeltaPathIndex::default(),
            adj: Adjacency::default(),
            node_expiry: BTreeMap::new(),
            edge_expiry: BTreeMap::new(),
            now: 0,
            inputs,
        }
    }

    pub fn dfa(&self) -> &Dfa {
        &self.dfa
    }

    pub fn index(&self) -> &DeltaPathIndex {
        &self.index
    }

    pub fn tree(&self, root: VertexId) -> Option<&SpanningTree> {
        self.index.trees.get(&root)
    }

    /// Number of stored input edges.
    pub fn adjacency_len(&self) -> usize {
        self.adj.len()
    }

    fn direct(&self) -> bool {
        self.cfg.expiry == ExpiryMode::Direct
    }

    fn alive(&self, exp: Timestamp) -> bool {
        !self.direct() || exp > self.now
    }

    /// Nodes of tree `root` whose (vertex, state) is live at the current
    /// instant, as (vertex, state, ts, exp, parent).
    pub fn live_nodes(&self, root: VertexId) -> Vec<(VertexId, StateId, Timestamp, Timestamp, Option<NodeKey>)> {
        let Some(tree) = self.index.trees.get(&root) else { return Vec::new() };
        let mut v: Vec<_> = tree
            .nodes
            .iter()
            .filter(|(_, n)| n.parent.is_some() && self.alive(n.exp))
            .map(|(k, n)| (k.0, k.1, n.ts, n.exp, n.parent))
            .collect();
        v.sort_by(|a, b| a.0.cmp_by_name(b.0).then(a.1.cmp(&b.1)));
        v
    }

    /// Trees holding a live `(v, s)` node; expired ones are dropped on the
    /// way.
    pub fn expandable_trees(&mut self, pair: NodeKey) -> Vec<VertexId> {
        let roots: Vec<VertexId> = match self.index.inverted.get(&pair) {
            Some(rs) => rs.iter().copied().collect(),
            None => return Vec::new(),
        };
        let mut out = Vec::with_capacity(roots.len());
        for r in roots {
            let exp = self.index.trees[&r].nodes[&pair].exp;
            if self.alive(exp) {
                out.push(r);
            } else {
                self.remove_subtree(r, pair, &mut |_, _, _| {});
            }
        }
        out.sort();
        out
    }

    fn ensure_tree(&mut self, x: VertexId) {
        let s0 = self.dfa.start();
        if self.index.trees.contains_key(&x) {
            return;
        }
        let mut nodes = FxHashMap::default();
        nodes.insert((x, s0), TreeNode { parent: None, via: None, ts: 0, exp: NEVER, children: Vec::new() });
        self.index.trees.insert(x, SpanningTree { root: x, nodes });
        self.index.inverted.entry((x, s0)).or_default().insert(x);
    }

    fn drop_tree_if_bare(&mut self, x: VertexId) {
        if self.index.trees.get(&x).is_some_and(|t| t.nodes.len() == 1) {
            self.index.trees.remove(&x);
            let key = (x, self.dfa.start());
            if let Some(set) = self.index.inverted.get_mut(&key) {
                set.remove(&x);
                if set.is_empty() {
                    self.index.inverted.remove(&key);
                }
            }
        }
    }

    /// Remove `key` and everything below it from tree `root`, calling `f`
    /// with each removed node before it goes.
    fn remove_subtree(&mut self, root: VertexId, key: NodeKey, f: &mut impl FnMut(&SpanningTree, NodeKey, &TreeNode)) {
        let Some(tree) = self.index.trees.get_mut(&root) else { return };
        let Some(node) = tree.nodes.get(&key) else { return };
        if let Some(p) = node.parent {
            if let Some(pn) = tree.nodes.get_mut(&p) {
                pn.children.retain(|c| *c != key);
            }
        }
        let mut stack = vec![key];
        while let Some(k) = stack.pop() {
            let Some(n) = tree.nodes.get(&k) else { continue };
            f(tree, k, n);
            let n = tree.nodes.remove(&k).unwrap();
            stack.extend(n.children.iter().copied());
            if let Some(set) = self.index.inverted.get_mut(&k) {
                set.remove(&root);
                if set.is_empty() {
                    self.index.inverted.remove(&k);
                }
            }
        }
    }

    fn path_payload(&self, tree: &SpanningTree, key: NodeKey) -> Payload {
        let mut rev: Vec<EdgeTriple> = Vec::new();
        let mut cur = key;
        while let Some(n) = tree.nodes.get(&cur) {
            let (Some(p), Some(via)) = (n.parent, n.via.as_ref()) else { break };
            match self.cfg.payload {
                PayloadMode::Derived => rev.push(EdgeTriple { src: p.0, label: via.label, trg: cur.0 }),
                PayloadMode::Expanded => rev.extend(via.payload.edges().iter().rev().copied()),
            }
            cur = p;
        }
        rev.reverse();
        Payload::new(rev).expect("tree paths chain")
    }

    fn result(&self, root: VertexId, key: NodeKey, interval: Interval) -> Sgt {
        let tree = &self.index.trees[&root];
        Sgt::new(root, key.0, self.label, interval, self.path_payload(tree, key)).expect("path endpoints")
    }

    fn schedule_node(&mut self, root: VertexId, key: NodeKey, exp: Timestamp) {
        if self.direct() && exp != NEVER {
            self.node_expiry.entry(exp).or_default().push((root, key));
        }
    }

    fn insert_edge(&mut self, t: &Sgt, out: &mut Vec<Delta>) {
        let mut work = Vec::new();
        let s0 = self.dfa.start();
        let via = Via { label: t.label, interval: t.interval, payload: t.payload.clone() };
        let transitions = self.dfa.transitions_on(t.label).to_vec();
        for (s, q) in transitions {
            let roots = if s == s0 {
                self.ensure_tree(t.src);
                vec![t.src]
            } else {
                self.expandable_trees((t.src, s))
            };
            for root in roots {
                work.push(Item { root, parent: (t.src, s), child: (t.trg, q), edge: via.clone() });
            }
        }
        // Last pushed runs first; reverse so trees are visited in order.
        work.reverse();
        self.run(work, out);
        if self.dfa.transitions_on(t.label).iter().any(|(s, _)| *s == s0) {
            self.drop_tree_if_bare(t.src);
        }
    }

    fn run(&mut self, mut work: Vec<Item>, out: &mut Vec<Delta>) {
        while let Some(item) = work.pop() {
            if !self.alive(item.edge.interval.exp) {
                continue;
            }
            let Some(tree) = self.index.trees.get(&item.root) else { continue };
            let Some(parent) = tree.nodes.get(&item.parent) else { continue };
            if !self.alive(parent.exp) {
                continue;
            }
            let exp = parent.exp.min(item.edge.interval.exp);
            let ts = parent.ts.max(item.edge.interval.ts);
            let existing = tree.nodes.get(&item.child).map(|n| (n.ts, n.exp, n.parent));
            let accepting = self.dfa.is_accepting(item.child.1);
            match existing {
                Some((_, old_exp, _)) if self.alive(old_exp) && old_exp >= exp => continue,
                Some((old_ts, old_exp, old_parent)) if self.alive(old_exp) => {
                    let tree = self.index.trees.get_mut(&item.root).unwrap();
                    if old_parent != Some(item.parent) {
                        if let Some(op) = old_parent.and_then(|p| tree.nodes.get_mut(&p)) {
                            op.children.retain(|c| *c != item.child);
                        }
                        tree.nodes.get_mut(&item.parent).unwrap().children.push(item.child);
                    }
                    let node = tree.nodes.get_mut(&item.child).unwrap();
                    node.parent = Some(item.parent);
                    node.via = Some(item.edge);
                    node.exp = exp;
                    node.ts = old_ts.min(ts);
                    let new_ts = node.ts;
                    self.schedule_node(item.root, item.child, exp);
                    if accepting {
                        let old = self.result(item.root, item.child, Interval { ts: old_ts, exp: old_exp });
                        let new = self.result(item.root, item.child, Interval { ts: new_ts, exp });
                        // The old payload is not needed downstream; matching is
                        // by interval.
                        out.push(Delta::Extend { old, new });
                    }
                }
                stale => {
                    if stale.is_some() {
                        self.remove_subtree(item.root, item.child, &mut |_, _, _| {});
                    }
                    let tree = self.index.trees.get_mut(&item.root).unwrap();
                    tree.nodes.insert(
                        item.child,
                        TreeNode { parent: Some(item.parent), via: Some(item.edge), ts, exp, children: Vec::new() },
                    );
                    tree.nodes.get_mut(&item.parent).unwrap().children.push(item.child);
                    self.index.inverted.entry(item.child).or_default().insert(item.root);
                    self.schedule_node(item.root, item.child, exp);
                    if accepting {
                        out.push(Delta::Insert(self.result(item.root, item.child, Interval { ts, exp })));
                    }
                }
            }
            let (v, s) = item.child;
            if let Some(edges) = self.adj.out.get(&v) {
                let mut next = Vec::new();
                for e in edges {
                    if !self.alive(e.interval.exp) {
                        continue;
                    }
                    if let Some(q) = self.dfa.delta(s, e.label) {
                        next.push(Item { root: item.root, parent: item.child, child: (e.other, q), edge: e.via() });
                    }
                }
                next.reverse();
                work.extend(next);
            }
        }
    }

    fn delete_edge(&mut self, t: &Sgt, out: &mut Vec<Delta>) {
        if !self.adj.remove(t.src, t.trg, t.label, t.interval) {
            log::warn!("path: deleting an edge that is not stored: {t:?}");
            return;
        }
        let transitions: Vec<(StateId, StateId)> = self.dfa.transitions_on(t.label).to_vec();
        for (s, q) in transitions {
            let child = (t.trg, q);
            let parent = (t.src, s);
            let mut roots: Vec<VertexId> = match self.index.inverted.get(&child) {
                Some(rs) => rs.iter().copied().collect(),
                None => continue,
            };
            roots.sort();
            for root in roots {
                let tree = &self.index.trees[&root];
                let n = &tree.nodes[&child];
                let uses = n.parent == Some(parent)
                    && n.via.as_ref().is_some_and(|v| v.label == t.label && v.interval == t.interval);
                if uses {
                    self.repair(root, child, out);
                }
            }
        }
    }

    /// Cut the subtree under `cut` and re-attach its nodes along the widest
    /// remaining paths.
    fn repair(&mut self, root: VertexId, cut: NodeKey, out: &mut Vec<Delta>) {
        let mut marked: Vec<NodeKey> = Vec::new();
        let mut old: FxHashMap<NodeKey, Option<Sgt>> = FxHashMap::default();
        {
            let tree = &self.index.trees[&root];
            let mut stack = vec![cut];
            while let Some(k) = stack.pop() {
                let n = &tree.nodes[&k];
                let result = (self.dfa.is_accepting(k.1) && self.alive(n.exp))
                    .then(|| self.result(root, k, Interval { ts: n.ts, exp: n.exp }));
                old.insert(k, result);
                marked.push(k);
                let mut cs = n.children.clone();
                cs.reverse();
                stack.extend(cs);
            }
        }
        self.remove_subtree(root, cut, &mut |_, _, _| {});

        let mut heap = BinaryHeap::new();
        {
            let tree = &self.index.trees[&root];
            for &(b, q) in &marked {
                let Some(inc) = self.adj.inc.get(&b) else { continue };
                for e in inc {
                    if !self.alive(e.interval.exp) {
                        continue;
                    }
                    for &r in self.dfa.predecessors(q, e.label) {
                        let p = (e.other, r);
                        if let Some(pn) = tree.nodes.get(&p) {
                            if self.alive(pn.exp) {
                                heap.push(Candidate {
                                    exp: pn.exp.min(e.interval.exp),
                                    ts: pn.ts.max(e.interval.ts),
                                    parent: p,
                                    child: (b, q),
                                    via: e.via(),
                                });
                            }
                        }
                    }
                }
            }
        }
        let marked_set: FxHashSet<NodeKey> = marked.iter().copied().collect();
        let mut settled: FxHashSet<NodeKey> = FxHashSet::default();
        while let Some(c) = heap.pop() {
            if settled.contains(&c.child) {
                continue;
            }
            if !self.alive(c.exp) {
                break;
            }
            settled.insert(c.child);
            let tree = self.index.trees.get_mut(&root).unwrap();
            tree.nodes.insert(
                c.child,
                TreeNode { parent: Some(c.parent), via: Some(c.via), ts: c.ts, exp: c.exp, children: Vec::new() },
            );
            tree.nodes.get_mut(&c.parent).unwrap().children.push(c.child);
            self.index.inverted.entry(c.child).or_default().insert(root);
            self.schedule_node(root, c.child, c.exp);
            let (v, s) = c.child;
            if let Some(edges) = self.adj.out.get(&v) {
                for e in edges {
                    if !self.alive(e.interval.exp) {
                        continue;
                    }
                    let Some(q) = self.dfa.delta(s, e.label) else { continue };
                    let w = (e.other, q);
                    if marked_set.contains(&w) && !settled.contains(&w) {
                        heap.push(Candidate {
                            exp: c.exp.min(e.interval.exp),
                            ts: c.ts.max(e.interval.ts),
                            parent: c.child,
                            child: w,
                            via: e.via(),
                        });
                    }
                }
            }
        }

        for k in &marked {
            let new = settled.contains(k).then(|| {
                let n = &self.index.trees[&root].nodes[k];
                (n.ts, n.exp)
            });
            let accepting = self.dfa.is_accepting(k.1);
            let new_result = new
                .filter(|_| accepting)
                .map(|(ts, exp)| self.result(root, *k, Interval { ts, exp }));
            match (&old[k], new_result) {
                (Some(a), Some(b)) if a.interval == b.interval && a.payload == b.payload => {}
                (Some(a), b) => {
                    out.push(Delta::Delete(a.clone()));
                    out.extend(b.map(Delta::Insert));
                }
                (None, Some(b)) => out.push(Delta::Insert(b)),
                (None, None) => {}
            }
        }
        self.drop_tree_if_bare(root);
    }

    fn extend_edge(&mut self, old: &Sgt, new: &Sgt, out: &mut Vec<Delta>) {
        if !self.adj.remove(old.src, old.trg, old.label, old.interval) {
            self.adj.insert(new);
            self.schedule_edge(new);
            self.insert_edge(new, out);
            return;
        }
        self.adj.insert(new);
        self.schedule_edge(new);
        // Nodes hanging from the old edge now hang from the new one.
        let via = Via { label: new.label, interval: new.interval, payload: new.payload.clone() };
        for &(s, q) in self.dfa.transitions_on(new.label) {
            let Some(roots) = self.index.inverted.get(&(new.trg, q)) else { continue };
            for root in roots.iter().copied().collect::<Vec<_>>() {
                let tree = self.index.trees.get_mut(&root).unwrap();
                let n = tree.nodes.get_mut(&(new.trg, q)).unwrap();
                let uses = n.parent == Some((new.src, s))
                    && n.via.as_ref().is_some_and(|v| v.label == old.label && v.interval == old.interval);
                if uses {
                    n.via = Some(via.clone());
                }
            }
        }
        self.insert_edge(new, out);
    }

    fn schedule_edge(&mut self, t: &Sgt) {
        self.edge_expiry.entry(t.interval.exp).or_default().push((t.src, t.trg, t.label, t.interval));
    }
}

#[derive(Debug)]
struct Candidate {
    exp: Timestamp,
    ts: Timestamp,
    parent: NodeKey,
    child: NodeKey,
    via: Via,
}

impl Candidate {
    fn rank(&self, other: &Self) -> Ordering {
        // Larger expiry first, then smaller ts, then vertex names.
        self.exp
            .cmp(&other.exp)
            .then_with(|| other.ts.cmp(&self.ts))
            .then_with(|| other.parent.0.cmp_by_name(self.parent.0))
            .then_with(|| other.parent.1.cmp(&self.parent.1))
            .then_with(|| other.child.0.cmp_by_name(self.child.0))
            .then_with(|| other.child.1.cmp(&self.child.1))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

impl Operator for SpathOp {
    fn name(&self) -> &'static str {
        "path"
    }

    fn arity(&self) -> usize {
        self.inputs
    }

    fn process(&mut self, _port: usize, delta: Delta, now: Timestamp, out: &mut Vec<Delta>) {
        self.now = self.now.max(now);
        let label = match &delta {
            Delta::Insert(t) | Delta::Delete(t) | Delta::Extend { new: t, .. } => t.label,
        };
        if !self.dfa.in_alphabet(label) {
            return;
        }
        match delta {
            Delta::Insert(t) => {
                if !self.alive(t.interval.exp) {
                    return;
                }
                self.adj.insert(&t);
                self.schedule_edge(&t);
                self.insert_edge(&t, out);
            }
            Delta::Delete(t) => self.delete_edge(&t, out),
            Delta::Extend { old, new } => self.extend_edge(&old, &new, out),
        }
    }

    fn on_time(&mut self, now: Timestamp, out: &mut Vec<Delta>) {
        self.now = self.now.max(now);
        if self.cfg.expiry != ExpiryMode::NegativeTuples {
            return;
        }
        while let Some(entry) = self.edge_expiry.first_entry() {
            if *entry.key() > now {
                break;
            }
            for (src, trg, label, interval) in entry.remove() {
                let present = self
                    .adj
                    .out
                    .get(&src)
                    .is_some_and(|es| es.iter().any(|e| e.other == trg && e.label == label && e.interval == interval));
                if present {
                    let t = Sgt::edge(src, trg, label, interval);
                    self.delete_edge(&t, out);
                }
            }
        }
    }

    fn purge(&mut self, watermark: Timestamp) -> usize {
        if !self.direct() {
            return 0;
        }
        self.now = self.now.max(watermark);
        let mut removed = 0;
        let mut touched = Vec::new();
        while let Some(entry) = self.node_expiry.first_entry() {
            if *entry.key() > watermark {
                break;
            }
            for (root, key) in entry.remove() {
                let expired = self
                    .index
                    .trees
                    .get(&root)
                    .and_then(|t| t.nodes.get(&key))
                    .is_some_and(|n| n.exp <= watermark);
                if expired {
                    self.remove_subtree(root, key, &mut |_, _, _| removed += 1);
                    touched.push(root);
                }
            }
        }
        for root in touched {
            self.drop_tree_if_bare(root);
        }
        while let Some(entry) = self.edge_expiry.first_entry() {
            if *entry.key() > watermark {
                break;
            }
            for (src, trg, label, interval) in entry.remove() {
                if self.adj.remove(src, trg, label, interval) {
                    removed += 1;
                }
            }
        }
        removed
    }

    fn check_state(&self, now: Timestamp) -> Result<(), String> {
        let alive = |exp: Timestamp| !self.direct() || exp > now;
        for (v, es) in &self.adj.out {
            let live: Vec<&AdjEdge> = es.iter().filter(|e| alive(e.interval.exp)).collect();
            for (i, a) in live.iter().enumerate() {
                for b in &live[i + 1..] {
                    if a.other == b.other && a.label == b.label && a.interval.intersect(&b.interval).is_some() {
                        return Err(format!("path adjacency holds overlapping {v}-{}->{} edges", a.label, a.other));
                    }
                }
            }
        }
        for (root, tree) in &self.index.trees {
            for (k, n) in &tree.nodes {
                if !self.index.inverted.get(k).is_some_and(|s| s.contains(root)) {
                    return Err(format!("inverted index misses {k:?} of tree {root}"));
                }
                if let Some(p) = n.parent {
                    let Some(pn) = tree.nodes.get(&p) else {
                        return Err(format!("dangling parent of {k:?} in tree {root}"));
                    };
                    if pn.exp < n.exp {
                        return Err(format!("node {k:?} outlives its parent in tree {root}"));
                    }
                    if !pn.children.contains(k) {
                        return Err(format!("parent of {k:?} does not list it in tree {root}"));
                    }
                } else if *k != (*root, self.dfa.start()) {
                    return Err(format!("parentless non-root {k:?} in tree {root}"));
                }
            }
        }
        for (k, roots) in &self.index.inverted {
            for r in roots {
                if !self.index.trees.get(r).is_some_and(|t| t.nodes.contains_key(k)) {
                    return Err(format!("inverted index lists {k:?} in missing tree {r}"));
                }
            }
        }
        Ok(())
    }
}

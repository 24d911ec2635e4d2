//! PATTERN as a left-deep tree of symmetric hash joins in input order.

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use super::{Delta, Operator};
use crate::algebra::{End, JoinCondition, Pos};
use crate::model::{Interval, Label, Sgt, Timestamp, VertexId};

type Key = SmallVec<[VertexId; 2]>;

/// Join node `k` combines the bindings of inputs `0..k` (left) with input
/// `k` (right).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinNode {
    pub left_key: Vec<Pos>,
    pub right_key: Vec<End>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinTree {
    pub inputs: usize,
    /// Equalities between the two ends of one input, checked on arrival.
    pub leaf_filters: Vec<Vec<(End, End)>>,
    /// `nodes[k - 1]` joins input `k`.
    pub nodes: Vec<JoinNode>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("join condition references input {0} of {1}")]
pub struct UnknownPosition(pub usize, pub usize);

pub fn build_join_tree(inputs: usize, condition: &JoinCondition) -> Result<JoinTree, UnknownPosition> {
    if inputs == 0 || condition.max_atom() >= inputs {
        return Err(UnknownPosition(condition.max_atom(), inputs));
    }
    let mut tree = JoinTree {
        inputs,
        leaf_filters: vec![Vec::new(); inputs],
        nodes: vec![JoinNode { left_key: Vec::new(), right_key: Vec::new() }; inputs - 1],
    };
    for &(a, b) in &condition.equalities {
        let (lo, hi) = if (a.atom, a.end) <= (b.atom, b.end) { (a, b) } else { (b, a) };
        if lo.atom == hi.atom {
            tree.leaf_filters[lo.atom].push((lo.end, hi.end));
        } else {
            let node = &mut tree.nodes[hi.atom - 1];
            node.left_key.push(lo);
            node.right_key.push(hi.end);
        }
    }
    Ok(tree)
}

fn end_of(t: &Sgt, e: End) -> VertexId {
    match e {
        End::Src => t.src,
        End::Trg => t.trg,
    }
}

#[derive(Clone, Debug)]
struct Binding {
    parts: Vec<Sgt>,
    interval: Interval,
}

impl Binding {
    fn same(&self, other: &Binding) -> bool {
        self.parts.len() == other.parts.len() && self.parts.iter().zip(&other.parts).all(|(a, b)| a.same_fact(b))
    }

    fn extend(&self, r: &Sgt) -> Option<Binding> {
        let interval = self.interval.intersect(&r.interval)?;
        let mut parts = self.parts.clone();
        parts.push(r.clone());
        Some(Binding { parts, interval })
    }
}

enum BDelta {
    Insert(Binding),
    Delete(Binding),
    Extend(Binding, Binding),
}

#[derive(Default)]
struct Tables {
    left: FxHashMap<Key, Vec<Binding>>,
    right: FxHashMap<Key, Vec<Sgt>>,
}

pub struct PatternOp {
    tree: JoinTree,
    tables: Vec<Tables>,
    output: (Pos, Pos),
    label: Label,
}

impl PatternOp {
    pub fn new(inputs: usize, condition: &JoinCondition, label: Label) -> Result<Self, UnknownPosition> {
        let tree = build_join_tree(inputs, condition)?;
        let tables = (0..inputs.saturating_sub(1)).map(|_| Tables::default()).collect();
        Ok(PatternOp { tree, tables, output: condition.output, label })
    }

    pub fn tree(&self) -> &JoinTree {
        &self.tree
    }

    fn left_key(&self, k: usize, b: &Binding) -> Key {
        self.tree.nodes[k - 1].left_key.iter().map(|p| end_of(&b.parts[p.atom], p.end)).collect()
    }

    fn right_key(&self, k: usize, t: &Sgt) -> Key {
        self.tree.nodes[k - 1].right_key.iter().map(|e| end_of(t, *e)).collect()
    }

    fn emit(&self, d: BDelta, out: &mut Vec<Delta>) {
        let make = |b: &Binding| {
            let src = end_of(&b.parts[self.output.0.atom], self.output.0.end);
            let trg = end_of(&b.parts[self.output.1.atom], self.output.1.end);
            Sgt::edge(src, trg, self.label, b.interval)
        };
        out.push(match d {
            BDelta::Insert(b) => Delta::Insert(make(&b)),
            BDelta::Delete(b) => Delta::Delete(make(&b)),
            BDelta::Extend(o, n) => Delta::Extend { old: make(&o), new: make(&n) },
        });
    }

    /// Feed a binding of inputs `0..k` into node `k`.
    fn push_left(&mut self, k: usize, d: BDelta, now: Timestamp, out: &mut Vec<Delta>) {
        if k == self.tree.inputs {
            self.emit(d, out);
            return;
        }
        let key = match &d {
            BDelta::Insert(b) | BDelta::Delete(b) | BDelta::Extend(_, b) => self.left_key(k, b),
        };
        let table = &mut self.tables[k - 1];
        let bucket = table.left.entry(key.clone()).or_default();
        let d = match d {
            BDelta::Insert(b) => {
                bucket.push(b.clone());
                BDelta::Insert(b)
            }
            BDelta::Delete(b) => match bucket.iter().position(|x| x.same(&b)) {
                Some(i) => {
                    bucket.swap_remove(i);
                    BDelta::Delete(b)
                }
                None => return,
            },
            BDelta::Extend(o, n) => match bucket.iter().position(|x| x.same(&o)) {
                Some(i) => {
                    bucket[i] = n.clone();
                    BDelta::Extend(o, n)
                }
                None => {
                    bucket.push(n.clone());
                    BDelta::Insert(n)
                }
            },
        };
        if bucket.is_empty() {
            table.left.remove(&key);
        }
        let mut produced = Vec::new();
        if let Some(rs) = table.right.get_mut(&key) {
            rs.retain(|r| r.interval.exp > now);
            for r in rs.iter() {
                combine(&d, |b| b.extend(r), &mut produced);
            }
        }
        for p in produced {
            self.push_left(k + 1, p, now, out);
        }
    }

    /// Feed a tuple of input `k >= 1` into node `k`.
    fn push_right(&mut self, k: usize, d: Delta, now: Timestamp, out: &mut Vec<Delta>) {
        let key = match &d {
            Delta::Insert(t) | Delta::Delete(t) | Delta::Extend { new: t, .. } => self.right_key(k, t),
        };
        let table = &mut self.tables[k - 1];
        let bucket = table.right.entry(key.clone()).or_default();
        let d = match d {
            Delta::Insert(t) => {
                bucket.push(t.clone());
                Delta::Insert(t)
            }
            Delta::Delete(t) => match bucket.iter().position(|x| x.same_fact(&t)) {
                Some(i) => {
                    bucket.swap_remove(i);
                    Delta::Delete(t)
                }
                None => {
                    log::warn!("pattern: deleting a tuple that is not stored: {t:?}");
                    return;
                }
            },
            Delta::Extend { old, new } => match bucket.iter().position(|x| x.same_fact(&old)) {
                Some(i) => {
                    bucket[i] = new.clone();
                    Delta::Extend { old, new }
                }
                None => {
                    bucket.push(new.clone());
                    Delta::Insert(new)
                }
            },
        };
        if bucket.is_empty() {
            table.right.remove(&key);
        }
        let mut produced = Vec::new();
        if let Some(ls) = table.left.get_mut(&key) {
            ls.retain(|b| b.interval.exp > now);
            for b in ls.iter() {
                match &d {
                    Delta::Insert(t) => combine(&BDelta::Insert(b.clone()), |b| b.extend(t), &mut produced),
                    Delta::Delete(t) => combine(&BDelta::Delete(b.clone()), |b| b.extend(t), &mut produced),
                    Delta::Extend { old, new } => {
                        match (b.extend(old), b.extend(new)) {
                            (Some(o), Some(n)) => produced.push(BDelta::Extend(o, n)),
                            (None, Some(n)) => produced.push(BDelta::Insert(n)),
                            _ => {}
                        }
                    }
                }
            }
        }
        for p in produced {
            self.push_left(k + 1, p, now, out);
        }
    }

    fn passes_leaf(&self, port: usize, t: &Sgt) -> bool {
        self.tree.leaf_filters[port].iter().all(|(a, b)| end_of(t, *a) == end_of(t, *b))
    }

    /// Stored entries, live at `now`: (left bindings, right tuples).
    pub fn state_size(&self, now: Timestamp) -> (usize, usize) {
        let mut l = 0;
        let mut r = 0;
        for t in &self.tables {
            l += t.left.values().flatten().filter(|b| b.interval.exp > now).count();
            r += t.right.values().flatten().filter(|x| x.interval.exp > now).count();
        }
        (l, r)
    }
}

/// Apply `ext` to each binding carried by `d`, keeping the delta kind.
fn combine(d: &BDelta, ext: impl Fn(&Binding) -> Option<Binding>, out: &mut Vec<BDelta>) {
    match d {
        BDelta::Insert(b) => out.extend(ext(b).map(BDelta::Insert)),
        BDelta::Delete(b) => out.extend(ext(b).map(BDelta::Delete)),
        BDelta::Extend(o, n) => match (ext(o), ext(n)) {
            (Some(o), Some(n)) => out.push(BDelta::Extend(o, n)),
            (None, Some(n)) => out.push(BDelta::Insert(n)),
            _ => {}
        },
    }
}

impl Operator for PatternOp {
    fn name(&self) -> &'static str {
        "pattern"
    }

    fn arity(&self) -> usize {
        self.tree.inputs
    }

    fn process(&mut self, port: usize, delta: Delta, now: Timestamp, out: &mut Vec<Delta>) {
        let t = match &delta {
            Delta::Insert(t) | Delta::Delete(t) | Delta::Extend { new: t, .. } => t,
        };
        if !self.passes_leaf(port, t) {
            return;
        }
        if port == 0 {
            let single = |t: Sgt| Binding { interval: t.interval, parts: vec![t] };
            let d = match delta {
                Delta::Insert(t) => BDelta::Insert(single(t)),
                Delta::Delete(t) => BDelta::Delete(single(t)),
                Delta::Extend { old, new } => BDelta::Extend(single(old), single(new)),
            };
            self.push_left(1, d, now, out);
        } else {
            self.push_right(port, delta, now, out);
        }
    }

    fn purge(&mut self, watermark: Timestamp) -> usize {
        let mut removed = 0;
        for t in &mut self.tables {
            t.left.retain(|_, v| {
                let n = v.len();
                v.retain(|b| b.interval.exp > watermark);
                removed += n - v.len();
                !v.is_empty()
            });
            t.right.retain(|_, v| {
                let n = v.len();
                v.retain(|x| x.interval.exp > watermark);
                removed += n - v.len();
                !v.is_empty()
            });
        }
        removed
    }

    fn check_state(&self, now: Timestamp) -> Result<(), String> {
        for (k, t) in self.tables.iter().enumerate() {
            for v in t.right.values() {
                let live: Vec<&Sgt> = v.iter().filter(|x| x.interval.exp > now).collect();
                for (i, a) in live.iter().enumerate() {
                    for b in &live[i + 1..] {
                        if a.key() == b.key() && a.interval.intersect(&b.interval).is_some() {
                            return Err(format!("join node {} holds overlapping {a:?} and {b:?}", k + 1));
                        }
                    }
                }
            }
            for v in t.left.values() {
                let live: Vec<&Binding> = v.iter().filter(|x| x.interval.exp > now).collect();
                for (i, a) in live.iter().enumerate() {
                    for b in &live[i + 1..] {
                        let same_keys = a.parts.iter().zip(&b.parts).all(|(x, y)| x.key() == y.key());
                        if same_keys && a.interval.intersect(&b.interval).is_some() {
                            return Err(format!("join node {} holds overlapping bindings {:?} and {:?}", k + 1, a.parts, b.parts));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interval;

    fn e(s: &str, t: &str, l: &str, ts: u64, exp: u64) -> Sgt {
        Sgt::edge(VertexId::new(s), VertexId::new(t), Label::new(l), Interval::new(ts, exp).unwrap())
    }

    fn rl_condition() -> JoinCondition {
        JoinCondition {
            equalities: vec![(Pos::trg(0), Pos::trg(1)), (Pos::src(0), Pos::src(2)), (Pos::src(1), Pos::trg(2))],
            output: (Pos::src(0), Pos::src(1)),
        }
    }

    #[test]
    fn tree_assigns_each_equality_once() {
        let tree = build_join_tree(3, &rl_condition()).unwrap();
        assert_eq!(tree.nodes.len(), 2);
        assert_eq!(tree.nodes[0], JoinNode { left_key: vec![Pos::trg(0)], right_key: vec![End::Trg] });
        assert_eq!(
            tree.nodes[1],
            JoinNode { left_key: vec![Pos::src(0), Pos::src(1)], right_key: vec![End::Src, End::Trg] }
        );
        let two = build_join_tree(2, &JoinCondition::chain(2)).unwrap();
        assert_eq!(two.nodes.len(), 1);
        assert!(build_join_tree(1, &JoinCondition::chain(2)).is_err());
        let looped = JoinCondition { equalities: vec![(Pos::src(0), Pos::trg(0))], output: (Pos::src(0), Pos::trg(0)) };
        assert_eq!(build_join_tree(1, &looped).unwrap().leaf_filters[0], vec![(End::Src, End::Trg)]);
    }

    #[test]
    fn triangle_emits_recent_liker() {
        let mut op = PatternOp::new(3, &rl_condition(), Label::new("RL")).unwrap();
        let mut out = Vec::new();
        op.process(1, Delta::Insert(e("u", "a", "posts", 13, 37)), 13, &mut out);
        op.process(2, Delta::Insert(e("y", "u", "FP", 20, 44)), 20, &mut out);
        assert!(out.is_empty());
        op.process(0, Delta::Insert(e("y", "a", "likes", 28, 52)), 28, &mut out);
        assert_eq!(out, vec![Delta::Insert(e("y", "u", "RL", 28, 37))]);
    }

    #[test]
    fn delete_retracts_matches() {
        let mut op = PatternOp::new(2, &JoinCondition::chain(2), Label::new("d")).unwrap();
        let mut out = Vec::new();
        op.process(0, Delta::Insert(e("x", "m", "a", 1, 10)), 1, &mut out);
        op.process(1, Delta::Delete(e("m", "y", "b", 1, 10)), 1, &mut out);
        assert!(out.is_empty());
        op.process(1, Delta::Insert(e("m", "y", "b", 2, 12)), 2, &mut out);
        assert_eq!(out, vec![Delta::Insert(e("x", "y", "d", 2, 10))]);
        out.clear();
        op.process(0, Delta::Delete(e("x", "m", "a", 1, 10)), 3, &mut out);
        assert_eq!(out, vec![Delta::Delete(e("x", "y", "d", 2, 10))]);
        assert_eq!(op.state_size(3), (0, 1));
    }

    #[test]
    fn extend_and_expiry() {
        let mut op = PatternOp::new(2, &JoinCondition::chain(2), Label::new("d")).unwrap();
        let mut out = Vec::new();
        op.process(0, Delta::Insert(e("x", "m", "a", 1, 5)), 1, &mut out);
        op.process(1, Delta::Insert(e("m", "y", "b", 2, 9)), 2, &mut out);
        out.clear();
        op.process(0, Delta::Extend { old: e("x", "m", "a", 1, 5), new: e("x", "m", "a", 1, 8) }, 3, &mut out);
        assert_eq!(out, vec![Delta::Extend { old: e("x", "y", "d", 2, 5), new: e("x", "y", "d", 2, 8) }]);
        out.clear();
        // The left tuple expired at 8: probing skips and drops it.
        op.process(1, Delta::Insert(e("m", "z", "b", 8, 15)), 8, &mut out);
        assert!(out.is_empty());
        assert_eq!(op.purge(9), 1);
        op.check_state(9).unwrap();
    }
}

//! Incremental operators.
//!
//! Stages exchange [`Delta`] messages. `Extend` announces that a tuple
//! previously sent grew to a superset interval; receivers replace it in
//! place. All operators are driven in timestamp order and receive the
//! current instant with every message.

mod coalesce;
mod join;
mod spath;

pub use coalesce::Coalescer;
pub use join::{build_join_tree, JoinNode, JoinTree, PatternOp};
pub use spath::{
    DeltaPathIndex, ExpiryMode, NodeKey, PathConfig, PayloadMode, SpanningTree, SpathOp, TreeNode, Via,
};

use rustc_hash::FxHashMap;

use crate::algebra::FilterPredicate;
use crate::model::{Interval, Label, Sgt, Sign, Timestamp, TupleKey};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delta {
    Insert(Sgt),
    Delete(Sgt),
    Extend { old: Sgt, new: Sgt },
}

impl Delta {
    pub fn key(&self) -> TupleKey {
        match self {
            Delta::Insert(t) | Delta::Delete(t) | Delta::Extend { new: t, .. } => t.key(),
        }
    }

    /// Apply `f` to every tuple carried.
    pub fn map(self, mut f: impl FnMut(Sgt) -> Sgt) -> Delta {
        match self {
            Delta::Insert(t) => Delta::Insert(f(t)),
            Delta::Delete(t) => Delta::Delete(f(t)),
            Delta::Extend { old, new } => Delta::Extend { old: f(old), new: f(new) },
        }
    }

    /// Signed tuples: an extension is a retraction followed by an insertion.
    pub fn into_signed(self, out: &mut Vec<Sgt>) {
        match self {
            Delta::Insert(t) => out.push(t),
            Delta::Delete(t) => out.push(t.negated()),
            Delta::Extend { old, new } => {
                out.push(old.negated());
                out.push(new);
            }
        }
    }
}

pub trait Operator: Send + std::any::Any {
    fn name(&self) -> &'static str;

    /// Number of input ports.
    fn arity(&self) -> usize {
        1
    }

    fn process(&mut self, port: usize, delta: Delta, now: Timestamp, out: &mut Vec<Delta>);

    /// Time reached `now`; called before any message stamped `now`.
    fn on_time(&mut self, _now: Timestamp, _out: &mut Vec<Delta>) {}

    /// Drop state that expired at or before `watermark`. Returns the number
    /// of entries removed.
    fn purge(&mut self, _watermark: Timestamp) -> usize {
        0
    }

    /// Internal consistency at instant `now`, used by the invariant hook.
    fn check_state(&self, _now: Timestamp) -> Result<(), String> {
        Ok(())
    }
}

/// Leaf stage for one raw input label.
pub struct SourceOp {
    pub label: Label,
}

impl Operator for SourceOp {
    fn name(&self) -> &'static str {
        "source"
    }

    fn process(&mut self, _port: usize, delta: Delta, _now: Timestamp, out: &mut Vec<Delta>) {
        out.push(delta);
    }
}

/// Assigns validity intervals. Raw edges arrive as `[t, t+1)`.
pub struct WscanOp {
    pub size: Timestamp,
    pub slide: Timestamp,
}

impl WscanOp {
    pub fn new(size: Timestamp, slide: Timestamp) -> Self {
        assert!(slide >= 1 && size >= slide, "window needs size >= slide >= 1");
        WscanOp { size, slide }
    }

    pub fn expiry(&self, t: Timestamp) -> Timestamp {
        (t / self.slide) * self.slide + self.size
    }

    fn window(&self, t: Sgt) -> Sgt {
        let ts = t.interval.ts;
        t.with_interval(Interval { ts, exp: self.expiry(ts) })
    }
}

pub fn wscan_apply(e: &crate::model::StreamingGraphEdge, size: Timestamp, slide: Timestamp) -> Sgt {
    let w = WscanOp::new(size, slide);
    Sgt::edge(e.src, e.trg, e.label, Interval { ts: e.t, exp: w.expiry(e.t) })
}

impl Operator for WscanOp {
    fn name(&self) -> &'static str {
        "wscan"
    }

    fn process(&mut self, _port: usize, delta: Delta, _now: Timestamp, out: &mut Vec<Delta>) {
        out.push(delta.map(|t| self.window(t)));
    }
}

pub struct FilterOp {
    pub predicate: FilterPredicate,
}

pub fn filter_apply(t: &Sgt, p: &FilterPredicate) -> Option<Sgt> {
    p.eval(t).then(|| t.clone())
}

impl Operator for FilterOp {
    fn name(&self) -> &'static str {
        "filter"
    }

    fn process(&mut self, _port: usize, delta: Delta, _now: Timestamp, out: &mut Vec<Delta>) {
        let keep = match &delta {
            Delta::Insert(t) | Delta::Delete(t) | Delta::Extend { new: t, .. } => self.predicate.eval(t),
        };
        if keep {
            out.push(delta);
        }
    }
}

pub struct UnionOp {
    pub inputs: usize,
    pub label: Option<Label>,
}

pub fn union_apply(t: &Sgt, label: Option<Label>) -> Sgt {
    match label {
        Some(l) => Sgt { label: l, ..t.clone() },
        None => t.clone(),
    }
}

impl Operator for UnionOp {
    fn name(&self) -> &'static str {
        "union"
    }

    fn arity(&self) -> usize {
        self.inputs
    }

    fn process(&mut self, _port: usize, delta: Delta, _now: Timestamp, out: &mut Vec<Delta>) {
        out.push(match self.label {
            Some(l) => delta.map(|t| Sgt { label: l, ..t }),
            None => delta,
        });
    }
}

/// Tracks the net live set of a signed stream and reports overlapping
/// value-equivalent tuples.
#[derive(Default)]
pub struct LiveSet {
    live: FxHashMap<TupleKey, Vec<Interval>>,
}

impl LiveSet {
    pub fn apply(&mut self, t: &Sgt, now: Timestamp) -> Result<(), String> {
        let entry = self.live.entry(t.key()).or_default();
        entry.retain(|iv| iv.exp > now);
        match t.sign {
            Sign::Positive => {
                if let Some(other) = entry.iter().find(|iv| iv.intersect(&t.interval).is_some()) {
                    return Err(format!("{:?} overlaps live {:?} at {now}", t, other));
                }
                entry.push(t.interval);
            }
            Sign::Negative => {
                if let Some(i) = entry.iter().position(|iv| *iv == t.interval) {
                    entry.swap_remove(i);
                }
            }
        }
        Ok(())
    }

    /// Tuples valid at `t` among those still tracked.
    pub fn valid_at(&self, t: Timestamp) -> impl Iterator<Item = TupleKey> + '_ {
        self.live.iter().filter(move |(_, ivs)| ivs.iter().any(|iv| iv.contains(t))).map(|(k, _)| *k)
    }
}

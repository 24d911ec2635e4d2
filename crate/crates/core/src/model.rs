//! Tuples, intervals, payloads and the set-level primitives over them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::intern::{Label, VertexId};

pub type Timestamp = u64;

/// Expiry used for entries that never expire (spanning tree roots).
pub const NEVER: Timestamp = Timestamp::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("empty interval [{ts}, {exp})")]
    EmptyInterval { ts: Timestamp, exp: Timestamp },
    #[error("payload must contain at least one edge")]
    EmptyPayload,
    #[error("payload edges do not chain at position {0}")]
    BrokenChain(usize),
    #[error("payload endpoints do not match tuple endpoints")]
    EndpointMismatch,
    #[error("coalesce needs at least one tuple")]
    NothingToCoalesce,
    #[error("coalesce over tuples that are not value-equivalent")]
    NotValueEquivalent,
    #[error("coalesce over intervals with a gap at {0}")]
    GappedIntervals(Timestamp),
}

/// Half-open validity interval `[ts, exp)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    pub ts: Timestamp,
    pub exp: Timestamp,
}

impl Interval {
    pub fn new(ts: Timestamp, exp: Timestamp) -> Result<Self, ModelError> {
        if ts < exp {
            Ok(Interval { ts, exp })
        } else {
            Err(ModelError::EmptyInterval { ts, exp })
        }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.ts <= t && t < self.exp
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let ts = self.ts.max(other.ts);
        let exp = self.exp.min(other.exp);
        (ts < exp).then_some(Interval { ts, exp })
    }

    /// True when the union of both intervals is itself an interval.
    pub fn touches(&self, other: &Interval) -> bool {
        self.ts <= other.exp && other.ts <= self.exp
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { ts: self.ts.min(other.ts), exp: self.exp.max(other.exp) }
    }

    pub fn covers(&self, other: &Interval) -> bool {
        self.ts <= other.ts && other.exp <= self.exp
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.ts, self.exp)
    }
}

pub fn intersect_intervals(a: Interval, b: Interval) -> Option<Interval> {
    a.intersect(&b)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeTriple {
    pub src: VertexId,
    pub label: Label,
    pub trg: VertexId,
}

impl fmt::Debug for EdgeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.src, self.label, self.trg)
    }
}

/// Non-empty chained edge sequence. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Payload(Arc<[EdgeTriple]>);

impl Payload {
    pub fn new(edges: Vec<EdgeTriple>) -> Result<Self, ModelError> {
        if edges.is_empty() {
            return Err(ModelError::EmptyPayload);
        }
        if let Some(i) = edges.windows(2).position(|w| w[0].trg != w[1].src) {
            return Err(ModelError::BrokenChain(i + 1));
        }
        Ok(Payload(edges.into()))
    }

    pub fn edge(src: VertexId, label: Label, trg: VertexId) -> Self {
        Payload(Arc::new([EdgeTriple { src, label, trg }]))
    }

    pub fn edges(&self) -> &[EdgeTriple] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &EdgeTriple {
        &self.0[0]
    }

    pub fn last(&self) -> &EdgeTriple {
        &self.0[self.0.len() - 1]
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

/// Raw input edge before windowing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamingGraphEdge {
    pub src: VertexId,
    pub trg: VertexId,
    pub label: Label,
    pub t: Timestamp,
}

impl StreamingGraphEdge {
    pub fn new(src: &str, trg: &str, label: &str, t: Timestamp) -> Self {
        StreamingGraphEdge { src: VertexId::new(src), trg: VertexId::new(trg), label: Label::new(label), t }
    }
}

/// A labeled edge or materialized path together with its validity interval.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct StreamingGraphTuple {
    pub src: VertexId,
    pub trg: VertexId,
    pub label: Label,
    pub interval: Interval,
    pub payload: Payload,
    pub sign: Sign,
}

pub type Sgt = StreamingGraphTuple;

/// (src, trg, label): the attributes value-equivalence looks at.
pub type TupleKey = (VertexId, VertexId, Label);

impl StreamingGraphTuple {
    pub fn new(
        src: VertexId,
        trg: VertexId,
        label: Label,
        interval: Interval,
        payload: Payload,
    ) -> Result<Self, ModelError> {
        if payload.first().src != src || payload.last().trg != trg {
            return Err(ModelError::EndpointMismatch);
        }
        Ok(StreamingGraphTuple { src, trg, label, interval, payload, sign: Sign::Positive })
    }

    /// Single-edge tuple whose payload is the edge itself.
    pub fn edge(src: VertexId, trg: VertexId, label: Label, interval: Interval) -> Self {
        StreamingGraphTuple {
            src,
            trg,
            label,
            interval,
            payload: Payload::edge(src, label, trg),
            sign: Sign::Positive,
        }
    }

    pub fn key(&self) -> TupleKey {
        (self.src, self.trg, self.label)
    }

    pub fn ts(&self) -> Timestamp {
        self.interval.ts
    }

    pub fn exp(&self) -> Timestamp {
        self.interval.exp
    }

    pub fn negated(mut self) -> Self {
        self.sign = Sign::Negative;
        self
    }

    pub fn with_interval(&self, interval: Interval) -> Self {
        StreamingGraphTuple { interval, ..self.clone() }
    }

    /// Key and interval equality, ignoring payload and sign.
    pub fn same_fact(&self, other: &StreamingGraphTuple) -> bool {
        self.key() == other.key() && self.interval == other.interval
    }
}

impl fmt::Debug for StreamingGraphTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign == Sign::Negative { "-" } else { "" };
        write!(f, "{s}({},{},{},{:?}) {:?}", self.src, self.label, self.trg, self.interval, self.payload)
    }
}

pub fn value_equivalent(a: &Sgt, b: &Sgt) -> bool {
    a.key() == b.key()
}

/// How [`coalesce`] picks the payload of the merged tuple.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PayloadAgg {
    /// Payload of the contributor with the largest exp, then largest ts,
    /// then the earliest one given.
    #[default]
    MaxExpiry,
    /// Payload of the contributor with the smallest ts.
    Earliest,
}

impl PayloadAgg {
    /// Index of the contributor whose payload survives.
    pub fn pick<'a, I>(self, intervals: I) -> usize
    where
        I: IntoIterator<Item = &'a Interval>,
    {
        let mut best: Option<(usize, Interval)> = None;
        for (i, iv) in intervals.into_iter().enumerate() {
            let better = match (self, best) {
                (_, None) => true,
                (PayloadAgg::MaxExpiry, Some((_, b))) => (iv.exp, iv.ts) > (b.exp, b.ts),
                (PayloadAgg::Earliest, Some((_, b))) => iv.ts < b.ts,
            };
            if better {
                best = Some((i, *iv));
            }
        }
        best.map(|(i, _)| i).unwrap_or(0)
    }
}

/// Merge value-equivalent tuples whose intervals form one contiguous span.
pub fn coalesce(tuples: &[Sgt], agg: PayloadAgg) -> Result<Sgt, ModelError> {
    let first = tuples.first().ok_or(ModelError::NothingToCoalesce)?;
    if tuples.iter().any(|t| !value_equivalent(first, t)) {
        return Err(ModelError::NotValueEquivalent);
    }
    let mut spans: Vec<Interval> = tuples.iter().map(|t| t.interval).collect();
    spans.sort();
    let mut reach = spans[0].exp;
    for iv in &spans[1..] {
        if iv.ts > reach {
            return Err(ModelError::GappedIntervals(reach));
        }
        reach = reach.max(iv.exp);
    }
    let hull = Interval { ts: spans[0].ts, exp: reach };
    let chosen = agg.pick(tuples.iter().map(|t| &t.interval));
    Ok(StreamingGraphTuple { interval: hull, ..tuples[chosen].clone() })
}

/// Graph formed by the tuples valid at one instant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SnapshotGraph {
    pub vertices: BTreeSet<VertexId>,
    pub edges: BTreeSet<TupleKey>,
    pub paths: BTreeSet<(VertexId, VertexId, Label, Vec<EdgeTriple>)>,
}

impl SnapshotGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.paths.is_empty()
    }

    /// Every (src, trg, label) present, edges and paths alike.
    pub fn keys(&self) -> BTreeSet<TupleKey> {
        let mut keys = self.edges.clone();
        keys.extend(self.paths.iter().map(|(s, t, l, _)| (*s, *t, *l)));
        keys
    }
}

pub fn snapshot<'a, I>(tuples: I, t: Timestamp) -> SnapshotGraph
where
    I: IntoIterator<Item = &'a Sgt>,
{
    let mut g = SnapshotGraph::default();
    for tup in tuples {
        if tup.sign != Sign::Positive || !tup.interval.contains(t) {
            continue;
        }
        g.vertices.insert(tup.src);
        g.vertices.insert(tup.trg);
        if tup.payload.len() == 1 {
            g.edges.insert(tup.key());
        } else {
            g.paths.insert((tup.src, tup.trg, tup.label, tup.payload.edges().to_vec()));
        }
    }
    g
}

pub fn partition_by_label<I>(stream: I) -> BTreeMap<Label, Vec<Sgt>>
where
    I: IntoIterator<Item = Sgt>,
{
    let mut parts: BTreeMap<Label, Vec<Sgt>> = BTreeMap::new();
    for t in stream {
        parts.entry(t.label).or_default().push(t);
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> VertexId {
        VertexId::new(s)
    }

    fn iv(ts: u64, exp: u64) -> Interval {
        Interval::new(ts, exp).unwrap()
    }

    fn rl(s: &str, t: &str, ts: u64, exp: u64) -> Sgt {
        Sgt::edge(v(s), v(t), Label::new("RL"), iv(ts, exp))
    }

    #[test]
    fn intersections() {
        assert_eq!(intersect_intervals(iv(28, 37), iv(29, 31)), Some(iv(29, 31)));
        assert_eq!(intersect_intervals(iv(0, 5), iv(0, 5)), Some(iv(0, 5)));
        assert_eq!(intersect_intervals(iv(0, 3), iv(3, 6)), None);
        assert!(Interval::new(4, 4).is_err());
    }

    #[test]
    fn equivalence() {
        assert!(value_equivalent(&rl("u", "v", 29, 31), &rl("u", "v", 30, 31)));
        assert!(!value_equivalent(&rl("u", "v", 29, 31), &rl("v", "u", 29, 31)));
    }

    #[test]
    fn coalesce_cases() {
        let c = coalesce(&[rl("u", "v", 29, 31), rl("u", "v", 30, 31)], PayloadAgg::MaxExpiry).unwrap();
        assert_eq!(c.interval, iv(29, 31));
        let three = [rl("a", "b", 2, 5), rl("a", "b", 4, 9), rl("a", "b", 9, 10)];
        assert_eq!(coalesce(&three, PayloadAgg::MaxExpiry).unwrap().interval, iv(2, 10));
        let single = rl("a", "b", 1, 2);
        assert_eq!(coalesce(std::slice::from_ref(&single), PayloadAgg::MaxExpiry).unwrap(), single);
        assert_eq!(
            coalesce(&[rl("a", "b", 1, 2), rl("a", "b", 3, 4)], PayloadAgg::MaxExpiry),
            Err(ModelError::GappedIntervals(2))
        );
        assert_eq!(
            coalesce(&[rl("a", "b", 1, 2), rl("b", "a", 1, 2)], PayloadAgg::MaxExpiry),
            Err(ModelError::NotValueEquivalent)
        );
        assert_eq!(coalesce(&[], PayloadAgg::MaxExpiry), Err(ModelError::NothingToCoalesce));
    }

    #[test]
    fn payload_chain_checked() {
        let (a, b, c) = (v("a"), v("b"), v("c"));
        let l = Label::new("l");
        assert!(Payload::new(vec![]).is_err());
        let ok = Payload::new(vec![
            EdgeTriple { src: a, label: l, trg: b },
            EdgeTriple { src: b, label: l, trg: c },
        ])
        .unwrap();
        assert!(Sgt::new(a, c, l, iv(0, 1), ok.clone()).is_ok());
        assert_eq!(Sgt::new(a, b, l, iv(0, 1), ok), Err(ModelError::EndpointMismatch));
        assert_eq!(
            Payload::new(vec![EdgeTriple { src: a, label: l, trg: b }, EdgeTriple { src: a, label: l, trg: c }]),
            Err(ModelError::BrokenChain(1))
        );
    }

    #[test]
    fn snapshot_bounds() {
        let t = Sgt::edge(v("u"), v("a"), Label::new("likes"), iv(13, 37));
        assert_eq!(snapshot([&t], 13).edges.len(), 1);
        assert!(snapshot([&t], 37).is_empty());
        assert!(snapshot([&t], 12).is_empty());
    }

    #[test]
    fn partition_lossless() {
        let a = Sgt::edge(v("p"), v("q"), Label::new("likes"), iv(0, 3));
        let b = Sgt::edge(v("p"), v("q"), Label::new("follows"), iv(1, 3));
        let c = Sgt::edge(v("q"), v("p"), Label::new("likes"), iv(2, 3));
        let parts = partition_by_label(vec![a.clone(), b.clone(), c.clone()]);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[&Label::new("likes")], vec![a, c]);
        assert_eq!(parts[&Label::new("follows")], vec![b]);
    }
}

use rustc_hash::FxHashMap;

use super::{Delta, Operator};
use crate::model::{Interval, PayloadAgg, Sgt, Timestamp, TupleKey};

#[derive(Default)]
struct KeyState {
    contributions: Vec<Sgt>,
    emitted: Option<Sgt>,
}

/// Keeps at most one live output tuple per (src, trg, label).
///
/// Every live contribution contains the current instant, so live
/// contributions always overlap and their hull is a single interval.
/// Insertions grow the emitted tuple; deletions recompute it from what is
/// left.
#[derive(Default)]
pub struct Coalescer {
    keys: FxHashMap<TupleKey, KeyState>,
    agg: PayloadAgg,
}

impl Coalescer {
    pub fn new() -> Self {
        Self::default()
    }

    fn pick(&self, live: &[Sgt]) -> Sgt {
        let i = self.agg.pick(live.iter().map(|t| &t.interval));
        live[i].clone()
    }

    fn grow(&mut self, key: TupleKey, now: Timestamp, out: &mut Vec<Delta>) {
        let st = self.keys.get_mut(&key).expect("key present");
        st.contributions.retain(|c| c.interval.exp > now);
        if st.contributions.is_empty() {
            return;
        }
        let hull = hull(&st.contributions);
        let live = st.emitted.take().filter(|e| e.interval.exp > now);
        let i = self.agg.pick(st.contributions.iter().map(|t| &t.interval));
        let best = st.contributions[i].clone();
        match live {
            None => {
                let t = best.with_interval(hull);
                st.emitted = Some(t.clone());
                out.push(Delta::Insert(t));
            }
            Some(e) => {
                let grown = e.interval.hull(&hull);
                if grown == e.interval {
                    st.emitted = Some(e);
                } else {
                    let t = best.with_interval(grown);
                    st.emitted = Some(t.clone());
                    out.push(Delta::Extend { old: e, new: t });
                }
            }
        }
    }

    fn shrink(&mut self, key: TupleKey, now: Timestamp, out: &mut Vec<Delta>) {
        let Some(st) = self.keys.get_mut(&key) else { return };
        st.contributions.retain(|c| c.interval.exp > now);
        let Some(e) = st.emitted.take().filter(|e| e.interval.exp > now) else {
            if st.contributions.is_empty() {
                self.keys.remove(&key);
            }
            return;
        };
        if st.contributions.is_empty() {
            out.push(Delta::Delete(e));
            self.keys.remove(&key);
            return;
        }
        let hull = hull(&st.contributions);
        let contributions = st.contributions.clone();
        let t = self.pick(&contributions).with_interval(hull);
        let st = self.keys.get_mut(&key).unwrap();
        if t.interval == e.interval && t.payload == e.payload {
            st.emitted = Some(e);
        } else {
            st.emitted = Some(t.clone());
            out.push(Delta::Delete(e));
            out.push(Delta::Insert(t));
        }
    }

    /// Live emitted tuples, for inspection.
    pub fn emitted(&self, now: Timestamp) -> impl Iterator<Item = &Sgt> {
        self.keys.values().filter_map(move |s| s.emitted.as_ref().filter(|e| e.interval.exp > now))
    }
}

fn hull(ts: &[Sgt]) -> Interval {
    ts.iter().map(|t| t.interval).reduce(|a, b| a.hull(&b)).expect("non-empty")
}

impl Operator for Coalescer {
    fn name(&self) -> &'static str {
        "coalesce"
    }

    fn process(&mut self, _port: usize, delta: Delta, now: Timestamp, out: &mut Vec<Delta>) {
        match delta {
            Delta::Insert(t) => {
                if t.interval.exp <= now {
                    return;
                }
                let key = t.key();
                self.keys.entry(key).or_default().contributions.push(t);
                self.grow(key, now, out);
            }
            Delta::Extend { old, new } => {
                if new.interval.exp <= now {
                    return;
                }
                let key = new.key();
                let st = self.keys.entry(key).or_default();
                match st.contributions.iter().position(|c| c.interval == old.interval) {
                    Some(i) => st.contributions[i] = new,
                    None => st.contributions.push(new),
                }
                self.grow(key, now, out);
            }
            Delta::Delete(t) => {
                let key = t.key();
                let Some(st) = self.keys.get_mut(&key) else { return };
                match st.contributions.iter().position(|c| c.interval == t.interval) {
                    Some(i) => {
                        st.contributions.swap_remove(i);
                    }
                    None => return,
                }
                self.shrink(key, now, out);
            }
        }
    }

    fn purge(&mut self, watermark: Timestamp) -> usize {
        let mut removed = 0;
        self.keys.retain(|_, st| {
            let before = st.contributions.len();
            st.contributions.retain(|c| c.interval.exp > watermark);
            removed += before - st.contributions.len();
            if st.emitted.as_ref().is_some_and(|e| e.interval.exp <= watermark) {
                st.emitted = None;
            }
            st.emitted.is_some() || !st.contributions.is_empty()
        });
        removed
    }

    fn check_state(&self, now: Timestamp) -> Result<(), String> {
        for (key, st) in &self.keys {
            let live: Vec<&Sgt> = st.contributions.iter().filter(|c| c.interval.exp > now).collect();
            if let Some(e) = st.emitted.as_ref().filter(|e| e.interval.exp > now) {
                if let Some(c) = live.iter().find(|c| !e.interval.covers(&c.interval)) {
                    return Err(format!("coalescer output {e:?} does not cover contribution {c:?}"));
                }
            } else if !live.is_empty() {
                return Err(format!("coalescer holds live contributions for {key:?} without output"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Label, VertexId};

    fn t(ts: u64, exp: u64) -> Sgt {
        Sgt::edge(VertexId::new("u"), VertexId::new("v"), Label::new("RL"), Interval::new(ts, exp).unwrap())
    }

    #[test]
    fn merges_overlapping_contributions() {
        let mut c = Coalescer::new();
        let mut out = Vec::new();
        c.process(0, Delta::Insert(t(29, 31)), 29, &mut out);
        c.process(0, Delta::Insert(t(30, 31)), 30, &mut out);
        assert_eq!(out, vec![Delta::Insert(t(29, 31))]);
        out.clear();
        c.process(0, Delta::Insert(t(30, 40)), 30, &mut out);
        assert_eq!(out, vec![Delta::Extend { old: t(29, 31), new: t(29, 40) }]);
        c.check_state(30).unwrap();
    }

    #[test]
    fn delete_recomputes() {
        let mut c = Coalescer::new();
        let mut out = Vec::new();
        c.process(0, Delta::Insert(t(1, 10)), 1, &mut out);
        c.process(0, Delta::Insert(t(5, 20)), 5, &mut out);
        out.clear();
        c.process(0, Delta::Delete(t(1, 10)), 7, &mut out);
        assert_eq!(out, vec![Delta::Delete(t(1, 20)), Delta::Insert(t(5, 20))]);
        out.clear();
        c.process(0, Delta::Delete(t(5, 20)), 8, &mut out);
        assert_eq!(out, vec![Delta::Delete(t(5, 20))]);
        out.clear();
        c.process(0, Delta::Delete(t(5, 20)), 8, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn expired_output_starts_fresh() {
        let mut c = Coalescer::new();
        let mut out = Vec::new();
        c.process(0, Delta::Insert(t(1, 3)), 1, &mut out);
        c.process(0, Delta::Insert(t(5, 8)), 5, &mut out);
        assert_eq!(out, vec![Delta::Insert(t(1, 3)), Delta::Insert(t(5, 8))]);
        assert_eq!(c.purge(8), 1);
        assert_eq!(c.emitted(8).count(), 0);
    }
}

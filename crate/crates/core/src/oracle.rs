//! From-scratch evaluation used to check the incremental engine.
//!
//! Everything here recomputes on demand and favours obviously-correct over
//! fast: rules are evaluated as relational joins over the snapshot,
//! closures by breadth-first search, regular path queries over the product
//! of the graph with regex derivatives.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rustc_hash::{FxHashMap, FxHashSet};

use crate::algebra::SgaExpr;
use crate::automaton::{Dfa, StateId};
use crate::executor::{Engine, EngineConfig, ExecError, InputRecord, ResultStore};
use crate::model::{EdgeTriple, Interval, Label, Sgt, Sign, SnapshotGraph, Timestamp, TupleKey, VertexId};
use crate::query::{ClosureKind, Rule, Sgq, WindowSpec};
use crate::regex::Regex;

pub type Fact = TupleKey;
pub type Relation = BTreeSet<(VertexId, VertexId)>;

/// Per-instant answers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleResult {
    pub instants: BTreeMap<Timestamp, BTreeSet<Fact>>,
}

/// Edges of `g` grouped by label.
pub fn relations(g: &SnapshotGraph) -> FxHashMap<Label, Relation> {
    let mut rels: FxHashMap<Label, Relation> = FxHashMap::default();
    for &(s, t, l) in g.keys().iter() {
        rels.entry(l).or_default().insert((s, t));
    }
    rels
}

/// Every predicate of `q` evaluated over the base relations.
pub fn eval_rules(q: &Sgq, base: &FxHashMap<Label, Relation>) -> BTreeMap<Label, Relation> {
    let mut memo = BTreeMap::new();
    let closures = q.closures();
    let mut preds: Vec<Label> = q.heads().into_iter().collect();
    preds.extend(closures.keys());
    for p in preds {
        eval_pred(q, &closures, base, p, &mut memo);
    }
    memo
}

fn eval_pred(
    q: &Sgq,
    closures: &BTreeMap<Label, (Label, ClosureKind)>,
    base: &FxHashMap<Label, Relation>,
    p: Label,
    memo: &mut BTreeMap<Label, Relation>,
) -> Relation {
    if let Some(r) = memo.get(&p) {
        return r.clone();
    }
    let rules: Vec<&Rule> = q.rules.iter().filter(|r| r.head == p).collect();
    let rel = if !rules.is_empty() {
        let mut out = Relation::new();
        for r in rules {
            let inputs: Vec<Relation> =
                r.body.iter().map(|a| eval_pred(q, closures, base, a.predicate(), memo)).collect();
            out.extend(eval_rule(r, &inputs));
        }
        out
    } else if let Some((inner, _)) = closures.get(&p) {
        // Star and plus both denote paths of at least one edge.
        transitive_closure(&eval_pred(q, closures, base, *inner, memo))
    } else {
        base.get(&p).cloned().unwrap_or_default()
    };
    memo.insert(p, rel.clone());
    rel
}

/// Nested-loop join of the body atoms, projected on the head.
fn eval_rule(r: &Rule, inputs: &[Relation]) -> Relation {
    let mut bindings: Vec<BTreeMap<&str, VertexId>> = vec![BTreeMap::new()];
    for (atom, rel) in r.body.iter().zip(inputs) {
        let (sv, tv) = atom.vars();
        let mut next = Vec::new();
        for b in &bindings {
            for &(s, t) in rel {
                if sv == tv && s != t {
                    continue;
                }
                if b.get(sv).is_some_and(|x| *x != s) || b.get(tv).is_some_and(|x| *x != t) {
                    continue;
                }
                let mut nb = b.clone();
                nb.insert(sv, s);
                nb.insert(tv, t);
                next.push(nb);
            }
        }
        bindings = next;
    }
    bindings.iter().map(|b| (b[r.vars.0.as_str()], b[r.vars.1.as_str()])).collect()
}

/// Pairs joined by a path of one or more edges.
pub fn transitive_closure(rel: &Relation) -> Relation {
    let mut adj: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
    for &(s, t) in rel {
        adj.entry(s).or_default().push(t);
    }
    let mut out = Relation::new();
    for &x in adj.keys() {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<VertexId> = adj[&x].iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            if !seen.insert(v) {
                continue;
            }
            out.insert((x, v));
            queue.extend(adj.get(&v).into_iter().flatten().copied());
        }
    }
    out
}

/// A shortest path of one or more `rel` edges from `x` to `y`.
pub fn closure_witness(rel: &Relation, label: Label, x: VertexId, y: VertexId) -> Option<Vec<EdgeTriple>> {
    let mut parent: BTreeMap<VertexId, VertexId> = BTreeMap::new();
    let mut queue = VecDeque::from([x]);
    while let Some(v) = queue.pop_front() {
        for &(_, w) in rel.iter().filter(|(s, _)| *s == v) {
            if w == y {
                let mut path = vec![EdgeTriple { src: v, label, trg: w }];
                let mut cur = v;
                while cur != x {
                    let p = parent[&cur];
                    path.push(EdgeTriple { src: p, label, trg: cur });
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            if w != x && !parent.contains_key(&w) {
                parent.insert(w, v);
                queue.push_back(w);
            }
        }
    }
    None
}

/// Answer facts of `q` on one snapshot.
pub fn eval_rq_snapshot(q: &Sgq, g: &SnapshotGraph) -> BTreeSet<Fact> {
    let answer = q.answer();
    let rels = eval_rules(q, &relations(g));
    rels.get(&answer).into_iter().flatten().map(|&(s, t)| (s, t, answer)).collect()
}

/// Window content as seen at instant `now` after every record stamped at
/// or before it. A deletion retracts the latest unmatched insertion.
#[derive(Clone, Debug)]
pub struct WindowState {
    pub window: WindowSpec,
    edges: Vec<(TupleKey, Timestamp)>,
}

impl WindowState {
    pub fn new(window: WindowSpec) -> Self {
        WindowState { window, edges: Vec::new() }
    }

    pub fn expiry(&self, t: Timestamp) -> Timestamp {
        t / self.window.slide * self.window.slide + self.window.size
    }

    pub fn apply(&mut self, r: &InputRecord) {
        let e = &r.edge;
        let key = (e.src, e.trg, e.label);
        match r.sign {
            Sign::Positive => self.edges.push((key, e.t)),
            Sign::Negative => {
                if let Some(i) = self.edges.iter().rposition(|(k, _)| *k == key) {
                    self.edges.remove(i);
                }
            }
        }
    }

    /// Windowed tuples valid at `t`.
    pub fn tuples_at(&self, t: Timestamp) -> Vec<Sgt> {
        self.edges
            .iter()
            .filter(|(_, t0)| *t0 <= t && t < self.expiry(*t0))
            .map(|&((s, d, l), t0)| Sgt::edge(s, d, l, Interval { ts: t0, exp: self.expiry(t0) }))
            .collect()
    }

    pub fn snapshot(&self, t: Timestamp) -> SnapshotGraph {
        crate::model::snapshot(self.tuples_at(t).iter(), t)
    }
}

/// Reference answers at each of `instants` on the stream prefix up to it.
pub fn eval_sgq_reference(
    q: &Sgq,
    records: &[InputRecord],
    window: WindowSpec,
    instants: &BTreeSet<Timestamp>,
) -> OracleResult {
    let mut w = WindowState::new(window);
    let mut rest = records.iter().peekable();
    let mut out = OracleResult::default();
    for &t in instants {
        while let Some(r) = rest.next_if(|r| r.t() <= t) {
            w.apply(r);
        }
        out.instants.insert(t, eval_rq_snapshot(q, &w.snapshot(t)));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diff {
    pub t: Timestamp,
    /// In the oracle, not in the engine output.
    pub missing: Vec<Fact>,
    /// In the engine output, not in the oracle.
    pub extra: Vec<Fact>,
}

impl Diff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }
}

pub fn diff_results(engine: &BTreeSet<Fact>, oracle: &BTreeSet<Fact>, t: Timestamp) -> Diff {
    Diff {
        t,
        missing: oracle.difference(engine).copied().collect(),
        extra: engine.difference(oracle).copied().collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instants {
    /// Multiples of the slide.
    #[default]
    Boundary,
    /// Every instant.
    Dense,
}

/// Instants covering the stream and the drain of its last window.
pub fn check_instants(records: &[InputRecord], window: WindowSpec, mode: Instants) -> BTreeSet<Timestamp> {
    let (Some(first), Some(last)) = (records.first(), records.last()) else { return BTreeSet::new() };
    let end = last.t() / window.slide * window.slide + window.size;
    match mode {
        Instants::Dense => (first.t()..=end).collect(),
        Instants::Boundary => {
            let start = first.t().div_ceil(window.slide) * window.slide;
            (start..=end).step_by(window.slide as usize).collect()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub instants: usize,
    pub diffs: Vec<Diff>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Run `plan` and compare its output snapshot with the oracle at each
/// instant, as soon as every record up to that instant is processed.
pub fn check(
    q: &Sgq,
    plan: &SgaExpr,
    records: &[InputRecord],
    window: WindowSpec,
    mode: Instants,
    cfg: EngineConfig,
) -> Result<CheckReport, ExecError> {
    let instants = check_instants(records, window, mode);
    let answer = q.answer();
    let mut engine = Engine::new(plan, cfg)?;
    let mut store = ResultStore::default();
    let mut w = WindowState::new(window);
    let mut rest = records.iter().peekable();
    let mut report = CheckReport::default();
    for &t in &instants {
        while let Some(r) = rest.next_if(|r| r.t() <= t) {
            engine.push(r)?;
            w.apply(r);
        }
        engine.advance_to(t)?;
        store.extend(engine.take_output().iter());
        let got: BTreeSet<Fact> = store.snapshot(t).into_iter().map(|(s, d, _)| (s, d, answer)).collect();
        let want = eval_rq_snapshot(q, &w.snapshot(t));
        let diff = diff_results(&got, &want, t);
        if !diff.is_empty() {
            report.diffs.push(diff);
        }
        store.drop_expired(t);
        report.instants += 1;
    }
    for r in rest {
        engine.push(r)?;
    }
    engine.finish()?;
    Ok(report)
}

/// Regular expressions with explicit empty-language and empty-word terms,
/// kept in a normal form so that a regex has finitely many derivatives.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Re {
    Null,
    Eps,
    Sym(Label),
    Cat(Vec<Re>),
    Alt(BTreeSet<Re>),
    Star(Box<Re>),
}

impl Re {
    fn from_regex(r: &Regex) -> Re {
        match r {
            Regex::Label(l) => Re::Sym(*l),
            Regex::Concat(v) => Re::cat(v.iter().map(Re::from_regex).collect()),
            Regex::Alt(v) => Re::alt(v.iter().map(Re::from_regex).collect()),
            Regex::Star(x) => Re::star(Re::from_regex(x)),
            Regex::Plus(x) => {
                let x = Re::from_regex(x);
                Re::cat(vec![x.clone(), Re::star(x)])
            }
            Regex::Optional(x) => Re::alt(vec![Re::Eps, Re::from_regex(x)]),
        }
    }

    fn cat(parts: Vec<Re>) -> Re {
        let mut v = Vec::new();
        for p in parts {
            match p {
                Re::Null => return Re::Null,
                Re::Eps => {}
                Re::Cat(inner) => v.extend(inner),
                p => v.push(p),
            }
        }
        match v.len() {
            0 => Re::Eps,
            1 => v.pop().unwrap(),
            _ => Re::Cat(v),
        }
    }

    fn alt(parts: Vec<Re>) -> Re {
        let mut s = BTreeSet::new();
        for p in parts {
            match p {
                Re::Null => {}
                Re::Alt(inner) => s.extend(inner),
                p => {
                    s.insert(p);
                }
            }
        }
        match s.len() {
            0 => Re::Null,
            1 => s.pop_first().unwrap(),
            _ => Re::Alt(s),
        }
    }

    fn star(r: Re) -> Re {
        match r {
            Re::Null | Re::Eps => Re::Eps,
            s @ Re::Star(_) => s,
            r => Re::Star(Box::new(r)),
        }
    }

    fn nullable(&self) -> bool {
        match self {
            Re::Null | Re::Sym(_) => false,
            Re::Eps | Re::Star(_) => true,
            Re::Cat(v) => v.iter().all(Re::nullable),
            Re::Alt(s) => s.iter().any(Re::nullable),
        }
    }

    fn derive(&self, a: Label) -> Re {
        match self {
            Re::Null | Re::Eps => Re::Null,
            Re::Sym(l) => {
                if *l == a {
                    Re::Eps
                } else {
                    Re::Null
                }
            }
            Re::Alt(s) => Re::alt(s.iter().map(|r| r.derive(a)).collect()),
            Re::Star(r) => Re::cat(vec![r.derive(a), self.clone()]),
            Re::Cat(v) => {
                let mut alts = Vec::new();
                for i in 0..v.len() {
                    let mut parts = vec![v[i].derive(a)];
                    parts.extend(v[i + 1..].iter().cloned());
                    alts.push(Re::cat(parts));
                    if !v[i].nullable() {
                        break;
                    }
                }
                Re::alt(alts)
            }
        }
    }
}

/// Word membership by repeated derivation.
pub fn derivative_match(r: &Regex, word: &[Label]) -> bool {
    let mut cur = Re::from_regex(r);
    for &a in word {
        cur = cur.derive(a);
        if cur == Re::Null {
            return false;
        }
    }
    cur.nullable()
}

/// Word membership by enumerating the end positions each subterm can
/// reach from a start position.
pub fn backtrack_match(r: &Regex, word: &[Label]) -> bool {
    ends(r, word, 0).contains(&word.len())
}

fn ends(r: &Regex, w: &[Label], i: usize) -> BTreeSet<usize> {
    match r {
        Regex::Label(l) => (w.get(i) == Some(l)).then_some(i + 1).into_iter().collect(),
        Regex::Concat(parts) => parts.iter().fold(BTreeSet::from([i]), |acc, p| {
            acc.into_iter().flat_map(|j| ends(p, w, j)).collect()
        }),
        Regex::Alt(parts) => parts.iter().flat_map(|p| ends(p, w, i)).collect(),
        Regex::Optional(x) => {
            let mut s = ends(x, w, i);
            s.insert(i);
            s
        }
        Regex::Star(x) | Regex::Plus(x) => {
            let mut reached = BTreeSet::new();
            let mut frontier = vec![i];
            while let Some(j) = frontier.pop() {
                for k in ends(x, w, j) {
                    if reached.insert(k) {
                        frontier.push(k);
                    }
                }
            }
            if matches!(r, Regex::Star(_)) {
                reached.insert(i);
            }
            reached
        }
    }
}

/// Pairs (x, y) joined by a non-empty path whose label word is in the
/// language of `r`, searched over graph vertices paired with derivatives.
pub fn rpq_pairs(edges: &[(VertexId, Label, VertexId)], r: &Regex) -> BTreeSet<(VertexId, VertexId)> {
    let mut adj: FxHashMap<VertexId, Vec<(Label, VertexId)>> = FxHashMap::default();
    for &(s, l, t) in edges {
        adj.entry(s).or_default().push((l, t));
    }
    let start = Re::from_regex(r);
    let mut memo: FxHashMap<(Re, Label), Re> = FxHashMap::default();
    let mut out = BTreeSet::new();
    let mut sources: Vec<VertexId> = adj.keys().copied().collect();
    sources.sort();
    for x in sources {
        let mut seen: FxHashSet<(VertexId, Re)> = FxHashSet::default();
        let mut queue = VecDeque::from([(x, start.clone())]);
        while let Some((v, re)) = queue.pop_front() {
            for &(l, w) in adj.get(&v).into_iter().flatten() {
                let d = memo.entry((re.clone(), l)).or_insert_with(|| re.derive(l)).clone();
                if d == Re::Null {
                    continue;
                }
                if d.nullable() {
                    out.insert((x, w));
                }
                if seen.insert((w, d.clone())) {
                    queue.push_back((w, d));
                }
            }
        }
    }
    out
}

/// Widest expiry per (vertex, state) reachable from `root` by a non-empty
/// path: the largest `e` such that the pair is reachable using only edges
/// expiring at or after `e`, tried for every distinct expiry.
pub fn widest_expiry(edges: &[Sgt], dfa: &Dfa, root: VertexId, now: Timestamp) -> BTreeMap<(VertexId, StateId), Timestamp> {
    let live: Vec<&Sgt> = edges.iter().filter(|e| e.interval.exp > now).collect();
    let mut thresholds: Vec<Timestamp> = live.iter().map(|e| e.interval.exp).collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    let mut best = BTreeMap::new();
    for &th in &thresholds {
        let mut adj: FxHashMap<VertexId, Vec<(Label, VertexId)>> = FxHashMap::default();
        for e in live.iter().filter(|e| e.interval.exp >= th) {
            adj.entry(e.src).or_default().push((e.label, e.trg));
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([(root, dfa.start())]);
        while let Some((v, s)) = queue.pop_front() {
            for &(l, w) in adj.get(&v).into_iter().flatten() {
                if let Some(q) = dfa.delta(s, l) {
                    if seen.insert((w, q)) {
                        queue.push_back((w, q));
                    }
                }
            }
        }
        for k in seen {
            best.insert(k, th);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamingGraphEdge;
    use crate::query::parse_sgq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(s: &str) -> VertexId {
        VertexId::new(s)
    }

    fn ins(s: &str, t: &str, l: &str, ts: Timestamp) -> InputRecord {
        InputRecord::insert(StreamingGraphEdge::new(s, t, l, ts))
    }

    fn social() -> Vec<InputRecord> {
        vec![
            ins("u", "v", "follows", 7),
            ins("v", "b", "posts", 10),
            ins("v", "c", "posts", 11),
            ins("u", "a", "posts", 13),
            ins("y", "u", "follows", 20),
            ins("y", "a", "likes", 28),
            ins("u", "b", "likes", 29),
            ins("u", "c", "likes", 30),
        ]
    }

    const RL: &str = "RL(u1,u2) <- likes(u1,m1), posts(u2,m1), follows+(u1,u2) as FP\n";

    #[test]
    fn recent_likers_at_29() {
        let q = parse_sgq(&format!("{RL}Answer(x,y) <- RL(x,y)\n")).unwrap();
        let mut w = WindowState::new(WindowSpec::new(24, 1).unwrap());
        social().iter().for_each(|r| w.apply(r));
        let got = eval_rq_snapshot(&q, &w.snapshot(29));
        let ans = Label::new("Answer");
        assert_eq!(got, BTreeSet::from([(v("y"), v("u"), ans), (v("u"), v("v"), ans)]));
        assert!(eval_rq_snapshot(&q, &SnapshotGraph::default()).is_empty());
    }

    #[test]
    fn two_hop_path_valid_until_31() {
        let q = parse_sgq(&format!("{RL}Answer(x,y) <- RL+(x,y) as RLP\n")).unwrap();
        let w = WindowSpec::new(24, 1).unwrap();
        let r = eval_sgq_reference(&q, &social(), w, &BTreeSet::from([5, 29, 30, 31]));
        let yv = (v("y"), v("v"), Label::new("Answer"));
        assert!(r.instants[&5].is_empty());
        assert!(r.instants[&29].contains(&yv));
        assert!(r.instants[&30].contains(&yv));
        assert!(!r.instants[&31].contains(&yv));
    }

    fn random_rel(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Relation {
        (0..m).map(|_| (v(&format!("n{}", rng.gen_range(0..n))), v(&format!("n{}", rng.gen_range(0..n))))).collect()
    }

    /// Closure by repeated squaring of the boolean adjacency matrix.
    fn squaring_closure(rel: &Relation, n: usize) -> Relation {
        let idx = |x: VertexId| x.name()[1..].parse::<usize>().unwrap();
        let mut m = vec![vec![false; n]; n];
        for &(s, t) in rel {
            m[idx(s)][idx(t)] = true;
        }
        loop {
            let mut next = m.clone();
            for i in 0..n {
                for k in 0..n {
                    if m[i][k] {
                        for j in 0..n {
                            next[i][j] |= m[k][j];
                        }
                    }
                }
            }
            if next == m {
                break;
            }
            m = next;
        }
        let name = |i: usize| v(&format!("n{i}"));
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| m[i][j]).map(|(i, j)| (name(i), name(j))).collect()
    }

    #[test]
    fn closure_matches_matrix_squaring() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=12);
            let m = rng.gen_range(0..30);
            let rel = random_rel(&mut rng, n, m);
            let tc = transitive_closure(&rel);
            assert_eq!(tc, squaring_closure(&rel, n));
            let l = Label::new("a");
            for &(x, y) in &tc {
                let p = closure_witness(&rel, l, x, y).expect("witness");
                assert_eq!((p[0].src, p.last().unwrap().trg), (x, y));
                assert!(p.windows(2).all(|w| w[0].trg == w[1].src));
                assert!(p.iter().all(|e| rel.contains(&(e.src, e.trg))));
            }
        }
    }

    /// Pairs joined by some path of at most `max` edges whose word `r`
    /// accepts, by exhaustive enumeration.
    fn enumerate_pairs(edges: &[(VertexId, Label, VertexId)], r: &Regex, max: usize) -> BTreeSet<(VertexId, VertexId)> {
        let mut out = BTreeSet::new();
        let mut paths: BTreeSet<(VertexId, VertexId, Vec<Label>)> = edges.iter().map(|&(s, l, t)| (s, t, vec![l])).collect();
        for _ in 0..max {
            for (s, t, w) in &paths {
                if backtrack_match(r, w) {
                    out.insert((*s, *t));
                }
            }
            paths = paths
                .iter()
                .flat_map(|(s, t, w)| {
                    edges.iter().filter(move |e| e.0 == *t).map(move |&(_, l, u)| (*s, u, [w.as_slice(), &[l]].concat()))
                })
                .collect();
        }
        out
    }

    #[test]
    fn rpq_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let regexes = ["a+", "a.b*", "(a|b).c", "a*.b", "(a.b)+", "a?.b+", "c"];
        let labels = ["a", "b", "c"];
        for i in 0..60 {
            let r = crate::regex::parse_regex(regexes[i % regexes.len()]).unwrap();
            // A shortest accepted path visits each (vertex, state) once.
            let states = crate::automaton::Dfa::from_regex(&r).num_states();
            let n = rng.gen_range(2..=(9 / states).max(2));
            let edges: Vec<_> = (0..rng.gen_range(1..7))
                .map(|_| {
                    let s = v(&format!("n{}", rng.gen_range(0..n)));
                    let t = v(&format!("n{}", rng.gen_range(0..n)));
                    (s, Label::new(labels[rng.gen_range(0..3)]), t)
                })
                .collect();
            assert_eq!(rpq_pairs(&edges, &r), enumerate_pairs(&edges, &r, n * states), "{r} over {edges:?}");
        }
    }

    #[test]
    fn larger_window_keeps_results() {
        let q = parse_sgq("Answer(x,y) <- a(x,m), b+(m,y) as B\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let recs: Vec<InputRecord> = (0..80u64)
                .map(|t| {
                    let l = if rng.gen_bool(0.4) { "a" } else { "b" };
                    ins(&format!("n{}", rng.gen_range(0..8)), &format!("n{}", rng.gen_range(0..8)), l, t / 2)
                })
                .collect();
            let inst: BTreeSet<Timestamp> = (0..50).collect();
            let small = eval_sgq_reference(&q, &recs, WindowSpec::new(5, 1).unwrap(), &inst);
            let large = eval_sgq_reference(&q, &recs, WindowSpec::new(12, 1).unwrap(), &inst);
            for t in &inst {
                assert!(small.instants[t].is_subset(&large.instants[t]));
            }
        }
    }

    #[test]
    fn diffs() {
        let f = |s: &str| (v(s), v("z"), Label::new("Answer"));
        let a = BTreeSet::from([f("x"), f("y")]);
        assert!(diff_results(&a, &a, 3).is_empty());
        let d = diff_results(&a, &BTreeSet::from([f("x")]), 3);
        assert_eq!((d.missing.len(), d.extra), (0, vec![f("y")]));
    }

    #[test]
    fn deletion_removes_latest_copy() {
        let mut w = WindowState::new(WindowSpec::new(10, 1).unwrap());
        w.apply(&ins("x", "y", "a", 1));
        w.apply(&ins("x", "y", "a", 4));
        w.apply(&InputRecord::delete(StreamingGraphEdge::new("x", "y", "a", 5)));
        let live: Vec<Interval> = w.tuples_at(5).iter().map(|t| t.interval).collect();
        assert_eq!(live, vec![Interval::new(1, 11).unwrap()]);
    }

    #[test]
    fn instant_sets() {
        let recs = [ins("x", "y", "a", 3), ins("x", "y", "a", 12)];
        let w = WindowSpec::new(10, 5).unwrap();
        assert_eq!(check_instants(&recs, w, Instants::Boundary), BTreeSet::from([5, 10, 15, 20]));
        assert_eq!(check_instants(&recs, w, Instants::Dense).len(), 18);
        assert!(check_instants(&[], w, Instants::Dense).is_empty());
    }

    #[test]
    fn matchers_agree_on_small_cases() {
        let l = |s: &str| s.chars().map(|c| Label::new(&c.to_string())).collect::<Vec<_>>();
        for (re, yes, no) in [("a*", "aaa", "ab"), ("(a.b)+", "abab", "aba"), ("a?.b", "b", "aab"), ("a|b.c", "bc", "ac")] {
            let r = crate::regex::parse_regex(re).unwrap();
            for m in [backtrack_match, derivative_match] {
                assert!(m(&r, &l(yes)), "{re} {yes}");
                assert!(!m(&r, &l(no)), "{re} {no}");
            }
        }
        let star = crate::regex::parse_regex("a*").unwrap();
        assert!(backtrack_match(&star, &[]) && derivative_match(&star, &[]));
    }
}

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgq_core::algebra::SgaExpr;
use sgq_core::executor::{Engine, EngineConfig, ExecError, InputRecord, ResultStore};
use sgq_core::io::{generate_synthetic, SyntheticStreamSpec};
use sgq_core::oracle;
use sgq_core::physical::{Delta, Operator, PathConfig, SpathOp};
use sgq_core::query::{parse_sgq, to_logical_plan, Sgq, WindowSpec};
use sgq_core::{Dfa, Label, Regex, Sgt, StateId, StreamingGraphEdge, Timestamp, TupleKey, VertexId};

/// The eight query shapes over labels a, b, c. Closures are non-empty, so
/// `a . b*` is written as the union of `a` and `a . b+`.
pub const QUERIES: [(&str, &str); 8] = [
    ("Q1", "Answer(x,y) <- a+(x,y) as A\n"),
    ("Q2", "Answer(x,y) <- a(x,y)\nAnswer(x,y) <- a(x,z), b+(z,y) as B\n"),
    (
        "Q3",
        "Answer(x,y) <- a(x,y)\n\
         Answer(x,y) <- a(x,z), b+(z,y) as B\n\
         Answer(x,y) <- a(x,z), c+(z,y) as C\n\
         Answer(x,y) <- a(x,z), b+(z,w) as B, c+(w,y) as C\n",
    ),
    ("Q4", "D(x,y) <- a(x,m1), b(m1,m2), c(m2,y)\nAnswer(x,y) <- D+(x,y) as L\n"),
    ("Q5", "Answer(m1,m2) <- a(x,y), b(m1,x), b(m2,y), c(m2,m1)\n"),
    ("Q6", "Answer(x,y) <- a+(x,y) as A, b(x,m), c(m,y)\n"),
    ("Q7", "RL(x,y) <- a+(x,y) as A, b(x,m), c(m,y)\nAnswer(x,m) <- RL+(x,y) as RLP, c(m,y)\n"),
    ("Q8", "P(x,y) <- a(x,z), a(y,z)\nAnswer(x,y) <- P+(x,y) as PP\n"),
];

pub fn query(name: &str) -> Sgq {
    let text = QUERIES.iter().find(|(n, _)| *n == name).expect("known query").1;
    parse_sgq(text).expect("query parses")
}

pub fn plan(name: &str, w: WindowSpec) -> SgaExpr {
    to_logical_plan(&query(name), w).expect("query translates")
}

pub fn stream(vertices: usize, edges: usize, cyclicity: f64, seed: u64) -> Vec<InputRecord> {
    let mut spec = SyntheticStreamSpec::new(vertices, edges, &["a", "b", "c", "d"], seed);
    spec.cyclicity = cyclicity;
    generate_synthetic(&spec)
}

pub fn checked() -> EngineConfig {
    EngineConfig { check_invariants: true, ..Default::default() }
}

/// Regex over `alphabet` with AST depth at most `depth`.
pub fn random_regex(rng: &mut impl Rng, depth: usize, alphabet: &[&str]) -> Regex {
    let leaf = |rng: &mut dyn rand::RngCore| Regex::label(alphabet[rng.gen_range(0..alphabet.len())]);
    if depth <= 1 || rng.gen_bool(0.25) {
        return leaf(rng);
    }
    let sub = |rng: &mut _| random_regex(rng, depth - 1, alphabet);
    match rng.gen_range(0..5) {
        0 => Regex::Concat((0..rng.gen_range(2..=3)).map(|_| sub(rng)).collect()),
        1 => Regex::Alt((0..rng.gen_range(2..=3)).map(|_| sub(rng)).collect()),
        2 => Regex::Star(Box::new(sub(rng))),
        3 => Regex::Plus(Box::new(sub(rng))),
        _ => Regex::Optional(Box::new(sub(rng))),
    }
}

/// One record per instant: an insertion, or with probability `delete_p`
/// the deletion of a currently present edge.
pub fn fuzz_stream(seed: u64, ops: usize, vertices: usize, labels: &[&str], delete_p: f64) -> Vec<InputRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: Vec<StreamingGraphEdge> = Vec::new();
    let mut out = Vec::with_capacity(ops);
    for t in 0..ops as Timestamp {
        if !live.is_empty() && rng.gen_bool(delete_p) {
            let mut e = live.swap_remove(rng.gen_range(0..live.len()));
            e.t = t;
            out.push(InputRecord::delete(e));
        } else {
            let u = format!("v{}", rng.gen_range(0..vertices));
            let v = format!("v{}", rng.gen_range(0..vertices));
            let e = StreamingGraphEdge::new(&u, &v, labels[rng.gen_range(0..labels.len())], t);
            live.push(e);
            out.push(InputRecord::insert(e));
        }
    }
    out
}

/// Snapshot of the engine's result at every instant of `instants`, taken
/// once every record up to it was processed.
pub fn snapshots(
    plan: &SgaExpr,
    records: &[InputRecord],
    instants: &BTreeSet<Timestamp>,
    cfg: EngineConfig,
) -> Result<BTreeMap<Timestamp, BTreeSet<TupleKey>>, ExecError> {
    let mut engine = Engine::new(plan, cfg)?;
    let mut store = ResultStore::default();
    let mut rest = records.iter().peekable();
    let mut out = BTreeMap::new();
    for &t in instants {
        while let Some(r) = rest.next_if(|r| r.t() <= t) {
            engine.push(r)?;
        }
        engine.advance_to(t)?;
        store.extend(engine.take_output().iter());
        out.insert(t, store.snapshot(t));
        store.drop_expired(t);
    }
    engine.finish()?;
    Ok(out)
}

/// Drives a PATH operator with explicit tuples and compares every tree
/// against brute-force widest expiry after each step.
pub struct PathHarness {
    pub op: SpathOp,
    pub edges: Vec<Sgt>,
    pub vertices: BTreeSet<VertexId>,
    pub now: Timestamp,
}

impl PathHarness {
    pub fn new(regex: &Regex) -> Self {
        PathHarness {
            op: SpathOp::new(Dfa::from_regex(regex), Label::new("P"), 1, PathConfig::default()),
            edges: Vec::new(),
            vertices: BTreeSet::new(),
            now: 0,
        }
    }

    /// Whether `t` can be fed: coalesced inputs never hold two
    /// value-equivalent tuples with touching intervals.
    pub fn admits(&self, t: &Sgt) -> bool {
        !self.edges.iter().any(|e| e.key() == t.key() && e.interval.touches(&t.interval))
    }

    pub fn step(&mut self, now: Timestamp, d: Delta) -> Result<(), String> {
        let mut out = Vec::new();
        if now > self.now {
            self.now = now;
            self.op.on_time(now, &mut out);
        }
        match &d {
            Delta::Insert(t) => {
                self.vertices.extend([t.src, t.trg]);
                self.edges.push(t.clone());
            }
            Delta::Delete(t) => {
                let i = self.edges.iter().position(|e| e == t).ok_or("deleting an unknown edge")?;
                self.edges.remove(i);
            }
            Delta::Extend { .. } => unreachable!(),
        }
        self.op.process(0, d, now, &mut out);
        self.op.check_state(now)?;
        self.verify()
    }

    /// Every live node carries the widest expiry over all paths from its
    /// root, and its interval is its parent's narrowed by the edge used.
    pub fn verify(&self) -> Result<(), String> {
        let dfa = self.op.dfa();
        for &root in &self.vertices {
            let want = oracle::widest_expiry(&self.edges, dfa, root, self.now);
            let nodes = self.op.live_nodes(root);
            let got: BTreeMap<(VertexId, StateId), Timestamp> =
                nodes.iter().map(|&(v, s, _, exp, _)| ((v, s), exp)).collect();
            if got != want {
                return Err(format!("root {root} at {}: tree {got:?} but widest {want:?}", self.now));
            }
            let Some(tree) = self.op.tree(root) else { continue };
            for &(v, s, ts, exp, parent) in &nodes {
                let n = tree.node(v, s).expect("listed node");
                let via = n.via.as_ref().ok_or("non-root node without an edge")?;
                let p = tree.nodes.get(&parent.ok_or("non-root node without parent")?).ok_or("dangling parent")?;
                // A refreshed node keeps its start, so ts can only be earlier.
                let p_ts = if p.parent.is_some() { p.ts } else { 0 };
                if exp != p.exp.min(via.interval.exp) || ts > p_ts.max(via.interval.ts) {
                    return Err(format!("root {root}: node ({v},{s}) [{ts},{exp}) does not follow its parent"));
                }
            }
        }
        Ok(())
    }
}

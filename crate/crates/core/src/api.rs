//! Request and response bodies of the HTTP service, and the blocking
//! operations behind them.
//!
//! Streams travel as text in the edge and result file formats, so a
//! client can pass files through unchanged.

use serde::{Deserialize, Serialize};

use crate::algebra::render_plan;
use crate::executor::{self, Engine, EngineConfig, ExecError, Metrics, Threading};
use crate::io::{self, IoError, SyntheticStreamSpec};
use crate::oracle::{self, Instants};
use crate::query::{parse_sgq, to_logical_plan, QueryError, Sgq, WindowSpec};
use crate::rewrite::enumerate_plans;
use crate::model::TupleKey;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("query: {0}")]
    Query(#[from] QueryError),
    #[error("input: {0}")]
    Io(#[from] IoError),
    #[error("{0}")]
    Exec(#[from] ExecError),
    #[error("{0}")]
    BadRequest(String),
}

impl ApiError {
    /// Whether the caller is at fault, as opposed to the engine.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, ApiError::Exec(ExecError::Invariant { .. } | ExecError::Thread(_)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PlanRequest {
    pub query: String,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub rewrites: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanResponse {
    /// Canonical plan, one operator per line.
    pub canonical: String,
    /// Canonical plan followed by every rewrite within the budget, one
    /// line each.
    pub plans: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRequest {
    pub query: String,
    pub edges: String,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub threads: Threading,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResponse {
    pub results: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckRequest {
    pub query: String,
    pub edges: String,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub instants: Instants,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub t: u64,
    /// `src trg label` facts the oracle has and the engine lacks.
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResponse {
    pub instants: usize,
    pub passed: bool,
    pub diffs: Vec<DiffReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenRequest {
    pub spec: SyntheticStreamSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenResponse {
    pub edges: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OpenSession {
    pub query: String,
    #[serde(default)]
    pub window: Option<WindowSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u64,
    pub plan: String,
    pub now: Option<u64>,
    pub tuples_in: u64,
    pub tuples_out: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PushEdges {
    pub edges: String,
    /// Advance time to here after the edges, closing the slides before it.
    #[serde(default)]
    pub until: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PushResponse {
    /// Result tuples produced by this batch.
    pub results: String,
    pub now: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CloseResponse {
    pub metrics: Metrics,
}

/// Parse a query and settle its window: an explicit one wins, then the
/// query's own, then a NOW window.
pub fn prepare(query: &str, window: Option<WindowSpec>) -> Result<(Sgq, WindowSpec), ApiError> {
    let q = parse_sgq(query)?;
    let w = match window.or(q.window) {
        Some(w) => WindowSpec::new(w.size, w.slide)?,
        None => WindowSpec::new(1, 1)?,
    };
    Ok((q, w))
}

pub fn plan(req: &PlanRequest) -> Result<PlanResponse, ApiError> {
    let (q, w) = prepare(&req.query, req.window)?;
    let e = to_logical_plan(&q, w)?;
    let plans = enumerate_plans(&e, req.rewrites).iter().map(render_plan).collect();
    Ok(PlanResponse { canonical: e.render_indented(), plans })
}

pub fn run(req: &RunRequest) -> Result<RunResponse, ApiError> {
    let (q, w) = prepare(&req.query, req.window)?;
    let e = to_logical_plan(&q, w)?;
    let records = io::parse_edge_stream(&req.edges)?;
    let out = executor::run(&e, &records, EngineConfig { threading: req.threads, ..Default::default() })?;
    Ok(RunResponse { results: results_text(&out.output), metrics: out.metrics.summary() })
}

pub fn check(req: &CheckRequest) -> Result<CheckResponse, ApiError> {
    let (q, w) = prepare(&req.query, req.window)?;
    let e = to_logical_plan(&q, w)?;
    let records = io::parse_edge_stream(&req.edges)?;
    let cfg = EngineConfig { check_invariants: true, ..Default::default() };
    let r = oracle::check(&q, &e, &records, w, req.instants, cfg)?;
    let fact = |&(s, t, l): &TupleKey| format!("{s} {t} {l}");
    let diffs: Vec<DiffReport> = r
        .diffs
        .iter()
        .map(|d| DiffReport { t: d.t, missing: d.missing.iter().map(fact).collect(), extra: d.extra.iter().map(fact).collect() })
        .collect();
    Ok(CheckResponse { instants: r.instants, passed: diffs.is_empty(), diffs })
}

pub fn generate(req: &GenRequest) -> Result<GenResponse, ApiError> {
    req.spec.validate().map_err(ApiError::BadRequest)?;
    let mut buf = Vec::new();
    io::write_edges(&mut buf, &io::generate_synthetic(&req.spec))?;
    Ok(GenResponse { edges: String::from_utf8(buf).expect("edge text is utf-8") })
}

pub fn results_text(tuples: &[crate::model::Sgt]) -> String {
    let mut s = String::new();
    for t in tuples {
        s.push_str(&io::format_result(t));
        s.push('\n');
    }
    s
}

/// A registered query fed incrementally.
pub struct Session {
    engine: Engine,
    plan: String,
    tuples_out: u64,
}

impl Session {
    pub fn open(req: &OpenSession) -> Result<Self, ApiError> {
        let (q, w) = prepare(&req.query, req.window)?;
        let e = to_logical_plan(&q, w)?;
        Ok(Session { engine: Engine::new(&e, EngineConfig::default())?, plan: render_plan(&e), tuples_out: 0 })
    }

    pub fn push(&mut self, req: &PushEdges) -> Result<PushResponse, ApiError> {
        let records = io::parse_edge_stream(&req.edges)?;
        for r in &records {
            self.engine.push(r)?;
        }
        if let Some(t) = req.until {
            if self.engine.now().is_some_and(|n| t < n) {
                return Err(ApiError::BadRequest(format!("time {t} is before the session clock")));
            }
            self.engine.advance_to(t)?;
        }
        let out = self.engine.take_output();
        self.tuples_out += out.len() as u64;
        Ok(PushResponse { results: results_text(&out), now: self.engine.now() })
    }

    pub fn info(&self, id: u64) -> SessionInfo {
        SessionInfo {
            id,
            plan: self.plan.clone(),
            now: self.engine.now(),
            tuples_in: self.engine.metrics().tuples_in,
            tuples_out: self.tuples_out,
        }
    }

    pub fn close(mut self) -> Result<CloseResponse, ApiError> {
        let m = self.engine.finish()?;
        let mut metrics = m.summary();
        metrics.tuples_out = self.tuples_out;
        Ok(CloseResponse { metrics })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIKE_CHAINS: &str = "RL(x,y) <- likes(x,m), posts(y,m)\nAnswer(x,y) <- RL+(x,y) as RLP\nWINDOW 24 SLIDE 1";
    const EDGES: &str = "u v follows 7\nv b posts 10\nv c posts 11\nu a posts 13\ny u follows 20\ny a likes 28\nu b likes 29\nu c likes 30\n";

    #[test]
    fn window_resolution() {
        let (_, w) = prepare(LIKE_CHAINS, None).unwrap();
        assert_eq!((w.size, w.slide), (24, 1));
        let (_, w) = prepare(LIKE_CHAINS, Some(WindowSpec::new(10, 5).unwrap())).unwrap();
        assert_eq!((w.size, w.slide), (10, 5));
        let (_, w) = prepare("Answer(x,y) <- a(x,y)", None).unwrap();
        assert_eq!((w.size, w.slide), (1, 1));
    }

    #[test]
    fn bad_window_is_rejected() {
        let w = WindowSpec { size: 2, slide: 5 };
        assert!(matches!(prepare(LIKE_CHAINS, Some(w)), Err(ApiError::Query(_))));
    }

    #[test]
    fn run_and_session_agree() {
        let r = run(&RunRequest { query: LIKE_CHAINS.into(), edges: EDGES.into(), ..Default::default() }).unwrap();
        let mut s = Session::open(&OpenSession { query: LIKE_CHAINS.into(), window: None }).unwrap();
        let mut text = String::new();
        for line in EDGES.lines() {
            text += &s.push(&PushEdges { edges: format!("{line}\n"), until: None }).unwrap().results;
        }
        assert_eq!(text, r.results);
        // Three results, two of which are later extended.
        assert_eq!(r.results.lines().filter(|l| l.starts_with('+')).count(), 5);
        assert_eq!(r.results.lines().count(), 7);
        assert_eq!(s.info(1).tuples_in, 8);
        assert_eq!(s.close().unwrap().metrics.tuples_out, 7);
    }

    #[test]
    fn session_clock_only_moves_forward() {
        let mut s = Session::open(&OpenSession { query: LIKE_CHAINS.into(), window: None }).unwrap();
        s.push(&PushEdges { edges: String::new(), until: Some(9) }).unwrap();
        assert!(s.push(&PushEdges { edges: String::new(), until: Some(3) }).is_err());
        assert!(matches!(s.push(&PushEdges { edges: "a b likes 4\n".into(), until: None }), Err(ApiError::Exec(_))));
    }

    #[test]
    fn check_passes_on_running_example() {
        let req = CheckRequest { query: LIKE_CHAINS.into(), edges: EDGES.into(), instants: Instants::Dense, ..Default::default() };
        let r = check(&req).unwrap();
        assert!(r.passed);
        assert!(r.instants > 0);
    }

    #[test]
    fn plan_lists_rewrites() {
        let q = "D(x,y) <- a(x,m1), b(m1,m2), c(m2,y)\nAnswer(x,y) <- D+(x,y) as L\nWINDOW 10 SLIDE 1";
        let r = plan(&PlanRequest { query: q.into(), rewrites: 3, ..Default::default() }).unwrap();
        assert!(r.plans.len() >= 4, "{:?}", r.plans);
        let r = plan(&PlanRequest { query: LIKE_CHAINS.into(), rewrites: 0, ..Default::default() }).unwrap();
        assert_eq!(r.plans.len(), 1);
        assert!(r.canonical.contains("PATH"));
    }
}

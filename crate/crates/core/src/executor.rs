//! Push-based execution of SGA plans.
//!
//! A plan compiles to a tree of stages mirroring the logical tree, with a
//! coalescing stage above every WSCAN, PATTERN, PATH and windowed UNION.
//! The [`Engine`] drives stages tuple at a time on the calling thread;
//! [`run`] with [`Threading::PerOperator`] runs each stage on its own thread
//! instead.

use std::any::Any;
use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::algebra::{PlanError, SgaExpr};
use crate::automaton::Dfa;
use crate::model::{Interval, Label, Sgt, Sign, StreamingGraphEdge, Timestamp, TupleKey};
use crate::physical::{
    Coalescer, Delta, FilterOp, LiveSet, Operator, PathConfig, PatternOp, SourceOp, SpathOp, UnionOp, WscanOp,
};

/// One line of an input stream. Deletions carry the deletion instant and
/// retract the latest unmatched insertion of the same edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputRecord {
    pub edge: StreamingGraphEdge,
    pub sign: Sign,
}

impl InputRecord {
    pub fn insert(edge: StreamingGraphEdge) -> Self {
        InputRecord { edge, sign: Sign::Positive }
    }

    pub fn delete(edge: StreamingGraphEdge) -> Self {
        InputRecord { edge, sign: Sign::Negative }
    }

    pub fn t(&self) -> Timestamp {
        self.edge.t
    }
}

impl From<StreamingGraphEdge> for InputRecord {
    fn from(edge: StreamingGraphEdge) -> Self {
        InputRecord::insert(edge)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("input record {index} at time {t} arrives after time {prev}")]
    OutOfOrder { index: usize, t: Timestamp, prev: Timestamp },
    #[error("label {0} names both an input stream and a derived stream")]
    LabelCollision(Label),
    #[error("invariant violated at time {now}: {message}")]
    Invariant { now: Timestamp, message: String },
    #[error("operator thread failed: {0}")]
    Thread(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Threading {
    #[default]
    One,
    PerOp,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EngineConfig {
    pub threading: Threading,
    pub path: PathConfig,
    /// Track every coalesced stream for overlapping value-equivalent
    /// tuples, and check operator state at the end of every slide.
    pub check_invariants: bool,
    /// Keep the signed output of every stage.
    pub record_stages: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    Source,
    Wscan,
    Filter,
    Union,
    Pattern,
    Path,
    Coalesce,
}

pub struct Stage {
    pub kind: StageKind,
    /// Output label, when the stage has exactly one.
    pub label: Option<Label>,
    op: Box<dyn Operator>,
    parent: Option<(usize, usize)>,
}

impl Stage {
    pub fn operator(&self) -> &dyn Operator {
        self.op.as_ref()
    }

    pub fn downcast<T: Operator + 'static>(&self) -> Option<&T> {
        let any: &dyn Any = self.op.as_ref();
        any.downcast_ref()
    }
}

/// Stages in post-order; the last one feeds the sink.
pub struct Pipeline {
    pub stages: Vec<Stage>,
    sources: FxHashMap<Label, Vec<usize>>,
    pub size: Timestamp,
    pub slide: Timestamp,
}

impl Pipeline {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn sink(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn input_labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.sources.keys().copied()
    }

    /// Index of the last stage of `kind` producing `label`.
    pub fn find(&self, kind: StageKind, label: Label) -> Option<usize> {
        self.stages.iter().rposition(|s| s.kind == kind && s.label == Some(label))
    }

    /// Coalescing stage directly above stage `i`, if any.
    pub fn coalescer_of(&self, i: usize) -> Option<usize> {
        let (p, _) = self.stages[i].parent?;
        (self.stages[p].kind == StageKind::Coalesce).then_some(p)
    }

    pub fn path_op(&self, label: Label) -> Option<&SpathOp> {
        self.stages[self.find(StageKind::Path, label)?].downcast()
    }

    pub fn count(&self, kind: StageKind) -> usize {
        self.stages.iter().filter(|s| s.kind == kind).count()
    }
}

pub fn compile_physical(plan: &SgaExpr, path: PathConfig) -> Result<Pipeline, ExecError> {
    plan.validate()?;
    let (size, slide) = plan.window().ok_or_else(|| PlanError::Invalid("plan has no window".into()))?;
    let mut derived = Vec::new();
    plan.walk(&mut |e| match e {
        SgaExpr::Pattern { label, .. } | SgaExpr::Path { label, .. } | SgaExpr::Union { label: Some(label), .. } => {
            derived.push(*label)
        }
        _ => {}
    });
    if let Some(l) = plan.source_labels().into_iter().find(|l| derived.contains(l)) {
        return Err(ExecError::LabelCollision(l));
    }
    let mut p = Pipeline { stages: Vec::new(), sources: FxHashMap::default(), size, slide };
    build(plan, false, path, &mut p);
    Ok(p)
}

fn push_stage(p: &mut Pipeline, kind: StageKind, label: Option<Label>, op: Box<dyn Operator>, children: &[usize]) -> usize {
    let i = p.stages.len();
    for (port, &c) in children.iter().enumerate() {
        p.stages[c].parent = Some((i, port));
    }
    p.stages.push(Stage { kind, label, op, parent: None });
    i
}

/// Returns the index of the topmost stage built for `e`.
fn build(e: &SgaExpr, windowed: bool, path: PathConfig, p: &mut Pipeline) -> usize {
    let above = windowed || matches!(e, SgaExpr::Wscan { .. });
    let children: Vec<usize> = e.children().iter().map(|c| build(c, above, path, p)).collect();
    let label = e.out_label();
    let (kind, op): (StageKind, Box<dyn Operator>) = match e {
        SgaExpr::Source(l) => {
            let i = push_stage(p, StageKind::Source, Some(*l), Box::new(SourceOp { label: *l }), &[]);
            p.sources.entry(*l).or_default().push(i);
            return i;
        }
        SgaExpr::Wscan { size, slide, .. } => (StageKind::Wscan, Box::new(WscanOp::new(*size, *slide))),
        SgaExpr::Filter { predicate, .. } => (StageKind::Filter, Box::new(FilterOp { predicate: predicate.clone() })),
        SgaExpr::Union { inputs, label } => {
            (StageKind::Union, Box::new(UnionOp { inputs: inputs.len(), label: *label }))
        }
        SgaExpr::Pattern { inputs, condition, label } => {
            let op = PatternOp::new(inputs.len(), condition, *label).expect("validated plan");
            (StageKind::Pattern, Box::new(op))
        }
        SgaExpr::Path { inputs, regex, label } => {
            let op = SpathOp::new(Dfa::from_regex(regex), *label, inputs.len(), path);
            (StageKind::Path, Box::new(op))
        }
    };
    let i = push_stage(p, kind, label, op, &children);
    let coalesce = match kind {
        StageKind::Wscan | StageKind::Pattern | StageKind::Path => true,
        StageKind::Union => windowed,
        _ => false,
    };
    if coalesce {
        push_stage(p, StageKind::Coalesce, label, Box::new(Coalescer::new()), &[i])
    } else {
        i
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Input records per second of wall time.
    pub throughput: Option<f64>,
    /// Nearest-rank 99th percentile of per-slide processing time, seconds.
    pub p99_latency: Option<f64>,
    pub slides: u64,
    pub tuples_in: u64,
    pub tuples_out: u64,
}

/// Nearest-rank percentile.
pub fn percentile(samples: &[Duration], p: f64) -> Option<Duration> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort();
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[derive(Clone, Debug, Default)]
pub struct SlideMetrics {
    pub latencies: Vec<Duration>,
    pub tuples_in: u64,
    pub tuples_out: u64,
    pub elapsed: Duration,
}

impl SlideMetrics {
    pub fn summary(&self) -> Metrics {
        let secs = self.elapsed.as_secs_f64();
        Metrics {
            throughput: (secs > 0.0).then(|| self.tuples_in as f64 / secs),
            p99_latency: percentile(&self.latencies, 0.99).map(|d| d.as_secs_f64()),
            slides: self.latencies.len() as u64,
            tuples_in: self.tuples_in,
            tuples_out: self.tuples_out,
        }
    }
}

/// Matches deletions to the insertion they retract.
#[derive(Default)]
struct Pending {
    inserted: FxHashMap<TupleKey, Vec<Timestamp>>,
}

impl Pending {
    /// The raw tuple a record stands for, or `None` for a deletion with no
    /// live insertion left to retract.
    fn resolve(&mut self, r: &InputRecord) -> Option<Delta> {
        let e = &r.edge;
        let key = (e.src, e.trg, e.label);
        let raw = |t: Timestamp| Sgt::edge(e.src, e.trg, e.label, Interval { ts: t, exp: t + 1 });
        match r.sign {
            Sign::Positive => {
                self.inserted.entry(key).or_default().push(e.t);
                Some(Delta::Insert(raw(e.t)))
            }
            Sign::Negative => {
                let stack = self.inserted.get_mut(&key)?;
                let t0 = stack.pop()?;
                if stack.is_empty() {
                    self.inserted.remove(&key);
                }
                Some(Delta::Delete(raw(t0)))
            }
        }
    }

    fn purge(&mut self, oldest_live: Timestamp) {
        self.inserted.retain(|_, v| {
            v.retain(|t| *t >= oldest_live);
            !v.is_empty()
        });
    }
}

/// First insertion instant whose window is still open at `watermark`.
fn oldest_live(size: Timestamp, slide: Timestamp, watermark: Timestamp) -> Timestamp {
    // exp(t) = floor(t/slide)*slide + size > watermark
    let need = (watermark + 1).saturating_sub(size);
    need.div_ceil(slide) * slide
}

pub struct Engine {
    pipeline: Pipeline,
    cfg: EngineConfig,
    now: Option<Timestamp>,
    slide: Option<Timestamp>,
    slide_started: Option<Instant>,
    started: Option<Instant>,
    metrics: SlideMetrics,
    output: Vec<Sgt>,
    pending: Pending,
    live: FxHashMap<usize, LiveSet>,
    stage_log: Vec<Vec<(Timestamp, Sgt)>>,
    records: usize,
}

impl Engine {
    pub fn new(plan: &SgaExpr, cfg: EngineConfig) -> Result<Self, ExecError> {
        let pipeline = compile_physical(plan, cfg.path)?;
        let stages = pipeline.len();
        Ok(Engine {
            pipeline,
            cfg,
            now: None,
            slide: None,
            slide_started: None,
            started: None,
            metrics: SlideMetrics::default(),
            output: Vec::new(),
            pending: Pending::default(),
            live: FxHashMap::default(),
            stage_log: vec![Vec::new(); if cfg.record_stages { stages } else { 0 }],
            records: 0,
        })
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn now(&self) -> Option<Timestamp> {
        self.now
    }

    /// Signed sink output so far.
    /// Counters so far. Latencies and elapsed time are filled in by
    /// [`Engine::finish`].
    pub fn metrics(&self) -> &SlideMetrics {
        &self.metrics
    }

    pub fn output(&self) -> &[Sgt] {
        &self.output
    }

    pub fn take_output(&mut self) -> Vec<Sgt> {
        std::mem::take(&mut self.output)
    }

    /// Signed output of stage `i` with the instant it was produced; empty
    /// unless `record_stages` is set.
    pub fn stage_output(&self, i: usize) -> &[(Timestamp, Sgt)] {
        self.stage_log.get(i).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn push(&mut self, r: &InputRecord) -> Result<(), ExecError> {
        let index = self.records;
        if let Some(prev) = self.now.filter(|p| r.t() < *p) {
            return Err(ExecError::OutOfOrder { index, t: r.t(), prev });
        }
        self.records += 1;
        self.advance_to(r.t())?;
        self.metrics.tuples_in += 1;
        let Some(delta) = self.pending.resolve(r) else {
            log::warn!("record {index}: deletion of {:?} matches no live insertion", r.edge);
            return Ok(());
        };
        let now = r.t();
        let targets = self.pipeline.sources.get(&r.edge.label).cloned().unwrap_or_default();
        for s in targets {
            self.deliver(s, 0, delta.clone(), now)?;
        }
        Ok(())
    }

    /// Move time forward without input: slide bookkeeping, expiry-driven
    /// operator work and the invariant check for the instant left behind.
    pub fn advance_to(&mut self, t: Timestamp) -> Result<(), ExecError> {
        let clock = Instant::now();
        self.started.get_or_insert(clock);
        if self.now.is_some_and(|n| t <= n) {
            return Ok(());
        }
        let slide = t / self.pipeline.slide;
        // State checks run at the last instant of each slide.
        if let Some(prev) = self.now.filter(|p| p / self.pipeline.slide < slide) {
            self.check_all(prev)?;
        }
        match self.slide {
            None => self.slide_started = Some(clock),
            Some(s) if slide > s => {
                // Close every slide passed over, empty ones included.
                let last = self.slide_started.replace(clock).unwrap_or(clock);
                self.metrics.latencies.push(clock - last);
                for _ in s + 1..slide {
                    self.metrics.latencies.push(Duration::ZERO);
                }
                self.advance_slide(slide * self.pipeline.slide);
            }
            _ => {}
        }
        self.slide = Some(slide);
        self.now = Some(t);
        for i in 0..self.pipeline.len() {
            let mut out = Vec::new();
            self.pipeline.stages[i].op.on_time(t, &mut out);
            self.forward(i, out, t)?;
        }
        Ok(())
    }

    /// Purge state that expired by `watermark`.
    fn advance_slide(&mut self, watermark: Timestamp) -> usize {
        let (size, slide) = (self.pipeline.size, self.pipeline.slide);
        self.pending.purge(oldest_live(size, slide, watermark));
        self.pipeline.stages.iter_mut().map(|s| s.op.purge(watermark)).sum()
    }

    fn deliver(&mut self, stage: usize, port: usize, delta: Delta, now: Timestamp) -> Result<(), ExecError> {
        let mut out = Vec::new();
        self.pipeline.stages[stage].op.process(port, delta, now, &mut out);
        self.forward(stage, out, now)
    }

    fn forward(&mut self, stage: usize, out: Vec<Delta>, now: Timestamp) -> Result<(), ExecError> {
        if out.is_empty() {
            return Ok(());
        }
        let parent = self.pipeline.stages[stage].parent;
        let tracked = self.cfg.check_invariants && self.pipeline.stages[stage].kind == StageKind::Coalesce;
        for d in out {
            if tracked || self.cfg.record_stages || parent.is_none() {
                let mut signed = Vec::new();
                d.clone().into_signed(&mut signed);
                for t in signed {
                    if tracked {
                        self.track(stage, &t, now)?;
                    }
                    if self.cfg.record_stages {
                        self.stage_log[stage].push((now, t.clone()));
                    }
                    if parent.is_none() {
                        self.metrics.tuples_out += 1;
                        self.output.push(t);
                    }
                }
            }
            if let Some((p, port)) = parent {
                self.deliver(p, port, d, now)?;
            }
        }
        Ok(())
    }

    fn track(&mut self, stage: usize, t: &Sgt, now: Timestamp) -> Result<(), ExecError> {
        if t.sign == Sign::Positive && t.interval.exp <= now {
            return Err(ExecError::Invariant { now, message: format!("stage {stage} emitted expired {t:?}") });
        }
        self.live.entry(stage).or_default().apply(t, now).map_err(|m| ExecError::Invariant {
            now,
            message: format!("stage {stage} ({:?}): {m}", self.pipeline.stages[stage].kind),
        })
    }

    fn check_all(&self, now: Timestamp) -> Result<(), ExecError> {
        if !self.cfg.check_invariants {
            return Ok(());
        }
        for (i, s) in self.pipeline.stages.iter().enumerate() {
            s.op.check_state(now).map_err(|m| ExecError::Invariant {
                now,
                message: format!("stage {i} ({:?}): {m}", s.kind),
            })?;
        }
        Ok(())
    }

    /// Close the last slide and return the metrics.
    pub fn finish(&mut self) -> Result<SlideMetrics, ExecError> {
        if let Some(now) = self.now {
            self.check_all(now)?;
        }
        let clock = Instant::now();
        if let Some(start) = self.slide_started.take() {
            self.metrics.latencies.push(clock - start);
        }
        if let Some(s) = self.started {
            self.metrics.elapsed = clock - s;
        }
        Ok(self.metrics.clone())
    }
}

pub struct RunOutput {
    pub output: Vec<Sgt>,
    pub metrics: SlideMetrics,
}

/// Run a plan over a whole stream.
pub fn run(plan: &SgaExpr, records: &[InputRecord], cfg: EngineConfig) -> Result<RunOutput, ExecError> {
    if let Some((index, w)) = records.windows(2).enumerate().find(|(_, w)| w[1].t() < w[0].t()) {
        return Err(ExecError::OutOfOrder { index: index + 1, t: w[1].t(), prev: w[0].t() });
    }
    match cfg.threading {
        Threading::One => {
            let mut e = Engine::new(plan, cfg)?;
            for r in records {
                e.push(r)?;
            }
            let metrics = e.finish()?;
            Ok(RunOutput { output: e.take_output(), metrics })
        }
        Threading::PerOp => run_threaded(plan, records, cfg),
    }
}

enum Msg {
    Data(usize, Timestamp, Delta),
    /// No further message on this port is stamped before this instant.
    Time(usize, Timestamp),
    End(usize),
}

/// Merges the per-port streams of one stage in timestamp order. Data is
/// released once every port has reached its instant.
struct Merge {
    queues: Vec<VecDeque<(Timestamp, Delta)>>,
    marks: Vec<Option<Timestamp>>,
}

impl Merge {
    fn new(ports: usize) -> Self {
        Merge { queues: (0..ports).map(|_| VecDeque::new()).collect(), marks: vec![None; ports] }
    }

    fn limit(&self) -> Option<Timestamp> {
        self.marks.iter().copied().try_fold(Timestamp::MAX, |m, x| x.map(|x| m.min(x)))
    }

    fn pop(&mut self) -> Option<(usize, Timestamp, Delta)> {
        let limit = self.limit()?;
        let (port, _) = self
            .queues
            .iter()
            .enumerate()
            .filter_map(|(p, q)| q.front().map(|(t, _)| (p, *t)))
            .filter(|(_, t)| *t <= limit)
            .min_by_key(|(p, t)| (*t, *p))?;
        let (t, d) = self.queues[port].pop_front().unwrap();
        Some((port, t, d))
    }
}

struct Worker {
    op: Box<dyn Operator>,
    rx: Receiver<Msg>,
    tx: Sender<Msg>,
    port: usize,
    slide: Timestamp,
}

impl Worker {
    fn run(mut self) {
        let mut merge = Merge::new(self.op.arity());
        let mut ended = 0;
        let mut released: Option<Timestamp> = None;
        let mut out = Vec::new();
        while let Ok(msg) = self.rx.recv() {
            match msg {
                Msg::Data(p, t, d) => {
                    merge.marks[p] = Some(merge.marks[p].map_or(t, |m| m.max(t)));
                    merge.queues[p].push_back((t, d));
                }
                Msg::Time(p, t) => merge.marks[p] = Some(merge.marks[p].map_or(t, |m| m.max(t))),
                Msg::End(p) => {
                    merge.marks[p] = Some(Timestamp::MAX);
                    ended += 1;
                }
            }
            while let Some((port, t, d)) = merge.pop() {
                self.advance(&mut released, t, &mut out);
                self.op.process(port, d, t, &mut out);
                self.emit(t, &mut out);
            }
            if let Some(limit) = merge.limit().filter(|l| *l != Timestamp::MAX) {
                self.advance(&mut released, limit, &mut out);
            }
            if ended == merge.marks.len() {
                let _ = self.tx.send(Msg::End(self.port));
                return;
            }
        }
    }

    fn advance(&mut self, released: &mut Option<Timestamp>, t: Timestamp, out: &mut Vec<Delta>) {
        if released.is_some_and(|r| r >= t) {
            return;
        }
        if released.is_some_and(|r| r / self.slide < t / self.slide) {
            self.op.purge(t / self.slide * self.slide);
        }
        *released = Some(t);
        self.op.on_time(t, out);
        self.emit(t, out);
        let _ = self.tx.send(Msg::Time(self.port, t));
    }

    fn emit(&self, t: Timestamp, out: &mut Vec<Delta>) {
        for d in out.drain(..) {
            let _ = self.tx.send(Msg::Data(self.port, t, d));
        }
    }
}

fn run_threaded(plan: &SgaExpr, records: &[InputRecord], cfg: EngineConfig) -> Result<RunOutput, ExecError> {
    let pipeline = compile_physical(plan, cfg.path)?;
    let slide = pipeline.slide;
    let size = pipeline.size;
    let n = pipeline.len();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| unbounded::<Msg>()).unzip();
    let (sink_tx, sink_rx) = unbounded::<Msg>();
    let sources = pipeline.sources.clone();
    let source_stages: Vec<usize> = {
        let mut v: Vec<usize> = sources.values().flatten().copied().collect();
        v.sort_unstable();
        v
    };

    let sink = std::thread::spawn(move || {
        let mut output = Vec::new();
        let mut done: Vec<(Timestamp, Instant)> = Vec::new();
        let mut last_slide: Option<Timestamp> = None;
        while let Ok(msg) = sink_rx.recv() {
            let t = match msg {
                Msg::Data(_, t, d) => {
                    d.into_signed(&mut output);
                    t
                }
                Msg::Time(_, t) => t,
                Msg::End(_) => break,
            };
            let s = t / slide;
            if last_slide.is_some_and(|l| l < s) {
                done.push((s, Instant::now()));
            }
            last_slide = Some(s);
        }
        done.push((Timestamp::MAX, Instant::now()));
        (output, done)
    });

    let mut handles = Vec::with_capacity(n);
    for (i, (stage, rx)) in pipeline.stages.into_iter().zip(receivers).enumerate() {
        let (tx, port) = match stage.parent {
            Some((p, port)) => (senders[p].clone(), port),
            None => (sink_tx.clone(), 0),
        };
        let w = Worker { op: stage.op, rx, tx, port, slide };
        handles.push(
            std::thread::Builder::new()
                .name(format!("stage-{i}"))
                .spawn(move || w.run())
                .map_err(|e| ExecError::Thread(e.to_string()))?,
        );
    }
    drop(sink_tx);

    let clock = Instant::now();
    let mut starts: Vec<(Timestamp, Instant)> = Vec::new();
    let mut pending = Pending::default();
    let mut now: Option<Timestamp> = None;
    for r in records {
        let t = r.t();
        if now != Some(t) {
            let s = t / slide;
            if now.is_none_or(|n| n / slide < s) {
                if now.is_some() {
                    pending.purge(oldest_live(size, slide, s * slide));
                }
                starts.push((s, Instant::now()));
            }
            for &i in &source_stages {
                let _ = senders[i].send(Msg::Time(0, t));
            }
            now = Some(t);
        }
        let Some(delta) = pending.resolve(r) else { continue };
        for &i in sources.get(&r.edge.label).into_iter().flatten() {
            let _ = senders[i].send(Msg::Data(0, t, delta.clone()));
        }
    }
    for &i in &source_stages {
        let _ = senders[i].send(Msg::End(0));
    }
    drop(senders);
    for h in handles {
        h.join().map_err(|_| ExecError::Thread("operator panicked".into()))?;
    }
    let (output, done) = sink.join().map_err(|_| ExecError::Thread("sink panicked".into()))?;
    let elapsed = clock.elapsed();

    // A slide is finished once the sink has seen the next one begin.
    let mut latencies = Vec::with_capacity(starts.len());
    for (k, (s, start)) in starts.iter().enumerate() {
        let end = done.iter().find(|(d, _)| d > s).map_or(*start, |(_, i)| *i);
        latencies.push(end.saturating_duration_since(*start));
        if let Some((next, _)) = starts.get(k + 1) {
            latencies.extend((s + 1..*next).map(|_| Duration::ZERO));
        }
    }
    let tuples_out = output.len() as u64;
    Ok(RunOutput {
        output,
        metrics: SlideMetrics { latencies, tuples_in: records.len() as u64, tuples_out, elapsed },
    })
}

/// Net live set of a signed result stream.
#[derive(Default)]
pub struct ResultStore {
    live: FxHashMap<TupleKey, Vec<Sgt>>,
}

impl ResultStore {
    pub fn apply(&mut self, t: &Sgt) {
        let v = self.live.entry(t.key()).or_default();
        match t.sign {
            Sign::Positive => v.push(t.clone()),
            Sign::Negative => {
                if let Some(i) = v.iter().position(|x| x.interval == t.interval) {
                    v.swap_remove(i);
                }
            }
        }
    }

    pub fn extend<'a>(&mut self, ts: impl IntoIterator<Item = &'a Sgt>) {
        for t in ts {
            self.apply(t);
        }
    }

    /// Keys with a tuple valid at `t`.
    pub fn snapshot(&self, t: Timestamp) -> std::collections::BTreeSet<TupleKey> {
        self.live
            .iter()
            .filter(|(_, v)| v.iter().any(|x| x.interval.contains(t)))
            .map(|(k, _)| *k)
            .collect()
    }

    /// Every tuple held, expired ones included until dropped.
    pub fn tuples(&self) -> impl Iterator<Item = &Sgt> {
        self.live.values().flatten()
    }

    /// Tuples valid at `t`.
    pub fn valid_at(&self, t: Timestamp) -> Vec<&Sgt> {
        self.live.values().flatten().filter(|x| x.interval.contains(t)).collect()
    }

    pub fn drop_expired(&mut self, now: Timestamp) {
        self.live.retain(|_, v| {
            v.retain(|x| x.interval.exp > now);
            !v.is_empty()
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{parse_sgq, to_logical_plan, WindowSpec};

    fn plan(text: &str, size: Timestamp, slide: Timestamp) -> SgaExpr {
        to_logical_plan(&parse_sgq(text).unwrap(), WindowSpec::new(size, slide).unwrap()).unwrap()
    }

    fn ins(s: &str, t: &str, l: &str, ts: Timestamp) -> InputRecord {
        InputRecord::insert(StreamingGraphEdge::new(s, t, l, ts))
    }

    fn del(s: &str, t: &str, l: &str, ts: Timestamp) -> InputRecord {
        InputRecord::delete(StreamingGraphEdge::new(s, t, l, ts))
    }

    #[test]
    fn single_scan_pipeline() {
        let p = compile_physical(&SgaExpr::wscan("a", 10, 1), PathConfig::default()).unwrap();
        let kinds: Vec<StageKind> = p.stages.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, vec![StageKind::Source, StageKind::Wscan, StageKind::Coalesce]);
        assert_eq!(p.sink(), 2);
    }

    #[test]
    fn stage_count_is_nodes_plus_coalescers() {
        let e = plan("D(x,y) <- a(x,m), b(m,y)\nAnswer(x,y) <- D+(x,y) as L", 10, 1);
        let p = compile_physical(&e, PathConfig::default()).unwrap();
        // PATH, PATTERN, 2 WSCAN, 2 sources; coalescers after each WSCAN,
        // the PATTERN and the PATH.
        assert_eq!(e.node_count(), 6);
        assert_eq!(p.len(), 6 + 4);
        assert_eq!(p.count(StageKind::Coalesce), 4);
        assert!(p.path_op(Label::new("L")).is_some());
        let mut labels: Vec<String> = p.input_labels().map(|l| l.to_string()).collect();
        labels.sort();
        assert_eq!(labels, ["a", "b"]);
    }

    #[test]
    fn derived_label_may_not_shadow_an_input() {
        let e = SgaExpr::Path {
            inputs: vec![SgaExpr::wscan("a", 5, 1)],
            regex: crate::regex::parse_regex("a+").unwrap(),
            label: Label::new("a"),
        };
        assert!(matches!(compile_physical(&e, PathConfig::default()), Err(ExecError::LabelCollision(_))));
    }

    #[test]
    fn empty_stream_has_empty_metrics() {
        let out = run(&plan("Answer(x,y) <- a+(x,y) as A", 10, 1), &[], EngineConfig::default()).unwrap();
        assert!(out.output.is_empty());
        let m = out.metrics.summary();
        assert_eq!((m.slides, m.tuples_in, m.tuples_out, m.p99_latency), (0, 0, 0, None));
    }

    #[test]
    fn out_of_order_input_is_rejected() {
        let e = plan("Answer(x,y) <- a+(x,y) as A", 10, 1);
        let recs = [ins("x", "y", "a", 5), ins("y", "z", "a", 4)];
        match run(&e, &recs, EngineConfig::default()) {
            Err(ExecError::OutOfOrder { index: 1, t: 4, prev: 5 }) => {}
            other => panic!("{:?}", other.map(|o| o.output)),
        }
        let mut eng = Engine::new(&e, EngineConfig::default()).unwrap();
        eng.push(&recs[0]).unwrap();
        assert!(matches!(eng.push(&recs[1]), Err(ExecError::OutOfOrder { .. })));
    }

    #[test]
    fn slides_cover_span_including_empty_ones() {
        let e = plan("Answer(x,y) <- a(x,y)", 20, 5);
        let recs = [ins("x", "y", "a", 2), ins("y", "z", "a", 3), ins("z", "w", "a", 21)];
        let m = run(&e, &recs, EngineConfig::default()).unwrap().metrics;
        // Slides [0,5) .. [20,25).
        assert_eq!(m.latencies.len(), 5);
        assert_eq!(m.tuples_in, 3);
    }

    #[test]
    fn nearest_rank_percentile() {
        let ms: Vec<Duration> = (1..=200).rev().map(Duration::from_millis).collect();
        assert_eq!(percentile(&ms, 0.99), Some(Duration::from_millis(198)));
        assert_eq!(percentile(&ms[..1], 0.99), Some(Duration::from_millis(200)));
        assert_eq!(percentile(&[], 0.99), None);
        let one = SlideMetrics { latencies: vec![Duration::from_millis(7)], ..Default::default() }.summary();
        assert_eq!(one.p99_latency, Some(0.007));
        assert_eq!(one.throughput, None);
    }

    #[test]
    fn deletion_retracts_latest_insertion() {
        let e = plan("Answer(x,y) <- a(x,y)", 10, 1);
        let recs = [ins("x", "y", "a", 1), ins("x", "y", "a", 3), del("x", "y", "a", 4)];
        let out = run(&e, &recs, EngineConfig { check_invariants: true, ..Default::default() }).unwrap().output;
        let mut store = ResultStore::default();
        store.extend(out.iter());
        let live: Vec<Interval> = store.valid_at(5).iter().map(|t| t.interval).collect();
        assert_eq!(live, vec![Interval::new(1, 11).unwrap()]);
    }

    #[test]
    fn dangling_deletion_is_ignored() {
        let e = plan("Answer(x,y) <- a(x,y)", 10, 1);
        let out = run(&e, &[del("x", "y", "a", 1), ins("y", "z", "a", 2)], EngineConfig::default()).unwrap();
        assert_eq!(out.output.len(), 1);
    }

    #[test]
    fn threaded_matches_sequential() {
        let e = plan("Answer(x,y) <- a(x,m), b+(m,y) as B", 6, 2);
        let mut recs = Vec::new();
        for t in 0..60u64 {
            let (s, d) = (format!("v{}", t % 7), format!("v{}", (t * 3 + 1) % 7));
            recs.push(ins(&s, &d, if t % 3 == 0 { "a" } else { "b" }, t / 2));
        }
        // Emission within an instant may differ between modes; the net
        // coalesced result may not.
        let norm = |v: Vec<Sgt>| {
            let mut store = ResultStore::default();
            store.extend(v.iter());
            let mut net: Vec<(String, String, Timestamp, Timestamp)> = store
                .tuples()
                .map(|t| (t.src.to_string(), t.trg.to_string(), t.interval.ts, t.interval.exp))
                .collect();
            net.sort();
            net
        };
        let seq = run(&e, &recs, EngineConfig::default()).unwrap();
        let par = run(&e, &recs, EngineConfig { threading: Threading::PerOp, ..Default::default() }).unwrap();
        assert!(!seq.output.is_empty());
        assert_eq!(norm(seq.output), norm(par.output));
        assert_eq!(seq.metrics.latencies.len(), par.metrics.latencies.len());
    }

    #[test]
    fn identical_runs_are_deterministic() {
        let e = plan("Answer(x,y) <- a+(x,y) as A", 8, 1);
        let recs: Vec<InputRecord> =
            (0..40u64).map(|t| ins(&format!("v{}", t % 5), &format!("v{}", (t + 2) % 5), "a", t)).collect();
        let a = run(&e, &recs, EngineConfig::default()).unwrap().output;
        let b = run(&e, &recs, EngineConfig::default()).unwrap().output;
        assert_eq!(a, b);
    }
}

//! Text formats and the synthetic stream generator.
//!
//! Edge streams: one record per line, `src trg label timestamp [+|-]`,
//! `#` starts a comment. Result streams: `sign src trg label ts exp
//! payload`, the payload being `;`-joined `src:label:trg` triples.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::executor::{InputRecord, Metrics};
use crate::model::{EdgeTriple, Interval, Label, Payload, Sgt, Sign, StreamingGraphEdge, Timestamp, VertexId};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp {t} goes back from {prev}")]
    Regression { line: usize, t: Timestamp, prev: Timestamp },
    #[error("line {line}: deletion of {edge} matches no earlier insertion")]
    DanglingDeletion { line: usize, edge: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.contains([':', ';', '#']) && !s.chars().any(char::is_whitespace)
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

pub fn parse_edge_stream(text: &str) -> Result<Vec<InputRecord>, IoError> {
    read_edges(text.as_bytes())
}

pub fn read_edge_stream(path: impl AsRef<Path>) -> Result<Vec<InputRecord>, IoError> {
    let f = std::fs::File::open(path)?;
    read_edges(std::io::BufReader::new(f))
}

/// Parse, check ordering and match every deletion to an insertion.
pub fn read_edges(r: impl BufRead) -> Result<Vec<InputRecord>, IoError> {
    let mut out = Vec::new();
    let mut prev: Option<Timestamp> = None;
    let mut open: FxHashMap<(VertexId, VertexId, Label), usize> = FxHashMap::default();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        let bad = |message: String| IoError::Malformed { line: line_no, message };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(bad(format!("expected `src trg label timestamp [+|-]`, got {} fields", fields.len())));
        }
        if let Some(f) = fields[..3].iter().find(|f| !valid_name(f)) {
            return Err(bad(format!("invalid name {f:?}")));
        }
        let t: Timestamp = fields[3].parse().map_err(|_| bad(format!("invalid timestamp {:?}", fields[3])))?;
        let sign = match fields.get(4) {
            None | Some(&"+") => Sign::Positive,
            Some(&"-") => Sign::Negative,
            Some(s) => return Err(bad(format!("invalid sign {s:?}"))),
        };
        if let Some(p) = prev.filter(|p| t < *p) {
            return Err(IoError::Regression { line: line_no, t, prev: p });
        }
        prev = Some(t);
        let edge = StreamingGraphEdge::new(fields[0], fields[1], fields[2], t);
        let key = (edge.src, edge.trg, edge.label);
        match sign {
            Sign::Positive => *open.entry(key).or_default() += 1,
            Sign::Negative => match open.get_mut(&key) {
                Some(n) if *n > 0 => *n -= 1,
                _ => {
                    return Err(IoError::DanglingDeletion {
                        line: line_no,
                        edge: format!("{} {} {}", fields[0], fields[1], fields[2]),
                    })
                }
            },
        }
        out.push(InputRecord { edge, sign });
    }
    Ok(out)
}

pub fn format_edge(r: &InputRecord) -> String {
    let e = &r.edge;
    let mut s = format!("{} {} {} {}", e.src, e.trg, e.label, e.t);
    if r.sign == Sign::Negative {
        s.push_str(" -");
    }
    s
}

pub fn write_edges(mut w: impl Write, records: &[InputRecord]) -> Result<(), IoError> {
    for r in records {
        writeln!(w, "{}", format_edge(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edge_stream(path: impl AsRef<Path>, records: &[InputRecord]) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    write_edges(std::io::BufWriter::new(f), records)
}

pub fn format_result(t: &Sgt) -> String {
    let sign = if t.sign == Sign::Negative { '-' } else { '+' };
    let mut s = format!("{sign} {} {} {} {} {} ", t.src, t.trg, t.label, t.interval.ts, t.interval.exp);
    for (i, e) in t.payload.edges().iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(s, "{}:{}:{}", e.src, e.label, e.trg);
    }
    s
}

pub fn parse_result_line(line: &str, line_no: usize) -> Result<Sgt, IoError> {
    let bad = |message: String| IoError::Malformed { line: line_no, message };
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 7 {
        return Err(bad(format!("expected 7 fields, got {}", f.len())));
    }
    let sign = match f[0] {
        "+" => Sign::Positive,
        "-" => Sign::Negative,
        s => return Err(bad(format!("invalid sign {s:?}"))),
    };
    let num = |s: &str| s.parse::<Timestamp>().map_err(|_| bad(format!("invalid timestamp {s:?}")));
    let interval = Interval::new(num(f[4])?, num(f[5])?).map_err(|e| bad(e.to_string()))?;
    let mut triples = Vec::new();
    for part in f[6].split(';') {
        let [s, l, t] = part.split(':').collect::<Vec<_>>()[..] else {
            return Err(bad(format!("invalid payload edge {part:?}")));
        };
        triples.push(EdgeTriple { src: VertexId::new(s), label: Label::new(l), trg: VertexId::new(t) });
    }
    let payload = Payload::new(triples).map_err(|e| bad(e.to_string()))?;
    let mut t = Sgt::new(VertexId::new(f[1]), VertexId::new(f[2]), Label::new(f[3]), interval, payload)
        .map_err(|e| bad(e.to_string()))?;
    t.sign = sign;
    Ok(t)
}

pub fn read_results(r: impl BufRead) -> Result<Vec<Sgt>, IoError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_result_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_result_stream(path: impl AsRef<Path>) -> Result<Vec<Sgt>, IoError> {
    let f = std::fs::File::open(path)?;
    read_results(std::io::BufReader::new(f))
}

pub fn write_results(mut w: impl Write, tuples: &[Sgt]) -> Result<(), IoError> {
    for t in tuples {
        writeln!(w, "{}", format_result(t))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_result_stream(path: impl AsRef<Path>, tuples: &[Sgt]) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    write_results(std::io::BufWriter::new(f), tuples)
}

pub fn metrics_json(m: &Metrics) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize")
}

pub fn write_metrics(path: impl AsRef<Path>, m: &Metrics) -> Result<(), IoError> {
    std::fs::write(path, metrics_json(m) + "\n")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticStreamSpec {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub labels: Vec<String>,
    /// Edges per time unit.
    #[serde(default = "one")]
    pub rate: f64,
    /// Probability that an edge closes a cycle through recent edges;
    /// otherwise it points from a lower to a higher vertex number.
    #[serde(default)]
    pub cyclicity: f64,
    /// Probability of following an insertion with the deletion of an
    /// earlier, still present edge.
    #[serde(default)]
    pub deletions: f64,
    #[serde(default)]
    pub start: Timestamp,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SyntheticStreamSpec {
    pub fn new(vertex_count: usize, edge_count: usize, labels: &[&str], seed: u64) -> Self {
        SyntheticStreamSpec {
            vertex_count,
            edge_count,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            rate: 1.0,
            cyclicity: 0.0,
            deletions: 0.0,
            start: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vertex_count < 2 || self.edge_count == 0 || self.labels.is_empty() {
            return Err("need at least 2 vertices, 1 edge and 1 label".into());
        }
        if self.rate.is_nan() || self.rate <= 0.0 {
            return Err("rate must be positive".into());
        }
        for p in [self.cyclicity, self.deletions] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
        }
        if let Some(l) = self.labels.iter().find(|l| !valid_name(l) || l.starts_with('$')) {
            return Err(format!("invalid label {l:?}"));
        }
        Ok(())
    }
}

/// Seeded stream with exactly `edge_count` insertions.
pub fn generate_synthetic(spec: &SyntheticStreamSpec) -> Vec<InputRecord> {
    spec.validate().expect("valid synthetic spec");
    const RECENT: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.vertex_count;
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut recent: Vec<(usize, usize)> = Vec::with_capacity(RECENT);
    let mut live: Vec<(usize, usize, usize)> = Vec::new();
    let mut out = Vec::with_capacity(spec.edge_count);
    for i in 0..spec.edge_count {
        let t = spec.start + (i as f64 / spec.rate).floor() as Timestamp;
        let closing = !recent.is_empty() && rng.gen_bool(spec.cyclicity);
        let (u, v) = if closing {
            // Close u -> v -> w with w -> u, or u -> v with v -> u.
            let (a, b) = recent[rng.gen_range(0..recent.len())];
            match recent.iter().find(|(s, d)| *s == b && *d != a) {
                Some(&(_, w)) => (w, a),
                None => (b, a),
            }
        } else {
            let u = rng.gen_range(0..n - 1);
            (u, rng.gen_range(u + 1..n))
        };
        let l = rng.gen_range(0..spec.labels.len());
        if recent.len() == RECENT {
            recent.remove(0);
        }
        recent.push((u, v));
        live.push((u, v, l));
        out.push(InputRecord::insert(StreamingGraphEdge::new(&names[u], &names[v], &spec.labels[l], t)));
        if spec.deletions > 0.0 && live.len() > 1 && rng.gen_bool(spec.deletions) {
            let (a, b, l) = live.swap_remove(rng.gen_range(0..live.len() - 1));
            out.push(InputRecord::delete(StreamingGraphEdge::new(&names[a], &names[b], &spec.labels[l], t)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert!(parse_edge_stream("").unwrap().is_empty());
        assert!(parse_edge_stream("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn edge_line_round_trip() {
        let text = "x y follows 3\nx y follows 5 -\n";
        let recs = parse_edge_stream(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].sign, Sign::Negative);
        let mut buf = Vec::new();
        write_edges(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
        assert_eq!(parse_edge_stream("a b c 1 + # trailing").unwrap()[0].sign, Sign::Positive);
    }

    #[test]
    fn edge_errors() {
        let err = |t: &str| parse_edge_stream(t).unwrap_err();
        assert!(matches!(err("a b c\n"), IoError::Malformed { line: 1, .. }));
        assert!(matches!(err("a b c 1\na b c x\n"), IoError::Malformed { line: 2, .. }));
        assert!(matches!(err("a b c 1 *\n"), IoError::Malformed { .. }));
        assert!(matches!(err("a:1 b c 1\n"), IoError::Malformed { .. }));
        assert!(matches!(err("a b c 4\na b c 3\n"), IoError::Regression { line: 2, t: 3, prev: 4 }));
        assert!(matches!(err("a b c 1\na b d 2 -\n"), IoError::DanglingDeletion { line: 2, .. }));
        assert!(matches!(err("a b c 1\na b c 2 -\na b c 3 -\n"), IoError::DanglingDeletion { line: 3, .. }));
    }

    fn path_tuple() -> Sgt {
        let v = VertexId::new;
        let rl = Label::new("RL");
        let payload = Payload::new(vec![
            EdgeTriple { src: v("y"), label: rl, trg: v("u") },
            EdgeTriple { src: v("u"), label: rl, trg: v("v") },
        ])
        .unwrap();
        Sgt::new(v("y"), v("v"), Label::new("RLP"), Interval::new(29, 31).unwrap(), payload).unwrap()
    }

    #[test]
    fn two_edge_path_serializes() {
        let t = path_tuple();
        assert_eq!(format_result(&t), "+ y v RLP 29 31 y:RL:u;u:RL:v");
        assert_eq!(format_result(&t.clone().negated()), "- y v RLP 29 31 y:RL:u;u:RL:v");
    }

    #[test]
    fn result_round_trip() {
        let tuples = vec![
            path_tuple(),
            Sgt::edge(VertexId::new("a"), VertexId::new("b"), Label::new("x"), Interval::new(0, 4).unwrap()).negated(),
        ];
        let mut buf = Vec::new();
        write_results(&mut buf, &tuples).unwrap();
        let back = read_results(buf.as_slice()).unwrap();
        assert_eq!(back, tuples);
        assert!(read_results("+ a b x 3 3 a:x:b\n".as_bytes()).is_err());
        assert!(read_results("+ a b x 1 3 a:x:c\n".as_bytes()).is_err());
    }

    #[test]
    fn synthetic_is_seeded() {
        let mut spec = SyntheticStreamSpec::new(20, 500, &["a", "b"], 9);
        spec.cyclicity = 0.4;
        let a = generate_synthetic(&spec);
        let b = generate_synthetic(&spec);
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        spec.seed = 10;
        assert_ne!(generate_synthetic(&spec), a);
    }

    #[test]
    fn acyclic_without_cyclicity() {
        let spec = SyntheticStreamSpec::new(30, 2000, &["a"], 1);
        for r in generate_synthetic(&spec) {
            let n = |v: VertexId| v.name()[1..].parse::<usize>().unwrap();
            assert!(n(r.edge.src) < n(r.edge.trg));
        }
    }

    #[test]
    fn rate_and_deletions() {
        let mut spec = SyntheticStreamSpec::new(10, 100, &["a"], 3);
        spec.rate = 4.0;
        spec.deletions = 0.3;
        spec.start = 10;
        let recs = generate_synthetic(&spec);
        let inserts = recs.iter().filter(|r| r.sign == Sign::Positive).count();
        assert_eq!(inserts, 100);
        assert!(recs.len() > 100);
        assert_eq!(recs.first().unwrap().t(), 10);
        assert_eq!(recs.last().unwrap().t(), 10 + 99 / 4);
        let mut buf = Vec::new();
        write_edges(&mut buf, &recs).unwrap();
        assert_eq!(read_edges(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn spec_json() {
        let spec: SyntheticStreamSpec =
            serde_json::from_str(r#"{"vertex_count": 5, "edge_count": 9, "labels": ["a"], "seed": 2}"#).unwrap();
        assert_eq!(spec.rate, 1.0);
        assert!(serde_json::from_str::<SyntheticStreamSpec>(r#"{"vertex_count": 5, "edge_count": 9, "labels": ["a"], "colour": 1}"#).is_err());
        assert!(SyntheticStreamSpec { cyclicity: 1.5, ..spec.clone() }.validate().is_err());
        assert!(SyntheticStreamSpec { labels: vec!["$x".into()], ..spec }.validate().is_err());
    }

    #[test]
    fn metrics_document_is_flat() {
        let m = Metrics { throughput: Some(2.5), p99_latency: Some(0.01), slides: 3, tuples_in: 10, tuples_out: 4 };
        let v: serde_json::Value = serde_json::from_str(&metrics_json(&m)).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["p99_latency", "slides", "throughput", "tuples_in", "tuples_out"]);
    }
}

//! Logical plans: expression trees over the five stream operators plus a
//! leaf for raw input streams, with a text form that parses back.
//!
//! ```text
//! PATTERN[trg1=src2; src1,trg2; d](WSCAN[24,1](S[a]), WSCAN[24,1](S[b]))
//! PATH[(a.b)+; l](WSCAN[10,1](S[a]), WSCAN[10,1](S[b]))
//! UNION[d](...)   UNION[](...)   FILTER[src!=trg & label='a'](...)
//! ```

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::model::{Label, Sgt, Timestamp, VertexId};
use crate::regex::{is_ident_char, is_ident_start, parse_regex, Regex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum End {
    Src,
    Trg,
}

/// An endpoint of one of a pattern's inputs; `atom` is zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub atom: usize,
    pub end: End,
}

impl Pos {
    pub fn src(atom: usize) -> Pos {
        Pos { atom, end: End::Src }
    }

    pub fn trg(atom: usize) -> Pos {
        Pos { atom, end: End::Trg }
    }

    pub fn of(&self, t: &Sgt) -> VertexId {
        match self.end {
            End::Src => t.src,
            End::Trg => t.trg,
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = if self.end == End::Src { "src" } else { "trg" };
        write!(f, "{e}{}", self.atom + 1)
    }
}

/// Conjunction of endpoint equalities plus the endpoints that become the
/// output tuple's src and trg.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JoinCondition {
    pub equalities: Vec<(Pos, Pos)>,
    pub output: (Pos, Pos),
}

impl JoinCondition {
    /// `trg_i = src_{i+1}` for each consecutive pair, output `(src1, trgN)`.
    pub fn chain(n: usize) -> JoinCondition {
        JoinCondition {
            equalities: (0..n.saturating_sub(1)).map(|i| (Pos::trg(i), Pos::src(i + 1))).collect(),
            output: (Pos::src(0), Pos::trg(n - 1)),
        }
    }

    pub fn is_chain(&self, n: usize) -> bool {
        n >= 1 && *self == JoinCondition::chain(n)
    }

    pub fn max_atom(&self) -> usize {
        self.equalities
            .iter()
            .flat_map(|(a, b)| [a.atom, b.atom])
            .chain([self.output.0.atom, self.output.1.atom])
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attr {
    Src,
    Trg,
    Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Attr(Attr),
    Const(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Comparison {
    pub lhs: Operand,
    pub op: CmpOp,
    pub rhs: Operand,
}

/// Conjunction of comparisons over src, trg and label. Empty means true.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct FilterPredicate {
    pub terms: Vec<Comparison>,
}

impl FilterPredicate {
    pub fn always() -> Self {
        FilterPredicate::default()
    }

    pub fn eval(&self, t: &Sgt) -> bool {
        self.terms.iter().all(|c| {
            let equal = match (&c.lhs, &c.rhs) {
                (Operand::Attr(a), Operand::Attr(b)) => match (a, b) {
                    (Attr::Src, Attr::Trg) | (Attr::Trg, Attr::Src) => t.src == t.trg,
                    (x, y) if x == y => true,
                    (x, y) => attr_name(*x, t) == attr_name(*y, t),
                },
                (Operand::Attr(a), Operand::Const(k)) | (Operand::Const(k), Operand::Attr(a)) => {
                    *attr_name(*a, t) == **k
                }
                (Operand::Const(a), Operand::Const(b)) => a == b,
            };
            equal == (c.op == CmpOp::Eq)
        })
    }
}

fn attr_name(a: Attr, t: &Sgt) -> std::sync::Arc<str> {
    match a {
        Attr::Src => t.src.name(),
        Attr::Trg => t.trg.name(),
        Attr::Label => t.label.name(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SgaExpr {
    /// Raw input stream of one label.
    Source(Label),
    Wscan { input: Box<SgaExpr>, size: Timestamp, slide: Timestamp },
    Filter { input: Box<SgaExpr>, predicate: FilterPredicate },
    Union { inputs: Vec<SgaExpr>, label: Option<Label> },
    Pattern { inputs: Vec<SgaExpr>, condition: JoinCondition, label: Label },
    Path { inputs: Vec<SgaExpr>, regex: Regex, label: Label },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("invalid plan: {0}")]
    Invalid(String),
}

impl SgaExpr {
    pub fn wscan(label: &str, size: Timestamp, slide: Timestamp) -> SgaExpr {
        SgaExpr::Wscan { input: Box::new(SgaExpr::Source(Label::new(label))), size, slide }
    }

    pub fn children(&self) -> &[SgaExpr] {
        match self {
            SgaExpr::Source(_) => &[],
            SgaExpr::Wscan { input, .. } | SgaExpr::Filter { input, .. } => std::slice::from_ref(input),
            SgaExpr::Union { inputs, .. } | SgaExpr::Pattern { inputs, .. } | SgaExpr::Path { inputs, .. } => inputs,
        }
    }

    pub fn children_mut(&mut self) -> &mut [SgaExpr] {
        match self {
            SgaExpr::Source(_) => &mut [],
            SgaExpr::Wscan { input, .. } | SgaExpr::Filter { input, .. } => std::slice::from_mut(input),
            SgaExpr::Union { inputs, .. } | SgaExpr::Pattern { inputs, .. } | SgaExpr::Path { inputs, .. } => inputs,
        }
    }

    /// Labels tuples of this stream can carry.
    pub fn out_labels(&self) -> BTreeSet<Label> {
        match self {
            SgaExpr::Source(l) => BTreeSet::from([*l]),
            SgaExpr::Wscan { input, .. } | SgaExpr::Filter { input, .. } => input.out_labels(),
            SgaExpr::Union { inputs, label: None } => inputs.iter().flat_map(|i| i.out_labels()).collect(),
            SgaExpr::Union { label: Some(l), .. } | SgaExpr::Pattern { label: l, .. } | SgaExpr::Path { label: l, .. } => {
                BTreeSet::from([*l])
            }
        }
    }

    /// The single output label, if there is exactly one.
    pub fn out_label(&self) -> Option<Label> {
        let ls = self.out_labels();
        (ls.len() == 1).then(|| *ls.iter().next().unwrap())
    }

    /// Labels of raw input streams read by this plan.
    pub fn source_labels(&self) -> BTreeSet<Label> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let SgaExpr::Source(l) = e {
                out.insert(*l);
            }
        });
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(SgaExpr::node_count).sum::<usize>()
    }

    /// Pre-order traversal.
    pub fn walk(&self, f: &mut impl FnMut(&SgaExpr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Structural checks the executor relies on.
    pub fn validate(&self) -> Result<(), PlanError> {
        self.validate_in(false)
    }

    fn validate_in(&self, raw: bool) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Invalid(m));
        match self {
            SgaExpr::Source(l) if !raw => return bad(format!("input stream {l} is not under a window")),
            SgaExpr::Wscan { size, slide, .. } => {
                if raw {
                    return bad("nested WSCAN".into());
                }
                if *slide == 0 || size < slide {
                    return bad(format!("WSCAN needs size >= slide >= 1, got [{size},{slide}]"));
                }
                return self.children()[0].validate_in(true);
            }
            SgaExpr::Pattern { .. } | SgaExpr::Path { .. } if raw => {
                return bad("PATTERN and PATH must sit above a window".into());
            }
            SgaExpr::Pattern { inputs, condition, .. } => {
                if inputs.is_empty() || condition.max_atom() >= inputs.len() {
                    return bad("PATTERN condition references a missing input".into());
                }
            }
            SgaExpr::Path { inputs, regex, label } => {
                let have: BTreeSet<Label> = inputs.iter().flat_map(|i| i.out_labels()).collect();
                if let Some(l) = regex.labels().into_iter().find(|l| !have.contains(l)) {
                    return bad(format!("PATH {label} reads label {l} that no input produces"));
                }
            }
            SgaExpr::Union { inputs, .. } if inputs.is_empty() => return bad("empty UNION".into()),
            _ => {}
        }
        self.children().iter().try_for_each(|c| c.validate_in(raw))
    }

    /// Window parameters of the first WSCAN found.
    pub fn window(&self) -> Option<(Timestamp, Timestamp)> {
        let mut found = None;
        self.walk(&mut |e| {
            if let (None, SgaExpr::Wscan { size, slide, .. }) = (&found, e) {
                found = Some((*size, *slide));
            }
        });
        found
    }

    /// Multi-line rendering; parses back like the single-line form.
    pub fn render_indented(&self) -> String {
        let mut out = String::new();
        self.write_indented(&mut out, 0);
        out
    }

    fn write_indented(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = write!(out, "{pad}{}", self.head());
        match self.children() {
            [] => {}
            [c] if matches!(c, SgaExpr::Source(_)) => {
                let _ = write!(out, "({c})");
            }
            cs => {
                out.push_str("(\n");
                for (i, c) in cs.iter().enumerate() {
                    c.write_indented(out, depth + 1);
                    out.push_str(if i + 1 < cs.len() { ",\n" } else { "\n" });
                }
                let _ = write!(out, "{pad})");
            }
        }
    }

    fn head(&self) -> String {
        match self {
            SgaExpr::Source(l) => format!("S[{l}]"),
            SgaExpr::Wscan { size, slide, .. } => format!("WSCAN[{size},{slide}]"),
            SgaExpr::Filter { predicate, .. } => format!("FILTER[{}]", render_predicate(predicate)),
            SgaExpr::Union { label, .. } => match label {
                Some(l) => format!("UNION[{l}]"),
                None => "UNION[]".into(),
            },
            SgaExpr::Pattern { condition, label, .. } => {
                let eqs: Vec<String> = condition.equalities.iter().map(|(a, b)| format!("{a}={b}")).collect();
                format!("PATTERN[{}; {},{}; {label}]", eqs.join(" & "), condition.output.0, condition.output.1)
            }
            SgaExpr::Path { regex, label, .. } => format!("PATH[{regex}; {label}]"),
        }
    }
}

fn render_operand(o: &Operand) -> String {
    match o {
        Operand::Attr(Attr::Src) => "src".into(),
        Operand::Attr(Attr::Trg) => "trg".into(),
        Operand::Attr(Attr::Label) => "label".into(),
        Operand::Const(k) => format!("'{k}'"),
    }
}

fn render_predicate(p: &FilterPredicate) -> String {
    if p.terms.is_empty() {
        return "true".into();
    }
    let terms: Vec<String> = p
        .terms
        .iter()
        .map(|c| {
            let op = if c.op == CmpOp::Eq { "=" } else { "!=" };
            format!("{}{op}{}", render_operand(&c.lhs), render_operand(&c.rhs))
        })
        .collect();
    terms.join(" & ")
}

impl fmt::Display for SgaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.head())?;
        let cs = self.children();
        if !cs.is_empty() {
            f.write_str("(")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

pub fn render_plan(e: &SgaExpr) -> String {
    e.to_string()
}

pub fn parse_plan(text: &str) -> Result<SgaExpr, PlanError> {
    let mut p = PlanParser { s: text, pos: 0 };
    let e = p.expr()?;
    p.ws();
    if p.pos < text.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

struct PlanParser<'a> {
    s: &'a str,
    pos: usize,
}

impl PlanParser<'_> {
    fn err(&self, message: &str) -> PlanError {
        PlanError::Syntax { pos: self.pos, message: message.to_string() }
    }

    fn ws(&mut self) {
        while let Some(c) = self.s[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.ws();
        self.s[self.pos..].chars().next()
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        if self.s[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), PlanError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{tok}'")))
        }
    }

    fn ident(&mut self) -> Result<String, PlanError> {
        self.ws();
        let rest = &self.s[self.pos..];
        match rest.chars().next() {
            Some(c) if is_ident_start(c) => {}
            _ => return Err(self.err("expected identifier")),
        }
        let len = rest.find(|c: char| !is_ident_char(c)).unwrap_or(rest.len());
        self.pos += len;
        Ok(rest[..len].to_string())
    }

    fn number(&mut self) -> Result<Timestamp, PlanError> {
        self.ws();
        let rest = &self.s[self.pos..];
        let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        let n = rest[..len].parse().map_err(|_| self.err("expected number"))?;
        self.pos += len;
        Ok(n)
    }

    fn children(&mut self) -> Result<Vec<SgaExpr>, PlanError> {
        self.expect("(")?;
        let mut out = vec![self.expr()?];
        while self.eat(",") {
            out.push(self.expr()?);
        }
        self.expect(")")?;
        Ok(out)
    }

    fn one_child(&mut self) -> Result<Box<SgaExpr>, PlanError> {
        let mut cs = self.children()?;
        if cs.len() != 1 {
            return Err(self.err("expected exactly one input"));
        }
        Ok(Box::new(cs.pop().unwrap()))
    }

    fn expr(&mut self) -> Result<SgaExpr, PlanError> {
        let start = self.pos;
        let kw = self.ident()?;
        self.expect("[")?;
        match kw.as_str() {
            "S" => {
                let l = self.ident()?;
                self.expect("]")?;
                Ok(SgaExpr::Source(Label::new(&l)))
            }
            "WSCAN" => {
                let size = self.number()?;
                self.expect(",")?;
                let slide = self.number()?;
                self.expect("]")?;
                Ok(SgaExpr::Wscan { size, slide, input: self.one_child()? })
            }
            "FILTER" => {
                let predicate = self.predicate()?;
                self.expect("]")?;
                Ok(SgaExpr::Filter { predicate, input: self.one_child()? })
            }
            "UNION" => {
                let label = if self.eat("]") {
                    None
                } else {
                    let l = Label::new(&self.ident()?);
                    self.expect("]")?;
                    Some(l)
                };
                Ok(SgaExpr::Union { label, inputs: self.children()? })
            }
            "PATTERN" => {
                let mut equalities = Vec::new();
                if self.peek() != Some(';') {
                    loop {
                        let a = self.pos_ref()?;
                        self.expect("=")?;
                        let b = self.pos_ref()?;
                        equalities.push((a, b));
                        if !self.eat("&") {
                            break;
                        }
                    }
                }
                self.expect(";")?;
                let s = self.pos_ref()?;
                self.expect(",")?;
                let t = self.pos_ref()?;
                self.expect(";")?;
                let label = Label::new(&self.ident()?);
                self.expect("]")?;
                let condition = JoinCondition { equalities, output: (s, t) };
                Ok(SgaExpr::Pattern { condition, label, inputs: self.children()? })
            }
            "PATH" => {
                self.ws();
                let rest = &self.s[self.pos..];
                let semi = rest.find(';').ok_or_else(|| self.err("expected ';' after regex"))?;
                let regex = parse_regex(&rest[..semi]).map_err(|e| PlanError::Syntax {
                    pos: self.pos,
                    message: e.to_string(),
                })?;
                self.pos += semi + 1;
                let label = Label::new(&self.ident()?);
                self.expect("]")?;
                Ok(SgaExpr::Path { regex, label, inputs: self.children()? })
            }
            _ => {
                self.pos = start;
                Err(self.err(&format!("unknown operator {kw}")))
            }
        }
    }

    fn pos_ref(&mut self) -> Result<Pos, PlanError> {
        let at = self.pos;
        let id = self.ident()?;
        let (end, num) = if let Some(n) = id.strip_prefix("src") {
            (End::Src, n)
        } else if let Some(n) = id.strip_prefix("trg") {
            (End::Trg, n)
        } else {
            self.pos = at;
            return Err(self.err("expected srcN or trgN"));
        };
        match num.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Pos { atom: n - 1, end }),
            _ => {
                self.pos = at;
                Err(self.err("expected srcN or trgN"))
            }
        }
    }

    fn operand(&mut self) -> Result<Operand, PlanError> {
        if self.peek() == Some('\'') {
            self.pos += 1;
            let rest = &self.s[self.pos..];
            let close = rest.find('\'').ok_or_else(|| self.err("unterminated constant"))?;
            let k = rest[..close].to_string();
            self.pos += close + 1;
            return Ok(Operand::Const(k));
        }
        let at = self.pos;
        match self.ident()?.as_str() {
            "src" => Ok(Operand::Attr(Attr::Src)),
            "trg" => Ok(Operand::Attr(Attr::Trg)),
            "label" => Ok(Operand::Attr(Attr::Label)),
            _ => {
                self.pos = at;
                Err(self.err("expected src, trg, label or a quoted constant"))
            }
        }
    }

    fn predicate(&mut self) -> Result<FilterPredicate, PlanError> {
        self.ws();
        if self.s[self.pos..].starts_with("true") {
            self.pos += 4;
            return Ok(FilterPredicate::always());
        }
        let mut terms = Vec::new();
        loop {
            let lhs = self.operand()?;
            let op = if self.eat("!=") {
                CmpOp::Ne
            } else if self.eat("=") {
                CmpOp::Eq
            } else {
                return Err(self.err("expected '=' or '!='"));
            };
            let rhs = self.operand()?;
            terms.push(Comparison { lhs, op, rhs });
            if !self.eat("&") {
                return Ok(FilterPredicate { terms });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_examples() {
        for text in [
            "WSCAN[24,1](S[likes])",
            "PATH[a+; A](WSCAN[10,1](S[a]))",
            "PATTERN[trg1=src2 & trg2=src3; src1,trg3; d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]), WSCAN[5,1](S[c]))",
            "PATTERN[; src1,trg1; d](WSCAN[5,1](S[a]))",
            "UNION[](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]))",
            "UNION[d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]))",
            "FILTER[src!=trg & label='a'](WSCAN[5,1](UNION[](S[a], S[b])))",
            "FILTER[true](WSCAN[5,1](S[a]))",
        ] {
            let e = parse_plan(text).unwrap();
            assert_eq!(render_plan(&e), text);
            assert_eq!(parse_plan(&e.render_indented()).unwrap(), e);
            e.validate().unwrap();
        }
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_plan("WSCAN[24](S[a])"), Err(PlanError::Syntax { .. })));
        assert!(matches!(parse_plan("NOPE[1](S[a])"), Err(PlanError::Syntax { pos: 0, .. })));
        assert!(matches!(parse_plan("PATTERN[trg1=x; src1,trg1; d](S[a])"), Err(PlanError::Syntax { .. })));
        assert!(parse_plan("WSCAN[2,1](S[a]) extra").is_err());
    }

    #[test]
    fn validation() {
        assert!(parse_plan("S[a]").unwrap().validate().is_err());
        assert!(parse_plan("WSCAN[1,2](S[a])").unwrap().validate().is_err());
        assert!(parse_plan("PATH[a.b; d](WSCAN[5,1](S[a]))").unwrap().validate().is_err());
        assert!(parse_plan("WSCAN[5,1](WSCAN[5,1](S[a]))").unwrap().validate().is_err());
        assert!(parse_plan("PATTERN[trg1=src3; src1,trg1; d](WSCAN[5,1](S[a]))").unwrap().validate().is_err());
    }

    #[test]
    fn filter_eval() {
        let l = Label::new("a");
        let t = Sgt::edge(VertexId::new("p"), VertexId::new("p"), l, crate::model::Interval::new(0, 1).unwrap());
        let u = Sgt::edge(VertexId::new("p"), VertexId::new("q"), l, crate::model::Interval::new(0, 1).unwrap());
        let loops = parse_plan("FILTER[src=trg](WSCAN[1,1](S[a]))").unwrap();
        let SgaExpr::Filter { predicate, .. } = loops else { unreachable!() };
        assert!(predicate.eval(&t));
        assert!(!predicate.eval(&u));
        assert!(FilterPredicate::always().eval(&u));
        let named = parse_plan("FILTER[trg='q' & label!='b'](WSCAN[1,1](S[a]))").unwrap();
        let SgaExpr::Filter { predicate, .. } = named else { unreachable!() };
        assert!(predicate.eval(&u));
        assert!(!predicate.eval(&t));
    }
}

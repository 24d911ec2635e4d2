//! Query text, its validation, and compilation to a canonical plan.
//!
//! ```text
//! # comments start with '#'
//! WINDOW 24 SLIDE 1
//! RL(u1,u2) <- likes(u1,m1), posts(u2,m1), follows+(u1,u2) as FP
//! Answer(u,m) <- RL+(u,u2) as RLP, posts(u2,m)
//! ```
//!
//! `l+(x,y) as d` and `l*(x,y) as d` are closure atoms: the derived stream
//! `d` of non-empty `l` paths. Without `as`, the alias is `l_plus` or
//! `l_star`. Several rules with the same head form a union.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::algebra::{JoinCondition, Pos, SgaExpr};
use crate::model::{Label, Timestamp};
use crate::regex::{is_ident_char, is_ident_start, Regex};

pub const ANSWER: &str = "Answer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("recursive definition through {0}")]
    Recursion(String),
    #[error("line {line}: head variable {var} does not occur in the body")]
    UnsafeHeadVariable { line: usize, var: String },
    #[error("line {line}: {predicate} must be binary")]
    NonBinary { line: usize, predicate: String },
    #[error("query has no {ANSWER} rule")]
    MissingAnswer,
    #[error("line {line}: {ANSWER} cannot be used in a rule body")]
    AnswerInBody { line: usize },
    #[error("line {line}: label {label} is defined twice")]
    LabelCollision { line: usize, label: String },
    #[error("window needs size >= slide >= 1, got size {size} slide {slide}")]
    BadWindow { size: Timestamp, slide: Timestamp },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClosureKind {
    Plus,
    Star,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Atom {
    Edge { label: Label, src: String, trg: String },
    Closure { label: Label, src: String, trg: String, alias: Label, kind: ClosureKind },
}

impl Atom {
    pub fn vars(&self) -> (&str, &str) {
        match self {
            Atom::Edge { src, trg, .. } | Atom::Closure { src, trg, .. } => (src, trg),
        }
    }

    /// The stream this atom reads: the label itself, or the closure alias.
    pub fn predicate(&self) -> Label {
        match self {
            Atom::Edge { label, .. } => *label,
            Atom::Closure { alias, .. } => *alias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub head: Label,
    pub vars: (String, String),
    pub body: Vec<Atom>,
    pub line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub size: Timestamp,
    pub slide: Timestamp,
}

impl WindowSpec {
    pub fn new(size: Timestamp, slide: Timestamp) -> Result<Self, QueryError> {
        if slide == 0 || size < slide {
            return Err(QueryError::BadWindow { size, slide });
        }
        Ok(WindowSpec { size, slide })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sgq {
    pub rules: Vec<Rule>,
    pub window: Option<WindowSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    /// Predicates in order of first appearance.
    pub nodes: Vec<Label>,
    pub edges: BTreeSet<(Label, Label)>,
}

impl DependencyGraph {
    pub fn successors(&self, p: Label) -> impl Iterator<Item = Label> + '_ {
        self.edges.iter().filter(move |(a, _)| *a == p).map(|(_, b)| *b)
    }
}

impl Sgq {
    pub fn answer(&self) -> Label {
        Label::new(ANSWER)
    }

    pub fn heads(&self) -> BTreeSet<Label> {
        self.rules.iter().map(|r| r.head).collect()
    }

    /// Closure aliases with the label and kind they close over.
    pub fn closures(&self) -> BTreeMap<Label, (Label, ClosureKind)> {
        let mut out = BTreeMap::new();
        for r in &self.rules {
            for a in &r.body {
                if let Atom::Closure { label, alias, kind, .. } = a {
                    out.insert(*alias, (*label, *kind));
                }
            }
        }
        out
    }

    /// Labels the query reads from the input stream.
    pub fn input_labels(&self) -> BTreeSet<Label> {
        let derived = self.derived_labels();
        let mut out = BTreeSet::new();
        for r in &self.rules {
            for a in &r.body {
                let l = match a {
                    Atom::Edge { label, .. } | Atom::Closure { label, .. } => *label,
                };
                if !derived.contains(&l) {
                    out.insert(l);
                }
            }
        }
        out
    }

    /// Rule heads and closure aliases.
    pub fn derived_labels(&self) -> BTreeSet<Label> {
        let mut out = self.heads();
        out.extend(self.closures().into_keys());
        out
    }
}

pub fn dependency_graph(q: &Sgq) -> DependencyGraph {
    let mut g = DependencyGraph::default();
    let node = |g: &mut DependencyGraph, l: Label| {
        if !g.nodes.contains(&l) {
            g.nodes.push(l);
        }
    };
    for r in &q.rules {
        node(&mut g, r.head);
        for a in &r.body {
            node(&mut g, a.predicate());
            g.edges.insert((r.head, a.predicate()));
            if let Atom::Closure { label, alias, .. } = a {
                node(&mut g, *label);
                g.edges.insert((*alias, *label));
            }
        }
    }
    g
}

fn find_cycle(g: &DependencyGraph) -> Option<Label> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color: BTreeMap<Label, u8> = BTreeMap::new();
    fn visit(g: &DependencyGraph, n: Label, color: &mut BTreeMap<Label, u8>) -> Option<Label> {
        match color.get(&n) {
            Some(1) => return Some(n),
            Some(2) => return None,
            _ => {}
        }
        color.insert(n, 1);
        for m in g.successors(n).collect::<Vec<_>>() {
            if let Some(c) = visit(g, m, color) {
                return Some(c);
            }
        }
        color.insert(n, 2);
        None
    }
    g.nodes.iter().find_map(|n| visit(g, *n, &mut color))
}

pub fn parse_sgq(text: &str) -> Result<Sgq, QueryError> {
    let mut rules = Vec::new();
    let mut window = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let mut lx = Lexer { line: line_no, chars: content.char_indices().collect(), pos: 0 };
        if lx.peek_word().as_deref() == Some("WINDOW") {
            if window.is_some() {
                return Err(lx.error("second WINDOW directive"));
            }
            window = Some(lx.window()?);
        } else {
            rules.push(lx.rule()?);
        }
        lx.end()?;
    }
    let q = Sgq { rules, window };
    validate(&q)?;
    Ok(q)
}

fn validate(q: &Sgq) -> Result<(), QueryError> {
    let answer = q.answer();
    if !q.rules.iter().any(|r| r.head == answer) {
        return Err(QueryError::MissingAnswer);
    }
    let heads = q.heads();
    let mut aliases: BTreeMap<Label, (Label, ClosureKind)> = BTreeMap::new();
    for r in &q.rules {
        for a in &r.body {
            let used = match a {
                Atom::Edge { label, .. } | Atom::Closure { label, .. } => *label,
            };
            if used == answer || a.predicate() == answer {
                return Err(QueryError::AnswerInBody { line: r.line });
            }
            if let Atom::Closure { label, alias, kind, .. } = a {
                let clash = heads.contains(alias)
                    || alias == label
                    || aliases.get(alias).is_some_and(|prev| *prev != (*label, *kind));
                if clash {
                    return Err(QueryError::LabelCollision { line: r.line, label: alias.to_string() });
                }
                aliases.insert(*alias, (*label, *kind));
            }
        }
        for v in [&r.vars.0, &r.vars.1] {
            if !r.body.iter().any(|a| a.vars().0 == v || a.vars().1 == v) {
                return Err(QueryError::UnsafeHeadVariable { line: r.line, var: v.clone() });
            }
        }
    }
    if let Some(l) = find_cycle(&dependency_graph(q)) {
        return Err(QueryError::Recursion(l.to_string()));
    }
    Ok(())
}

struct Lexer {
    line: usize,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl Lexer {
    fn error(&self, message: &str) -> QueryError {
        QueryError::Syntax { line: self.line, col: self.pos + 1, message: message.to_string() }
    }

    fn ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|(_, c)| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.ws();
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        let n = tok.chars().count();
        let here: String = self.chars.iter().skip(self.pos).take(n).map(|(_, c)| *c).collect();
        if here == tok {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), QueryError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{tok}'")))
        }
    }

    fn peek_word(&mut self) -> Option<String> {
        let save = self.pos;
        let w = self.ident().ok();
        self.pos = save;
        w
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        self.ws();
        match self.chars.get(self.pos) {
            // '$' is reserved for labels minted by rewrites.
            Some((_, c)) if is_ident_start(*c) && *c != '$' => {}
            _ => return Err(self.error("expected identifier")),
        }
        let mut s = String::new();
        while let Some((_, c)) = self.chars.get(self.pos) {
            if !is_ident_char(*c) || *c == '$' {
                break;
            }
            s.push(*c);
            self.pos += 1;
        }
        Ok(s)
    }

    fn number(&mut self) -> Result<Timestamp, QueryError> {
        self.ws();
        let mut s = String::new();
        while let Some((_, c)) = self.chars.get(self.pos) {
            if !c.is_ascii_digit() {
                break;
            }
            s.push(*c);
            self.pos += 1;
        }
        s.parse().map_err(|_| self.error("expected a non-negative integer"))
    }

    fn end(&mut self) -> Result<(), QueryError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.error("unexpected trailing input")),
        }
    }

    fn window(&mut self) -> Result<WindowSpec, QueryError> {
        self.ident()?;
        let size = self.number()?;
        let slide = if self.peek_word().as_deref() == Some("SLIDE") {
            self.ident()?;
            self.number()?
        } else {
            1
        };
        let at = self.pos;
        WindowSpec::new(size, slide).map_err(|e| {
            self.pos = at;
            self.error(&e.to_string())
        })
    }

    fn args(&mut self) -> Result<Vec<String>, QueryError> {
        self.expect("(")?;
        let mut vars = vec![self.ident()?];
        while self.eat(",") {
            vars.push(self.ident()?);
        }
        self.expect(")")?;
        Ok(vars)
    }

    fn binary(&mut self, predicate: &str) -> Result<(String, String), QueryError> {
        let mut vars = self.args()?;
        if vars.len() != 2 {
            return Err(QueryError::NonBinary { line: self.line, predicate: predicate.to_string() });
        }
        let trg = vars.pop().unwrap();
        Ok((vars.pop().unwrap(), trg))
    }

    fn rule(&mut self) -> Result<Rule, QueryError> {
        let head = self.ident()?;
        let vars = self.binary(&head)?;
        self.expect("<-")?;
        let mut body = vec![self.atom()?];
        while self.eat(",") {
            body.push(self.atom()?);
        }
        Ok(Rule { head: Label::new(&head), vars, body, line: self.line })
    }

    fn atom(&mut self) -> Result<Atom, QueryError> {
        let name = self.ident()?;
        let kind = match self.peek() {
            Some('+') => Some(ClosureKind::Plus),
            Some('*') => Some(ClosureKind::Star),
            _ => None,
        };
        if kind.is_some() {
            self.pos += 1;
        }
        let (src, trg) = self.binary(&name)?;
        let label = Label::new(&name);
        let Some(kind) = kind else {
            return Ok(Atom::Edge { label, src, trg });
        };
        let alias = if self.peek_word().as_deref() == Some("as") {
            self.ident()?;
            self.ident()?
        } else {
            format!("{name}_{}", if kind == ClosureKind::Plus { "plus" } else { "star" })
        };
        Ok(Atom::Closure { label, src, trg, alias: Label::new(&alias), kind })
    }
}

/// Endpoint equalities for every pair of positions sharing a variable,
/// ordered by the later position, and the output positions of the head.
pub fn gen_pred(body: &[Atom], head: (&str, &str)) -> Result<JoinCondition, QueryError> {
    let positions: Vec<(Pos, &str)> = body
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            let (s, t) = a.vars();
            [(Pos::src(i), s), (Pos::trg(i), t)]
        })
        .collect();
    let mut equalities = Vec::new();
    for (j, (q, vq)) in positions.iter().enumerate() {
        for (p, vp) in &positions[..j] {
            if vp == vq {
                equalities.push((*p, *q));
            }
        }
    }
    let first = |v: &str| {
        positions
            .iter()
            .find(|(_, w)| *w == v)
            .map(|(p, _)| *p)
            .ok_or_else(|| QueryError::UnsafeHeadVariable { line: 0, var: v.to_string() })
    };
    Ok(JoinCondition { equalities, output: (first(head.0)?, first(head.1)?) })
}

/// Canonical plan: one window scan per input-label occurrence, one PATH per
/// closure atom, one PATTERN per rule, a UNION per multi-rule head. A
/// single-atom `Answer` rule that keeps its atom's endpoints in order
/// reuses the atom's stream directly.
pub fn to_logical_plan(q: &Sgq, window: WindowSpec) -> Result<SgaExpr, QueryError> {
    validate(q)?;
    let mut memo: BTreeMap<Label, SgaExpr> = BTreeMap::new();
    let mut c = Compiler { q, window, memo: &mut memo };
    c.predicate(q.answer(), true)
}

struct Compiler<'a> {
    q: &'a Sgq,
    window: WindowSpec,
    memo: &'a mut BTreeMap<Label, SgaExpr>,
}

impl Compiler<'_> {
    fn predicate(&mut self, p: Label, root: bool) -> Result<SgaExpr, QueryError> {
        if let Some(e) = self.memo.get(&p) {
            return Ok(e.clone());
        }
        let rules: Vec<&Rule> = self.q.rules.iter().filter(|r| r.head == p).collect();
        let expr = if rules.is_empty() {
            match self.q.closures().get(&p) {
                Some((label, kind)) => {
                    let inner = self.predicate(*label, false)?;
                    let atom = Regex::Label(*label);
                    let regex = match kind {
                        ClosureKind::Plus => Regex::plus(atom),
                        ClosureKind::Star => Regex::star(atom),
                    };
                    SgaExpr::Path { inputs: vec![inner], regex, label: p }
                }
                None => SgaExpr::Wscan {
                    input: Box::new(SgaExpr::Source(p)),
                    size: self.window.size,
                    slide: self.window.slide,
                },
            }
        } else if rules.len() == 1 {
            self.rule(rules[0], root)?
        } else {
            let inputs = rules.iter().map(|r| self.rule(r, false)).collect::<Result<_, _>>()?;
            SgaExpr::Union { inputs, label: Some(p) }
        };
        self.memo.insert(p, expr.clone());
        Ok(expr)
    }

    fn rule(&mut self, r: &Rule, reuse_single: bool) -> Result<SgaExpr, QueryError> {
        let condition = gen_pred(&r.body, (&r.vars.0, &r.vars.1)).map_err(|e| match e {
            QueryError::UnsafeHeadVariable { var, .. } => QueryError::UnsafeHeadVariable { line: r.line, var },
            e => e,
        })?;
        let inputs: Vec<SgaExpr> = r.body.iter().map(|a| self.predicate(a.predicate(), false)).collect::<Result<_, _>>()?;
        if reuse_single && inputs.len() == 1 && condition.is_chain(1) {
            return Ok(inputs.into_iter().next().unwrap());
        }
        Ok(SgaExpr::Pattern { inputs, condition, label: r.head })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Edge { label, src, trg } => write!(f, "{label}({src},{trg})"),
            Atom::Closure { label, src, trg, alias, kind } => {
                let k = if *kind == ClosureKind::Plus { "+" } else { "*" };
                write!(f, "{label}{k}({src},{trg}) as {alias}")
            }
        }
    }
}

impl fmt::Display for Sgq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(w) = self.window {
            writeln!(f, "WINDOW {} SLIDE {}", w.size, w.slide)?;
        }
        for r in &self.rules {
            let body: Vec<String> = r.body.iter().map(|a| a.to_string()).collect();
            writeln!(f, "{}({},{}) <- {}", r.head, r.vars.0, r.vars.1, body.join(", "))?;
        }
        Ok(())
    }
}

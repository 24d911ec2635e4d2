//! Equivalence-preserving plan rewrites and plan-space enumeration.
//!
//! Rules:
//! - WSCAN commutes with FILTER and UNION, in either direction.
//! - `PATH[a|b; d](Sa, Sb)` is `UNION[d](Sa, Sb)`.
//! - `PATH[r1.r2; d]` with no nullable factor is a chain PATTERN over the
//!   factors; factors other than bare labels become nested PATH nodes.
//! - Inside a closure body, a run of labels can be cached as a chain
//!   PATTERN with a fresh label, and a chain PATTERN feeding a PATH can be
//!   folded back into the regex.
//!
//! Fresh labels come from the `$tmpN` namespace, which user queries cannot
//! name.

use std::collections::{BTreeMap, BTreeSet};

use crate::algebra::{render_plan, JoinCondition, SgaExpr};
use crate::model::Label;
use crate::regex::Regex;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WscanDirection {
    /// `W(σ(S))` to `σ(W(S))`, `W(S1 ∪ S2)` to `W(S1) ∪ W(S2)`.
    PushDown,
    /// The reverse.
    PullUp,
}

struct Fresh(usize);

impl Fresh {
    fn for_expr(e: &SgaExpr) -> Fresh {
        let mut next = 0;
        e.walk(&mut |n| {
            for l in node_labels(n) {
                if let Some(k) = l.name().strip_prefix("$tmp").and_then(|s| s.parse::<usize>().ok()) {
                    next = next.max(k + 1);
                }
            }
        });
        Fresh(next)
    }

    fn label(&mut self) -> Label {
        let l = Label::new(&format!("$tmp{}", self.0));
        self.0 += 1;
        l
    }
}

fn node_labels(e: &SgaExpr) -> Vec<Label> {
    match e {
        SgaExpr::Source(l) => vec![*l],
        SgaExpr::Pattern { label, .. } | SgaExpr::Path { label, .. } | SgaExpr::Union { label: Some(label), .. } => {
            vec![*label]
        }
        _ => Vec::new(),
    }
}

/// Apply the WSCAN commutation rule at every node, bottom-up.
pub fn rewrite_wscan(e: &SgaExpr, dir: WscanDirection) -> SgaExpr {
    let mut e = e.clone();
    for c in e.children_mut() {
        *c = rewrite_wscan(c, dir);
    }
    wscan_step(&e, dir).unwrap_or(e)
}

fn wscan_step(e: &SgaExpr, dir: WscanDirection) -> Option<SgaExpr> {
    match (dir, e) {
        (WscanDirection::PushDown, SgaExpr::Wscan { input, size, slide }) => match input.as_ref() {
            SgaExpr::Filter { input: inner, predicate } => Some(SgaExpr::Filter {
                input: Box::new(SgaExpr::Wscan { input: inner.clone(), size: *size, slide: *slide }),
                predicate: predicate.clone(),
            }),
            SgaExpr::Union { inputs, label } => Some(SgaExpr::Union {
                inputs: inputs
                    .iter()
                    .map(|i| SgaExpr::Wscan { input: Box::new(i.clone()), size: *size, slide: *slide })
                    .collect(),
                label: *label,
            }),
            _ => None,
        },
        (WscanDirection::PullUp, SgaExpr::Filter { input, predicate }) => match input.as_ref() {
            SgaExpr::Wscan { input: inner, size, slide } => Some(SgaExpr::Wscan {
                input: Box::new(SgaExpr::Filter { input: inner.clone(), predicate: predicate.clone() }),
                size: *size,
                slide: *slide,
            }),
            _ => None,
        },
        (WscanDirection::PullUp, SgaExpr::Union { inputs, label }) => {
            let mut window = None;
            let mut inner = Vec::with_capacity(inputs.len());
            for i in inputs {
                let SgaExpr::Wscan { input, size, slide } = i else { return None };
                if window.is_some_and(|w| w != (*size, *slide)) {
                    return None;
                }
                window = Some((*size, *slide));
                inner.push(input.as_ref().clone());
            }
            let (size, slide) = window?;
            Some(SgaExpr::Wscan { input: Box::new(SgaExpr::Union { inputs: inner, label: *label }), size, slide })
        }
        _ => None,
    }
}

/// Replace every PATH over an alternation of bare labels by a UNION.
pub fn rewrite_path_alternation(e: &SgaExpr) -> SgaExpr {
    let mut e = e.clone();
    for c in e.children_mut() {
        *c = rewrite_path_alternation(c);
    }
    alternation_step(&e).unwrap_or(e)
}

fn alternation_step(e: &SgaExpr) -> Option<SgaExpr> {
    let SgaExpr::Path { inputs, regex: Regex::Alt(parts), label } = e else { return None };
    let alts: BTreeSet<Label> = parts
        .iter()
        .map(|p| match p {
            Regex::Label(l) => Some(*l),
            _ => None,
        })
        .collect::<Option<_>>()?;
    // Every input must be fully covered by the alternation, or the union
    // would let through labels the path ignores.
    let covered = inputs.iter().all(|i| i.out_labels().iter().all(|l| alts.contains(l)));
    covered.then(|| SgaExpr::Union { inputs: inputs.clone(), label: Some(*label) })
}

/// Split every PATH over a concatenation into a chain PATTERN.
pub fn rewrite_path_concatenation(e: &SgaExpr) -> SgaExpr {
    let mut fresh = Fresh::for_expr(e);
    concat_all(e, &mut fresh)
}

fn concat_all(e: &SgaExpr, fresh: &mut Fresh) -> SgaExpr {
    let mut e = e.clone();
    for c in e.children_mut() {
        *c = concat_all(c, fresh);
    }
    concatenation_step(&e, fresh).unwrap_or(e)
}

/// The single input producing exactly `l`.
fn input_for(inputs: &[SgaExpr], l: Label) -> Option<&SgaExpr> {
    let mut it = inputs.iter().filter(|i| i.out_labels().contains(&l));
    let first = it.next()?;
    (it.next().is_none() && first.out_label() == Some(l)).then_some(first)
}

/// PATH node over `regex`, reading the inputs it needs, ordered by first
/// use in the regex.
fn path_over(inputs: &[SgaExpr], regex: Regex, label: Label) -> Option<SgaExpr> {
    let mut needed = Vec::new();
    for l in regex.labels() {
        let i = input_for(inputs, l)?;
        if !needed.contains(i) {
            needed.push(i.clone());
        }
    }
    Some(SgaExpr::Path { inputs: needed, regex, label })
}

fn concatenation_step(e: &SgaExpr, fresh: &mut Fresh) -> Option<SgaExpr> {
    let SgaExpr::Path { inputs, regex: Regex::Concat(parts), label } = e else { return None };
    if parts.iter().any(Regex::nullable) {
        return None;
    }
    let mut children = Vec::with_capacity(parts.len());
    for p in parts {
        children.push(match p {
            Regex::Label(l) => input_for(inputs, *l)?.clone(),
            other => path_over(inputs, other.clone(), fresh.label())?,
        });
    }
    Some(SgaExpr::Pattern { condition: JoinCondition::chain(children.len()), inputs: children, label: *label })
}

/// Whether `c` is `trg_i = src_{i+1}` for all i with output `(src1, trgN)`,
/// in any equality order.
fn is_chain(c: &JoinCondition, n: usize) -> bool {
    let norm = |c: &JoinCondition| {
        let eqs: BTreeSet<_> = c
            .equalities
            .iter()
            .map(|(a, b)| {
                let (a, b) = ((a.atom, a.end), (b.atom, b.end));
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect();
        (eqs, (c.output.0.atom, c.output.0.end), (c.output.1.atom, c.output.1.end))
    };
    n >= 1 && norm(c) == norm(&JoinCondition::chain(n))
}

/// Inline a chain PATTERN input of a PATH into the PATH's regex.
fn fold_steps(e: &SgaExpr) -> Vec<SgaExpr> {
    let SgaExpr::Path { inputs, regex, label } = e else { return Vec::new() };
    let mut out = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let SgaExpr::Pattern { inputs: parts, condition, label: d } = input else { continue };
        if !is_chain(condition, parts.len()) || !regex.labels().contains(d) {
            continue;
        }
        let Some(part_labels) = parts.iter().map(SgaExpr::out_label).collect::<Option<Vec<_>>>() else { continue };
        let mut others: Vec<SgaExpr> = inputs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, i)| i.clone()).collect();
        for p in parts {
            if !others.contains(p) {
                others.push(p.clone());
            }
        }
        // Each label must still come from exactly one input.
        let mut seen = BTreeSet::new();
        if !others.iter().flat_map(|i| i.out_labels()).all(|l| seen.insert(l)) {
            continue;
        }
        let word = Regex::concat(part_labels.iter().map(|l| Regex::Label(*l)).collect());
        let folded = regex.substitute(&mut |l| if l == *d { word.clone() } else { Regex::Label(l) });
        let folded = flatten(folded);
        if let Some(p) = path_over(&others, folded, *label) {
            out.push(p);
        }
    }
    out
}

/// Merge nested concatenations and alternations.
fn flatten(r: Regex) -> Regex {
    match r {
        Regex::Concat(xs) => Regex::concat(
            xs.into_iter()
                .map(flatten)
                .flat_map(|x| match x {
                    Regex::Concat(inner) => inner,
                    x => vec![x],
                })
                .collect(),
        ),
        Regex::Alt(xs) => Regex::alt(
            xs.into_iter()
                .map(flatten)
                .flat_map(|x| match x {
                    Regex::Alt(inner) => inner,
                    x => vec![x],
                })
                .collect(),
        ),
        Regex::Star(x) => Regex::star(flatten(*x)),
        Regex::Plus(x) => Regex::plus(flatten(*x)),
        Regex::Optional(x) => Regex::optional(flatten(*x)),
        l => l,
    }
}

/// Every regex obtained by replacing one run of two or more bare labels
/// inside a closure body, with the labels of that run.
fn group_runs(r: &Regex, inside: bool, tmp: Label) -> Vec<(Regex, Vec<Label>)> {
    match r {
        Regex::Label(_) => Vec::new(),
        Regex::Star(x) | Regex::Plus(x) | Regex::Optional(x) => {
            let rebuild = |y: Regex| match r {
                Regex::Star(_) => Regex::star(y),
                Regex::Plus(_) => Regex::plus(y),
                _ => Regex::optional(y),
            };
            let closure = !matches!(r, Regex::Optional(_));
            group_runs(x, inside || closure, tmp).into_iter().map(|(y, run)| (rebuild(y), run)).collect()
        }
        Regex::Alt(xs) | Regex::Concat(xs) => {
            let mut out = Vec::new();
            for (i, x) in xs.iter().enumerate() {
                for (y, run) in group_runs(x, inside, tmp) {
                    let mut v = xs.clone();
                    v[i] = y;
                    let whole = if matches!(r, Regex::Alt(_)) { Regex::alt(v) } else { Regex::concat(v) };
                    out.push((whole, run));
                }
            }
            if let (Regex::Concat(_), true) = (r, inside) {
                for i in 0..xs.len() {
                    for j in i + 2..=xs.len() {
                        let Some(run) = xs[i..j]
                            .iter()
                            .map(|x| match x {
                                Regex::Label(l) => Some(*l),
                                _ => None,
                            })
                            .collect::<Option<Vec<_>>>()
                        else {
                            continue;
                        };
                        let mut v = xs[..i].to_vec();
                        v.push(Regex::Label(tmp));
                        v.extend_from_slice(&xs[j..]);
                        out.push((Regex::concat(v), run));
                    }
                }
            }
            out
        }
    }
}

/// Cache a run of labels in a closure body as a chain PATTERN input.
fn group_steps(e: &SgaExpr, fresh: &mut Fresh) -> Vec<SgaExpr> {
    let SgaExpr::Path { inputs, regex, label } = e else { return Vec::new() };
    let tmp = fresh.label();
    let mut out = Vec::new();
    for (grouped, run) in group_runs(regex, false, tmp) {
        let Some(parts) = run.iter().map(|l| input_for(inputs, *l).cloned()).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let pattern = SgaExpr::Pattern { condition: JoinCondition::chain(parts.len()), inputs: parts, label: tmp };
        let mut pool = inputs.clone();
        pool.push(pattern);
        if let Some(p) = path_over(&pool, grouped, *label) {
            out.push(p);
        }
    }
    out
}

/// All plans one rule application away from `e`.
pub fn neighbours(e: &SgaExpr) -> Vec<SgaExpr> {
    let mut fresh = Fresh::for_expr(e);
    neighbours_with(e, &mut fresh)
}

fn neighbours_with(e: &SgaExpr, fresh: &mut Fresh) -> Vec<SgaExpr> {
    let mut out = Vec::new();
    for dir in [WscanDirection::PushDown, WscanDirection::PullUp] {
        out.extend(wscan_step(e, dir));
    }
    out.extend(alternation_step(e));
    out.extend(concatenation_step(e, fresh));
    out.extend(fold_steps(e));
    out.extend(group_steps(e, fresh));
    for (i, c) in e.children().iter().enumerate() {
        for n in neighbours_with(c, fresh) {
            let mut copy = e.clone();
            copy.children_mut()[i] = n;
            out.push(copy);
        }
    }
    out.retain(|p| p.validate().is_ok());
    out
}

/// Rendering with every derived label below the root renamed by order of
/// appearance, so plans differing only in intermediate names coincide.
pub fn canonical_key(e: &SgaExpr) -> String {
    let root = e.out_label();
    let mut names: BTreeMap<Label, Label> = BTreeMap::new();
    e.walk(&mut |n| {
        if matches!(n, SgaExpr::Source(_)) {
            return;
        }
        for l in node_labels(n) {
            if Some(l) != root && !names.contains_key(&l) {
                let k = names.len();
                names.insert(l, Label::new(&format!("$n{k}")));
            }
        }
    });
    render_plan(&rename(e, &names))
}

fn rename(e: &SgaExpr, names: &BTreeMap<Label, Label>) -> SgaExpr {
    let r = |l: &Label| names.get(l).copied().unwrap_or(*l);
    let mut e = match e {
        SgaExpr::Pattern { inputs, condition, label } => {
            SgaExpr::Pattern { inputs: inputs.clone(), condition: condition.clone(), label: r(label) }
        }
        SgaExpr::Path { inputs, regex, label } => SgaExpr::Path {
            inputs: inputs.clone(),
            regex: regex.substitute(&mut |l| Regex::Label(r(&l))),
            label: r(label),
        },
        SgaExpr::Union { inputs, label } => SgaExpr::Union { inputs: inputs.clone(), label: label.as_ref().map(r) },
        other => other.clone(),
    };
    if matches!(e, SgaExpr::Source(_)) {
        return e;
    }
    for c in e.children_mut() {
        *c = rename(c, names);
    }
    e
}

/// Plans reachable from `e` in at most `budget` rule applications,
/// starting with `e`, without duplicates up to intermediate label names.
pub fn enumerate_plans(e: &SgaExpr, budget: usize) -> Vec<SgaExpr> {
    let mut seen = BTreeSet::from([canonical_key(e)]);
    let mut plans = vec![e.clone()];
    let mut frontier = vec![e.clone()];
    for _ in 0..budget {
        let mut next = Vec::new();
        for p in &frontier {
            for n in neighbours(p) {
                if seen.insert(canonical_key(&n)) {
                    plans.push(n.clone());
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    plans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::parse_plan;

    fn p(text: &str) -> SgaExpr {
        parse_plan(text).unwrap()
    }

    const Q4: &str = "PATH[D+; L](PATTERN[trg1=src2 & trg2=src3; src1,trg3; D](\
WSCAN[10,1](S[a]), WSCAN[10,1](S[b]), WSCAN[10,1](S[c])))";

    #[test]
    fn wscan_commutes_with_union() {
        let pulled = p("WSCAN[5,1](UNION[d](S[a], S[b]))");
        let pushed = rewrite_wscan(&pulled, WscanDirection::PushDown);
        assert_eq!(render_plan(&pushed), "UNION[d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]))");
        assert_eq!(rewrite_wscan(&pushed, WscanDirection::PullUp), pulled);
        let mixed = p("UNION[d](WSCAN[5,1](S[a]), WSCAN[6,1](S[b]))");
        assert_eq!(rewrite_wscan(&mixed, WscanDirection::PullUp), mixed);
    }

    #[test]
    fn wscan_commutes_with_filter() {
        let e = p("WSCAN[5,1](FILTER[src!=trg](S[a]))");
        let pushed = rewrite_wscan(&e, WscanDirection::PushDown);
        assert_eq!(render_plan(&pushed), "FILTER[src!=trg](WSCAN[5,1](S[a]))");
        assert_eq!(rewrite_wscan(&pushed, WscanDirection::PullUp), e);
    }

    #[test]
    fn alternation_becomes_union() {
        let e = p("PATH[a|b; d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]))");
        assert_eq!(render_plan(&rewrite_path_alternation(&e)), "UNION[d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]))");
        let partial = p("PATH[a|b; d](WSCAN[5,1](UNION[ab](S[a], S[b])), WSCAN[5,1](S[c]))");
        assert_eq!(rewrite_path_alternation(&partial), partial);
    }

    #[test]
    fn concatenation_becomes_chain() {
        let e = p("PATH[a.b+.c; d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]), WSCAN[5,1](S[c]))");
        assert_eq!(
            render_plan(&rewrite_path_concatenation(&e)),
            "PATTERN[trg1=src2 & trg2=src3; src1,trg3; d](WSCAN[5,1](S[a]), \
PATH[b+; $tmp0](WSCAN[5,1](S[b])), WSCAN[5,1](S[c]))"
        );
        let nullable = p("PATH[a.b*; d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]))");
        assert_eq!(rewrite_path_concatenation(&nullable), nullable);
    }

    #[test]
    fn fold_and_group() {
        let q4 = p(Q4);
        let folded = fold_steps(&q4);
        assert_eq!(folded.len(), 1);
        assert_eq!(render_plan(&folded[0]), "PATH[(a.b.c)+; L](WSCAN[10,1](S[a]), WSCAN[10,1](S[b]), WSCAN[10,1](S[c]))");
        let grouped: BTreeSet<String> = group_steps(&folded[0], &mut Fresh(0)).iter().map(canonical_key).collect();
        assert!(grouped.contains(
            "PATH[(a.$n0)+; L](WSCAN[10,1](S[a]), PATTERN[trg1=src2; src1,trg2; $n0](WSCAN[10,1](S[b]), WSCAN[10,1](S[c])))"
        ));
        assert!(grouped.contains(
            "PATH[($n0.c)+; L](PATTERN[trg1=src2; src1,trg2; $n0](WSCAN[10,1](S[a]), WSCAN[10,1](S[b])), WSCAN[10,1](S[c]))"
        ));
    }

    #[test]
    fn no_grouping_outside_closures() {
        let e = p("PATH[a.b.c; d](WSCAN[5,1](S[a]), WSCAN[5,1](S[b]), WSCAN[5,1](S[c]))");
        assert!(group_steps(&e, &mut Fresh(0)).is_empty());
    }

    #[test]
    fn canonical_key_ignores_temp_names() {
        let a = p("PATH[(a.$tmp0)+; L](WSCAN[1,1](S[a]), PATTERN[trg1=src2; src1,trg2; $tmp0](WSCAN[1,1](S[b]), WSCAN[1,1](S[c])))");
        let b = p("PATH[(a.$tmp7)+; L](WSCAN[1,1](S[a]), PATTERN[trg1=src2; src1,trg2; $tmp7](WSCAN[1,1](S[b]), WSCAN[1,1](S[c])))");
        assert_eq!(canonical_key(&a), canonical_key(&b));
        assert_ne!(canonical_key(&a), canonical_key(&p(Q4)));
    }

    #[test]
    fn enumeration_is_bounded_and_valid() {
        let q4 = p(Q4);
        assert_eq!(enumerate_plans(&q4, 0), vec![q4.clone()]);
        let plans = enumerate_plans(&q4, 3);
        assert_eq!(plans[0], q4);
        let keys: BTreeSet<String> = plans.iter().map(canonical_key).collect();
        assert_eq!(keys.len(), plans.len());
        assert!(plans.iter().all(|e| e.validate().is_ok()));
        assert!(plans.len() >= 4);
        assert!(enumerate_plans(&q4, 1).len() <= plans.len());
    }

    #[test]
    fn fresh_labels_avoid_existing_ones() {
        let e = p("PATH[($tmp3.c)+; L](PATTERN[trg1=src2; src1,trg2; $tmp3](WSCAN[1,1](S[a]), WSCAN[1,1](S[b])), WSCAN[1,1](S[c]))");
        assert_eq!(Fresh::for_expr(&e).label(), Label::new("$tmp4"));
    }
}

//! Regex to DFA: Thompson construction, subset construction, Hopcroft
//! minimization, then a start-state split so that the start state has no
//! incoming transitions.
//!
//! The split matters to path evaluation: tree roots are `(x, s0)` and a
//! path that re-enters `s0` at `x` would otherwise collide with the root.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rustc_hash::FxHashMap;

use crate::model::Label;
use crate::regex::Regex;

pub type StateId = u32;

#[derive(Clone, Debug)]
pub struct Dfa {
    alphabet: Vec<Label>,
    label_index: FxHashMap<Label, usize>,
    /// `trans[state][label index]`
    trans: Vec<Vec<Option<StateId>>>,
    accepting: Vec<bool>,
    by_label: Vec<Vec<(StateId, StateId)>>,
    /// `reverse[state][label index]`: states with a transition into `state`.
    reverse: Vec<Vec<Vec<StateId>>>,
}

pub fn build_dfa(regex: &Regex) -> Dfa {
    Dfa::from_regex(regex)
}

impl Dfa {
    pub const START: StateId = 0;

    pub fn from_regex(regex: &Regex) -> Dfa {
        let mut alphabet = regex.labels();
        alphabet.sort_by(|a, b| a.cmp_by_name(*b));
        let index: FxHashMap<Label, usize> = alphabet.iter().enumerate().map(|(i, l)| (*l, i)).collect();

        let mut nfa = Nfa::default();
        let (start, end) = nfa.fragment(regex, &index);
        let (trans, accepting) = nfa.determinize(start, end, alphabet.len());
        let (trans, accepting) = minimize(&trans, &accepting);
        let (trans, accepting) = isolate_start(trans, accepting);
        let (trans, accepting) = canonical_order(&trans, &accepting);
        Dfa::assemble(alphabet, trans, accepting)
    }

    fn assemble(alphabet: Vec<Label>, trans: Vec<Vec<Option<StateId>>>, accepting: Vec<bool>) -> Dfa {
        let k = alphabet.len();
        let n = trans.len();
        let mut by_label = vec![Vec::new(); k];
        let mut reverse = vec![vec![Vec::new(); k]; n];
        for (s, row) in trans.iter().enumerate() {
            for (li, t) in row.iter().enumerate() {
                if let Some(t) = *t {
                    by_label[li].push((s as StateId, t));
                    reverse[t as usize][li].push(s as StateId);
                }
            }
        }
        let label_index = alphabet.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        Dfa { alphabet, label_index, trans, accepting, by_label, reverse }
    }

    pub fn start(&self) -> StateId {
        Self::START
    }

    pub fn num_states(&self) -> usize {
        self.trans.len()
    }

    pub fn alphabet(&self) -> &[Label] {
        &self.alphabet
    }

    pub fn in_alphabet(&self, l: Label) -> bool {
        self.label_index.contains_key(&l)
    }

    fn check_state(&self, s: StateId) {
        assert!((s as usize) < self.trans.len(), "state {s} is not a state of this automaton");
    }

    pub fn is_accepting(&self, s: StateId) -> bool {
        self.check_state(s);
        self.accepting[s as usize]
    }

    pub fn accepting_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.trans.len() as StateId).filter(|s| self.accepting[*s as usize])
    }

    /// Transition target, absent for labels outside the alphabet.
    ///
    /// # Panics
    /// If `s` is not a state of this automaton.
    pub fn delta(&self, s: StateId, l: Label) -> Option<StateId> {
        self.check_state(s);
        let li = *self.label_index.get(&l)?;
        self.trans[s as usize][li]
    }

    pub fn delta_star(&self, s: StateId, word: &[Label]) -> Option<StateId> {
        word.iter().try_fold(s, |s, l| self.delta(s, *l))
    }

    pub fn accepts(&self, word: &[Label]) -> bool {
        self.delta_star(Self::START, word).is_some_and(|s| self.accepting[s as usize])
    }

    /// All `(s, t)` with `delta(s, l) = t`.
    pub fn transitions_on(&self, l: Label) -> &[(StateId, StateId)] {
        match self.label_index.get(&l) {
            Some(&li) => &self.by_label[li],
            None => &[],
        }
    }

    /// States `s` with `delta(s, l) = t`.
    pub fn predecessors(&self, t: StateId, l: Label) -> &[StateId] {
        self.check_state(t);
        match self.label_index.get(&l) {
            Some(&li) => &self.reverse[t as usize][li],
            None => &[],
        }
    }
}

#[derive(Default)]
struct Nfa {
    eps: Vec<Vec<usize>>,
    moves: Vec<Vec<(usize, usize)>>,
}

impl Nfa {
    fn state(&mut self) -> usize {
        self.eps.push(Vec::new());
        self.moves.push(Vec::new());
        self.eps.len() - 1
    }

    fn fragment(&mut self, r: &Regex, index: &FxHashMap<Label, usize>) -> (usize, usize) {
        match r {
            Regex::Label(l) => {
                let (s, e) = (self.state(), self.state());
                self.moves[s].push((index[l], e));
                (s, e)
            }
            Regex::Concat(xs) => {
                let (s, mut end) = {
                    let s = self.state();
                    (s, s)
                };
                for x in xs {
                    let (fs, fe) = self.fragment(x, index);
                    self.eps[end].push(fs);
                    end = fe;
                }
                (s, end)
            }
            Regex::Alt(xs) => {
                let (s, e) = (self.state(), self.state());
                for x in xs {
                    let (fs, fe) = self.fragment(x, index);
                    self.eps[s].push(fs);
                    self.eps[fe].push(e);
                }
                (s, e)
            }
            Regex::Star(x) => {
                let (s, e) = (self.state(), self.state());
                let (fs, fe) = self.fragment(x, index);
                self.eps[s].extend([fs, e]);
                self.eps[fe].extend([fs, e]);
                (s, e)
            }
            // x+ is x.x*
            Regex::Plus(x) => {
                let (as_, ae) = self.fragment(x, index);
                let (ss, se) = self.fragment(&Regex::Star(x.clone()), index);
                self.eps[ae].push(ss);
                (as_, se)
            }
            Regex::Optional(x) => {
                let (s, e) = (self.state(), self.state());
                let (fs, fe) = self.fragment(x, index);
                self.eps[s].extend([fs, e]);
                self.eps[fe].push(e);
                (s, e)
            }
        }
    }

    fn closure(&self, seed: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        let mut set = BTreeSet::new();
        let mut stack: Vec<usize> = seed.into_iter().collect();
        while let Some(q) = stack.pop() {
            if set.insert(q) {
                stack.extend(self.eps[q].iter().copied());
            }
        }
        set
    }

    /// Subset construction. Returns a complete DFA (state 0 is the start;
    /// the empty subset acts as the sink).
    fn determinize(&self, start: usize, accept: usize, k: usize) -> (Vec<Vec<Option<StateId>>>, Vec<bool>) {
        let mut ids: BTreeMap<BTreeSet<usize>, StateId> = BTreeMap::new();
        let mut sets: Vec<BTreeSet<usize>> = Vec::new();
        let mut trans: Vec<Vec<Option<StateId>>> = Vec::new();
        let first = self.closure([start]);
        ids.insert(first.clone(), 0);
        sets.push(first);
        let mut i = 0;
        while i < sets.len() {
            let mut row = vec![None; k];
            for (li, slot) in row.iter_mut().enumerate() {
                let targets = sets[i]
                    .iter()
                    .flat_map(|q| self.moves[*q].iter().filter(|(l, _)| *l == li).map(|(_, t)| *t));
                let next = self.closure(targets);
                let id = match ids.get(&next) {
                    Some(id) => *id,
                    None => {
                        let id = sets.len() as StateId;
                        ids.insert(next.clone(), id);
                        sets.push(next);
                        id
                    }
                };
                *slot = Some(id);
            }
            trans.push(row);
            i += 1;
        }
        let accepting = sets.iter().map(|s| s.contains(&accept)).collect();
        (trans, accepting)
    }
}

/// Hopcroft partition refinement over a complete DFA, followed by removal
/// of the dead block. The result is partial.
fn minimize(trans: &[Vec<Option<StateId>>], accepting: &[bool]) -> (Vec<Vec<Option<StateId>>>, Vec<bool>) {
    let n = trans.len();
    let k = trans.first().map_or(0, Vec::len);
    let mut inverse = vec![vec![Vec::new(); k]; n];
    for (s, row) in trans.iter().enumerate() {
        for (li, t) in row.iter().enumerate() {
            inverse[t.expect("complete automaton") as usize][li].push(s);
        }
    }

    let mut block_of = vec![0usize; n];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let (acc, rej): (Vec<usize>, Vec<usize>) = (0..n).partition(|s| accepting[*s]);
    for b in [acc, rej] {
        if !b.is_empty() {
            for s in &b {
                block_of[*s] = blocks.len();
            }
            blocks.push(b);
        }
    }
    let mut pending: Vec<bool> = vec![true; blocks.len()];
    let mut work: Vec<usize> = (0..blocks.len()).collect();

    while let Some(a) = work.pop() {
        pending[a] = false;
        let splitter = blocks[a].clone();
        for li in 0..k {
            let mut x = vec![false; n];
            for &t in &splitter {
                for &s in &inverse[t][li] {
                    x[s] = true;
                }
            }
            let touched: BTreeSet<usize> = (0..n).filter(|s| x[*s]).map(|s| block_of[s]).collect();
            for y in touched {
                let (inside, outside): (Vec<usize>, Vec<usize>) = blocks[y].iter().partition(|s| x[**s]);
                if outside.is_empty() {
                    continue;
                }
                let new = blocks.len();
                let (keep, moved) = if inside.len() <= outside.len() { (outside, inside) } else { (inside, outside) };
                for s in &moved {
                    block_of[*s] = new;
                }
                blocks[y] = keep;
                blocks.push(moved);
                // If y is still pending both halves are now queued;
                // otherwise queuing the smaller half is enough.
                pending.push(true);
                work.push(new);
            }
        }
    }

    // Quotient automaton.
    let qb = blocks.len();
    let mut qtrans = vec![vec![None; k]; qb];
    let mut qacc = vec![false; qb];
    for (b, members) in blocks.iter().enumerate() {
        let rep = members[0];
        qacc[b] = accepting[rep];
        for li in 0..k {
            qtrans[b][li] = trans[rep][li].map(|t| block_of[t as usize] as StateId);
        }
    }
    let start = block_of[0];

    // Drop blocks that cannot reach acceptance and blocks unreachable from
    // the start.
    let mut live = qacc.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..qb {
            if !live[b] && qtrans[b].iter().flatten().any(|t| live[*t as usize]) {
                live[b] = true;
                changed = true;
            }
        }
    }
    let mut order = Vec::new();
    let mut seen = vec![false; qb];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for t in qtrans[b].iter().flatten() {
            let t = *t as usize;
            if live[t] && !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    let mut renum = vec![None; qb];
    for (i, b) in order.iter().enumerate() {
        renum[*b] = Some(i as StateId);
    }
    let trans = order
        .iter()
        .map(|b| qtrans[*b].iter().map(|t| t.and_then(|t| renum[t as usize])).collect())
        .collect();
    let accepting = order.iter().map(|b| qacc[*b]).collect();
    (trans, accepting)
}

fn isolate_start(mut trans: Vec<Vec<Option<StateId>>>, mut accepting: Vec<bool>) -> (Vec<Vec<Option<StateId>>>, Vec<bool>) {
    let reentered = trans.iter().flatten().any(|t| *t == Some(0));
    if !reentered {
        return (trans, accepting);
    }
    let fresh = trans.len() as StateId;
    let row = trans[0].clone();
    trans.push(row);
    accepting.push(accepting[0]);
    // Swap roles: the fresh copy becomes state 0.
    let n = trans.len();
    let swap = |s: StateId| -> StateId {
        if s == 0 {
            fresh
        } else if s == fresh {
            0
        } else {
            s
        }
    };
    let mut out = vec![Vec::new(); n];
    let mut acc = vec![false; n];
    for (s, row) in trans.iter().enumerate() {
        let s2 = swap(s as StateId) as usize;
        out[s2] = row.iter().map(|t| t.map(swap)).collect();
        acc[s2] = accepting[s];
    }
    (out, acc)
}

/// Breadth-first renumbering from the start state, labels in name order.
fn canonical_order(trans: &[Vec<Option<StateId>>], accepting: &[bool]) -> (Vec<Vec<Option<StateId>>>, Vec<bool>) {
    let n = trans.len();
    let mut renum: Vec<Option<StateId>> = vec![None; n];
    let mut order = Vec::with_capacity(n);
    if n > 0 {
        renum[0] = Some(0);
        order.push(0usize);
    }
    let mut i = 0;
    while i < order.len() {
        for t in trans[order[i]].iter().flatten() {
            if renum[*t as usize].is_none() {
                renum[*t as usize] = Some(order.len() as StateId);
                order.push(*t as usize);
            }
        }
        i += 1;
    }
    let trans = order
        .iter()
        .map(|s| trans[*s].iter().map(|t| t.and_then(|t| renum[t as usize])).collect())
        .collect();
    let accepting = order.iter().map(|s| accepting[*s]).collect();
    (trans, accepting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regex::parse_regex;

    fn dfa(text: &str) -> Dfa {
        build_dfa(&parse_regex(text).unwrap())
    }

    fn word(s: &str) -> Vec<Label> {
        s.chars().map(|c| Label::new(&c.to_string())).collect()
    }

    #[test]
    fn a_plus_is_two_states() {
        let d = dfa("a+");
        let a = Label::new("a");
        assert_eq!(d.num_states(), 2);
        assert_eq!(d.delta(0, a), Some(1));
        assert_eq!(d.delta(1, a), Some(1));
        assert!(!d.is_accepting(0));
        assert!(d.is_accepting(1));
        assert_eq!(d.delta(1, Label::new("b")), None);
        assert_eq!(d.delta_star(0, &word("aa")), Some(1));
        assert_eq!(d.delta_star(1, &[]), Some(1));
    }

    #[test]
    fn abc_plus_has_four_states() {
        let d = dfa("(a.b.c)+");
        assert_eq!(d.num_states(), 4);
        assert!(d.accepts(&word("abc")));
        assert!(d.accepts(&word("abcabc")));
        assert!(!d.accepts(&word("ab")));
        assert!(!d.accepts(&[]));
    }

    #[test]
    fn alternation() {
        let d = dfa("a|b");
        assert!(d.accepts(&word("a")));
        assert!(d.accepts(&word("b")));
        assert!(!d.accepts(&word("ab")));
        assert!(!d.accepts(&word("c")));
    }

    #[test]
    fn start_never_reentered() {
        for text in ["(a.b)*", "a*", "(a|b)+", "a.(b.a)*"] {
            let d = dfa(text);
            for l in d.alphabet() {
                assert!(d.transitions_on(*l).iter().all(|(_, t)| *t != 0), "{text}");
            }
        }
        let d = dfa("(a.b)*");
        assert!(d.accepts(&[]));
        assert!(d.accepts(&word("abab")));
        assert!(!d.accepts(&word("aba")));
    }

    #[test]
    fn reverse_transitions_mirror_forward() {
        let d = dfa("a.b*.c*");
        for l in d.alphabet() {
            for (s, t) in d.transitions_on(*l) {
                assert!(d.predecessors(*t, *l).contains(s));
            }
        }
    }

    #[test]
    #[should_panic]
    fn unknown_state_panics() {
        dfa("a").delta(7, Label::new("a"));
    }
}

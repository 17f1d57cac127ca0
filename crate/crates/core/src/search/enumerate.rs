//! Best-first enumeration of programs from a typed unigram grammar.
//!
//! Heap search keeps, for each type, a priority queue of frontier programs
//! and the list of programs already emitted in order. Popping a program
//! `f(a1..ak)` pushes the k programs obtained by replacing one argument with
//! its successor among programs of that argument's type. Because a
//! program's probability is the product of its productions' probabilities,
//! this yields every program exactly once in non-increasing probability.
//! Ties are broken by the lexicographic order of the printed program.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::rc::Rc;

use crate::dsl::{Expr, Library, Type, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct Production {
    pub name: String,
    pub args: Vec<Type>,
    pub ret: Type,
    /// Log-probability given the requested type.
    pub logp: f64,
}

/// Productions indexed by primitive id.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    productions: Vec<Production>,
}

impl Grammar {
    /// Takes productions as given; `logp` is not renormalised.
    pub fn new(productions: Vec<Production>) -> Self {
        Grammar { productions }
    }

    /// Normalises `weights` (log-space, one per primitive) separately over
    /// the primitives returning each type.
    pub fn from_weights(lib: &Library, weights: &[f64]) -> Self {
        let mut norm = [f64::NEG_INFINITY; 2];
        for t in Type::ALL {
            let ws: Vec<f64> = lib
                .primitives()
                .iter()
                .zip(weights)
                .filter(|(p, _)| p.ret == t)
                .map(|(_, &w)| w)
                .collect();
            norm[t.index()] = log_sum_exp(&ws);
        }
        let productions = lib
            .primitives()
            .iter()
            .zip(weights)
            .map(|(p, &w)| Production {
                name: p.name.clone(),
                args: p.arg_types.clone(),
                ret: p.ret,
                logp: w - norm[p.ret.index()],
            })
            .collect();
        Grammar { productions }
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    /// Log-probability of a closed expression. Contributions are summed in
    /// primitive order from occurrence counts, so expressions built from the
    /// same multiset of productions score bit-identically.
    pub fn logp(&self, expr: &Expr) -> f64 {
        let mut counts = vec![0usize; self.productions.len()];
        expr.count_primitives(&mut counts);
        counts
            .iter()
            .zip(&self.productions)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, p)| c as f64 * p.logp)
            .sum()
    }
}

impl Vocabulary for Grammar {
    fn name(&self, prim: usize) -> &str {
        self.productions.get(prim).map_or("?", |p| p.name.as_str())
    }
}

pub(crate) fn log_sum_exp(ws: &[f64]) -> f64 {
    let max = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + ws.iter().map(|w| (w - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug)]
struct Entry {
    logp: f64,
    text: String,
    expr: Rc<Expr>,
}

impl Entry {
    fn new(grammar: &Grammar, expr: Expr) -> Self {
        Entry {
            logp: grammar.logp(&expr),
            text: expr.to_sexpr(grammar),
            expr: Rc::new(expr),
        }
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Greater means "comes first": more probable, then lexicographically
    /// smaller.
    fn cmp(&self, other: &Self) -> Ordering {
        self.logp
            .total_cmp(&other.logp)
            .then_with(|| other.text.cmp(&self.text))
    }
}

#[derive(Default)]
struct TypeState {
    heap: BinaryHeap<Entry>,
    pushed: HashSet<Rc<Expr>>,
    order: Vec<Entry>,
    position: HashMap<Rc<Expr>, usize>,
}

/// Lazily enumerates programs of one type in non-increasing probability.
pub struct HeapSearch<'g> {
    grammar: &'g Grammar,
    root: Type,
    states: Vec<TypeState>,
    emitted: usize,
}

impl<'g> HeapSearch<'g> {
    pub fn new(grammar: &'g Grammar, root: Type) -> Self {
        let mut search = HeapSearch {
            grammar,
            root,
            states: Type::ALL.iter().map(|_| TypeState::default()).collect(),
            emitted: 0,
        };
        let best = search.most_likely();
        for (prim, p) in grammar.productions.iter().enumerate() {
            let args: Option<Vec<Expr>> = p
                .args
                .iter()
                .map(|t| best[t.index()].as_ref().map(|e| (*e.expr).clone()))
                .collect();
            if let Some(args) = args {
                search.push(p.ret, Expr::app(prim, args));
            }
        }
        search
    }

    /// Most likely program of each type, by fixpoint iteration.
    fn most_likely(&self) -> Vec<Option<Entry>> {
        let mut best: Vec<Option<Entry>> = vec![None; Type::ALL.len()];
        loop {
            let mut changed = false;
            for (prim, p) in self.grammar.productions.iter().enumerate() {
                let args: Option<Vec<Expr>> = p
                    .args
                    .iter()
                    .map(|t| best[t.index()].as_ref().map(|e| (*e.expr).clone()))
                    .collect();
                let Some(args) = args else { continue };
                let cand = Entry::new(self.grammar, Expr::app(prim, args));
                let slot = &mut best[p.ret.index()];
                if slot.as_ref().is_none_or(|b| cand > *b) {
                    *slot = Some(cand);
                    changed = true;
                }
            }
            if !changed {
                return best;
            }
        }
    }

    fn push(&mut self, t: Type, expr: Expr) {
        let state = &mut self.states[t.index()];
        if state.pushed.contains(&expr) {
            return;
        }
        let entry = Entry::new(self.grammar, expr);
        state.pushed.insert(entry.expr.clone());
        state.heap.push(entry);
    }

    /// Makes sure the `k`-th program of type `t` has been produced.
    fn ensure(&mut self, t: Type, k: usize) -> Option<Entry> {
        while self.states[t.index()].order.len() <= k {
            if !self.pop(t) {
                return None;
            }
        }
        Some(self.states[t.index()].order[k].clone())
    }

    fn pop(&mut self, t: Type) -> bool {
        let Some(entry) = self.states[t.index()].heap.pop() else {
            return false;
        };
        let state = &mut self.states[t.index()];
        state.position.insert(entry.expr.clone(), state.order.len());
        state.order.push(entry.clone());
        let Expr::App { prim, args } = &*entry.expr else {
            unreachable!("enumerated programs are closed")
        };
        let arg_types = self.grammar.productions[*prim].args.clone();
        for (i, at) in arg_types.into_iter().enumerate() {
            if let Some(next) = self.successor(at, &args[i]) {
                let mut new_args = args.clone();
                new_args[i] = (*next.expr).clone();
                self.push(t, Expr::app(*prim, new_args));
            }
        }
        true
    }

    fn successor(&mut self, t: Type, expr: &Expr) -> Option<Entry> {
        if self.states[t.index()].order.is_empty() {
            self.ensure(t, 0);
        }
        let pos = *self.states[t.index()]
            .position
            .get(expr)
            .expect("arguments of frontier programs have been emitted");
        self.ensure(t, pos + 1)
    }
}

impl Iterator for HeapSearch<'_> {
    /// A program and its log-probability.
    type Item = (Expr, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.ensure(self.root, self.emitted)?;
        self.emitted += 1;
        Some(((*entry.expr).clone(), entry.logp))
    }
}

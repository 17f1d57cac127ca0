//! Generators and brute-force reference implementations shared by the
//! integration tests. Nothing here calls the code under test except to build
//! inputs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use gssnn_core::dsl::{Expr, Library, Program, Type};
use gssnn_core::graph::{ElementKind, FeatureGraph, GraphBuilder};
use rand::seq::SliceRandom;
use rand::Rng;

// ---------------------------------------------------------------- graphs

/// Random connected multigraph: a random spanning tree plus extra edges
/// (parallel edges allowed, self-edges never).
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize, max_extra: usize) -> FeatureGraph {
    let n = rng.gen_range(1..=max_nodes);
    let extra = if n > 1 {
        rng.gen_range(0..=max_extra)
    } else {
        0
    };
    random_graph_exact(rng, n, extra)
}

/// Random connected multigraph with `n` nodes and `n - 1 + extra` edges.
pub fn random_graph_exact<R: Rng>(rng: &mut R, n: usize, extra: usize) -> FeatureGraph {
    let extra = if n > 1 { extra } else { 0 };
    let mut pairs = Vec::new();
    for v in 1..n {
        pairs.push((rng.gen_range(0..v), v));
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        pairs.push((a, b));
    }
    build(n, &pairs)
}

/// Builds a graph with nodes first, then edges in the given order.
pub fn build(n: usize, pairs: &[(usize, usize)]) -> FeatureGraph {
    let mut b = GraphBuilder::new();
    let ids: Vec<usize> = (0..n).map(|_| b.add_node()).collect();
    for &(u, v) in pairs {
        b.add_edge(ids[u], ids[v]).unwrap();
    }
    b.finish().unwrap()
}

/// Node-index edge list of `g` (nodes numbered by creation order).
pub fn edge_pairs(g: &FeatureGraph) -> (usize, Vec<(usize, usize)>) {
    let index: BTreeMap<usize, usize> = g.nodes().enumerate().map(|(i, n)| (n.id, i)).collect();
    let pairs = g
        .edges()
        .map(|e| match e.kind {
            ElementKind::Edge { u, v } => (index[&u], index[&v]),
            ElementKind::Node => unreachable!(),
        })
        .collect();
    (g.node_count(), pairs)
}

/// The same multigraph with nodes renumbered and edges shuffled, so ids and
/// ranks generally change.
pub fn relabel<R: Rng>(rng: &mut R, g: &FeatureGraph) -> FeatureGraph {
    let (n, mut pairs) = edge_pairs(g);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    pairs.shuffle(rng);
    let pairs: Vec<(usize, usize)> = pairs
        .into_iter()
        .map(|(u, v)| {
            if rng.gen() {
                (perm[u], perm[v])
            } else {
                (perm[v], perm[u])
            }
        })
        .collect();
    build(n, &pairs)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn multiplicity_matrix(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n]; n];
    for &(u, v) in pairs {
        m[u][v] += 1;
        m[v][u] += 1;
    }
    m
}

/// Tries every node bijection.
pub fn brute_force_structure(g1: &FeatureGraph, g2: &FeatureGraph) -> bool {
    let (n1, p1) = edge_pairs(g1);
    let (n2, p2) = edge_pairs(g2);
    if n1 != n2 || p1.len() != p2.len() {
        return false;
    }
    let a = multiplicity_matrix(n1, &p1);
    let b = multiplicity_matrix(n2, &p2);
    permutations(n1)
        .iter()
        .any(|pi| (0..n1).all(|u| (0..n1).all(|v| a[u][v] == b[pi[u]][pi[v]])))
}

/// Tries every node bijection that keeps node ids, requiring edges to map
/// onto edges with the same id and rank.
pub fn brute_force_featured(g1: &FeatureGraph, g2: &FeatureGraph) -> bool {
    let (n1, _) = edge_pairs(g1);
    let (n2, _) = edge_pairs(g2);
    if n1 != n2 || g1.len() != g2.len() {
        return false;
    }
    let ids1: Vec<usize> = g1.nodes().map(|n| n.id).collect();
    let ids2: Vec<usize> = g2.nodes().map(|n| n.id).collect();
    let edges = |g: &FeatureGraph, pi: &dyn Fn(usize) -> usize| {
        let mut out: Vec<(usize, usize, usize, usize)> = g
            .edges()
            .map(|e| match e.kind {
                ElementKind::Edge { u, v } => {
                    let (a, b) = (pi(u), pi(v));
                    (e.id, e.rank, a.min(b), a.max(b))
                }
                ElementKind::Node => unreachable!(),
            })
            .collect();
        out.sort_unstable();
        out
    };
    let target = edges(g2, &|x| x);
    permutations(n1).iter().any(|pi| {
        let map = |id: usize| ids2[pi[ids1.iter().position(|&x| x == id).unwrap()]];
        ids1.iter().all(|&id| map(id) == id) && edges(g1, &map) == target
    })
}

// -------------------------------------------------------------- programs

/// Random well-typed expression over `lib` with at most `budget` primitives.
pub fn random_expr<R: Rng>(rng: &mut R, lib: &Library, ret: Type, budget: usize) -> Expr {
    let fitting: Vec<usize> = lib
        .primitives()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.ret == ret && p.arg_types.len() < budget.max(1))
        .map(|(i, _)| i)
        .collect();
    let leaves: Vec<usize> = fitting
        .iter()
        .copied()
        .filter(|&i| lib.primitives()[i].arg_types.is_empty())
        .collect();
    let pick = if budget <= 1 || rng.gen_bool(0.3) {
        *leaves.choose(rng).unwrap()
    } else {
        *fitting.choose(rng).unwrap()
    };
    let arg_types = lib.primitives()[pick].arg_types.clone();
    let mut left = budget.saturating_sub(1);
    let mut args = Vec::new();
    for (k, t) in arg_types.iter().enumerate() {
        let rest = arg_types.len() - k - 1;
        let share = left.saturating_sub(rest).max(1);
        let take = rng.gen_range(1..=share);
        let a = random_expr(rng, lib, *t, take);
        left = left.saturating_sub(a.size());
        args.push(a);
    }
    Expr::app(pick, args)
}

pub fn random_program<R: Rng>(rng: &mut R, lib: &Library, budget: usize) -> Program {
    Program::new(random_expr(rng, lib, Type::Graph, budget), lib).unwrap()
}

/// Programs that share structure: random motifs glued with `compose`.
pub fn random_corpus<R: Rng>(
    rng: &mut R,
    lib: &Library,
    max_programs: usize,
    max_size: usize,
) -> Vec<Program> {
    let compose = lib.expect_id("compose");
    let motifs: Vec<Expr> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let size = rng.gen_range(2..=5);
            random_expr(rng, lib, Type::Graph, size)
        })
        .collect();
    let n = rng.gen_range(1..=max_programs);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.25) {
                return random_program(rng, lib, max_size);
            }
            let mut e = motifs.choose(rng).unwrap().clone();
            while e.size() < max_size {
                let next = if rng.gen_bool(0.6) {
                    motifs.choose(rng).unwrap().clone()
                } else {
                    random_expr(rng, lib, Type::Graph, 3)
                };
                if e.size() + next.size() + 1 > max_size {
                    break;
                }
                e = if rng.gen() {
                    Expr::app(compose, vec![e, next])
                } else {
                    Expr::app(compose, vec![next, e])
                };
                if rng.gen_bool(0.3) {
                    break;
                }
            }
            Program::new(e, lib).unwrap()
        })
        .collect()
}

// ------------------------------------------------------------ compression

/// Primitive count (holes are free).
pub fn prims(e: &Expr) -> usize {
    match e {
        Expr::Hole(_) => 0,
        Expr::App { args, .. } => 1 + args.iter().map(prims).sum::<usize>(),
    }
}

fn bind<'e>(pat: &Expr, e: &'e Expr, out: &mut BTreeMap<usize, &'e Expr>) -> bool {
    match (pat, e) {
        (Expr::Hole(h), _) => match out.get(h) {
            Some(prev) => *prev == e,
            None => {
                out.insert(*h, e);
                true
            }
        },
        (Expr::App { prim: p, args: pa }, Expr::App { prim: q, args: qa }) => {
            p == q && pa.len() == qa.len() && pa.iter().zip(qa).all(|(x, y)| bind(x, y, out))
        }
        _ => false,
    }
}

/// Leftmost-outermost rewriting with a marker primitive id for the call.
pub fn oracle_rewrite(e: &Expr, pat: &Expr, call: usize) -> Expr {
    let mut b = BTreeMap::new();
    if bind(pat, e, &mut b) {
        let args = b.values().map(|a| oracle_rewrite(a, pat, call)).collect();
        return Expr::app(call, args);
    }
    match e {
        Expr::App { prim, args } => Expr::app(
            *prim,
            args.iter().map(|a| oracle_rewrite(a, pat, call)).collect(),
        ),
        Expr::Hole(_) => e.clone(),
    }
}

pub fn oracle_utility(corpus: &[Expr], pat: &Expr) -> i64 {
    let before: usize = corpus.iter().map(prims).sum();
    let after: usize = corpus
        .iter()
        .map(|e| prims(&oracle_rewrite(e, pat, usize::MAX)))
        .sum();
    before as i64 - after as i64 - prims(pat) as i64
}

fn paths(e: &Expr, here: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(here.clone());
    for (i, a) in e.args().iter().enumerate() {
        here.push(i);
        paths(a, here, out);
        here.pop();
    }
}

fn cut(e: &Expr, at: &[Vec<usize>], here: &mut Vec<usize>, next: &mut usize) -> Expr {
    if at.contains(here) {
        *next += 1;
        return Expr::Hole(*next - 1);
    }
    match e {
        Expr::App { prim, args } => {
            let mut out = Vec::new();
            for (i, a) in args.iter().enumerate() {
                here.push(i);
                out.push(cut(a, at, here, next));
                here.pop();
            }
            Expr::app(*prim, out)
        }
        Expr::Hole(_) => e.clone(),
    }
}

/// Every pattern with at most `max_holes` linear holes that matches some
/// corpus subtree and has at least two primitives.
pub fn all_patterns(corpus: &[Expr], max_holes: usize) -> Vec<Expr> {
    let mut seen = std::collections::BTreeSet::new();
    let mut stack: Vec<&Expr> = corpus.iter().collect();
    while let Some(s) = stack.pop() {
        stack.extend(s.args());
        let mut ps = Vec::new();
        paths(s, &mut Vec::new(), &mut ps);
        let inner = &ps[1..];
        let mut choices: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
        for k in 1..=max_holes {
            let mut next = Vec::new();
            for c in choices.iter().filter(|c| c.len() == k - 1) {
                let start = c
                    .last()
                    .map_or(0, |l| inner.iter().position(|p| p == l).unwrap() + 1);
                for p in &inner[start..] {
                    let disjoint = c.iter().all(|q| !p.starts_with(q) && !q.starts_with(p));
                    if disjoint {
                        let mut d = c.clone();
                        d.push(p.clone());
                        next.push(d);
                    }
                }
            }
            choices.extend(next);
        }
        for c in choices {
            let pat = cut(s, &c, &mut Vec::new(), &mut 0);
            if prims(&pat) >= 2 {
                seen.insert(pat);
            }
        }
    }
    seen.into_iter().collect()
}

/// Highest positive utility over all patterns.
pub fn oracle_best(corpus: &[Expr], max_holes: usize) -> Option<i64> {
    all_patterns(corpus, max_holes)
        .iter()
        .map(|p| oracle_utility(corpus, p))
        .filter(|&u| u > 0)
        .max()
}

// ----------------------------------------------------------- heap search

/// Tiny tree type for exhaustive enumeration, independent of `Expr`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tree {
    pub head: usize,
    pub kids: Vec<Tree>,
}

impl Tree {
    pub fn print(&self, names: &[&str]) -> String {
        if self.kids.is_empty() {
            names[self.head].to_string()
        } else {
            let kids: Vec<String> = self.kids.iter().map(|k| k.print(names)).collect();
            format!("({} {})", names[self.head], kids.join(" "))
        }
    }

    pub fn counts(&self, out: &mut [u32]) {
        out[self.head] += 1;
        for k in &self.kids {
            k.counts(out);
        }
    }
}

/// Every tree with exactly `size` nodes, for productions of the given
/// arities.
pub fn trees_of_size(
    arities: &[usize],
    size: usize,
    memo: &mut BTreeMap<usize, Vec<Tree>>,
) -> Vec<Tree> {
    if let Some(t) = memo.get(&size) {
        return t.clone();
    }
    let mut out = Vec::new();
    for (head, &arity) in arities.iter().enumerate() {
        match arity {
            0 if size == 1 => out.push(Tree { head, kids: vec![] }),
            1 if size >= 2 => {
                for k in trees_of_size(arities, size - 1, memo) {
                    out.push(Tree {
                        head,
                        kids: vec![k],
                    });
                }
            }
            2 if size >= 3 => {
                for left in 1..size - 1 {
                    let ls = trees_of_size(arities, left, memo);
                    let rs = trees_of_size(arities, size - 1 - left, memo);
                    for l in &ls {
                        for r in &rs {
                            out.push(Tree {
                                head,
                                kids: vec![l.clone(), r.clone()],
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    memo.insert(size, out.clone());
    out
}

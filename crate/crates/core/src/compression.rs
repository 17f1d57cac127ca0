//! Library learning by corpus compression.
//!
//! A candidate abstraction is a pattern: an expression with at most
//! `max_arity` parameter holes, each used once, whose body holds at least
//! two primitives. Its utility is the drop in total corpus size when every
//! match is rewritten to a call (leftmost-outermost, non-overlapping), net of
//! the size of the body itself.
//!
//! Candidates come from anti-unifying pairs of corpus subtrees. The
//! anti-unifier marks every position where the two subtrees disagree; a
//! candidate is any way of lifting those disagreements into at most
//! `max_arity` holes. Any pattern with positive utility matches at least two
//! sites and so generalizes the anti-unifier of some pair of them, which
//! makes this candidate set complete.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dsl::{DslError, Expr, Library, Program};

pub const DEFAULT_MAX_ROUNDS: usize = 3;
pub const DEFAULT_MAX_ARITY: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abstraction {
    pub name: String,
    /// Body as an s-expression over the library it was found in.
    pub body: String,
    pub arity: usize,
    pub utility: i64,
    #[serde(skip)]
    pub pattern: Option<Expr>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Compressed {
    pub library: Library,
    pub corpus: Vec<Program>,
    pub abstractions: Vec<Abstraction>,
}

/// Binds `pattern`'s holes against `expr`, returning the bound subtrees in
/// hole order.
fn match_at<'e>(pattern: &Expr, expr: &'e Expr, bound: &mut Vec<Option<&'e Expr>>) -> bool {
    match (pattern, expr) {
        (Expr::Hole(i), _) => {
            if bound.len() <= *i {
                bound.resize(*i + 1, None);
            }
            match bound[*i] {
                Some(prev) => prev == expr,
                None => {
                    bound[*i] = Some(expr);
                    true
                }
            }
        }
        (Expr::App { prim: p, args: pa }, Expr::App { prim: e, args: ea }) => {
            p == e && pa.len() == ea.len() && pa.iter().zip(ea).all(|(x, y)| match_at(x, y, bound))
        }
        (Expr::App { .. }, Expr::Hole(_)) => false,
    }
}

fn matches<'e>(pattern: &Expr, expr: &'e Expr) -> Option<Vec<&'e Expr>> {
    let mut bound = Vec::new();
    if match_at(pattern, expr, &mut bound) {
        Some(
            bound
                .into_iter()
                .map(|b| b.expect("holes are numbered densely"))
                .collect(),
        )
    } else {
        None
    }
}

/// Number of rewrites leftmost-outermost replacement would perform.
fn count_rewrites(pattern: &Expr, expr: &Expr) -> usize {
    if let Some(bound) = matches(pattern, expr) {
        return 1 + bound
            .iter()
            .map(|b| count_rewrites(pattern, b))
            .sum::<usize>();
    }
    expr.args().iter().map(|a| count_rewrites(pattern, a)).sum()
}

/// Replaces every leftmost-outermost match of `pattern` by a call to `prim`.
pub fn rewrite(expr: &Expr, pattern: &Expr, prim: usize) -> Expr {
    if let Some(bound) = matches(pattern, expr) {
        return Expr::app(
            prim,
            bound.iter().map(|b| rewrite(b, pattern, prim)).collect(),
        );
    }
    match expr {
        Expr::App { prim: p, args } => {
            Expr::app(*p, args.iter().map(|a| rewrite(a, pattern, prim)).collect())
        }
        Expr::Hole(_) => expr.clone(),
    }
}

/// Corpus size reduction from adopting `pattern`, net of its body size.
pub fn utility<'a>(corpus: impl IntoIterator<Item = &'a Expr>, pattern: &Expr) -> i64 {
    let body = pattern.size() as i64;
    let rewrites: usize = corpus.into_iter().map(|e| count_rewrites(pattern, e)).sum();
    rewrites as i64 * (body - 1) - body
}

/// Anti-unifier of `a` and `b`; disagreements become `Hole(0)` markers.
fn anti_unify(a: &Expr, b: &Expr, mismatches: &mut usize) -> Expr {
    match (a, b) {
        (Expr::App { prim: p, args: xs }, Expr::App { prim: q, args: ys })
            if p == q && xs.len() == ys.len() =>
        {
            Expr::app(
                *p,
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| anti_unify(x, y, mismatches))
                    .collect(),
            )
        }
        _ => {
            *mismatches += 1;
            Expr::Hole(0)
        }
    }
}

/// Pre-order positions of `e` as child-index paths.
fn positions(e: &Expr) -> Vec<Vec<usize>> {
    fn walk(e: &Expr, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(path.clone());
        for (i, a) in e.args().iter().enumerate() {
            path.push(i);
            walk(a, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    walk(e, &mut Vec::new(), &mut out);
    out
}

fn is_prefix(a: &[usize], b: &[usize]) -> bool {
    a.len() <= b.len() && a == &b[..a.len()]
}

/// Replaces the subtrees at `cut` with holes numbered in pre-order.
fn lift(e: &Expr, cut: &[&[usize]], path: &mut Vec<usize>, next: &mut usize) -> Expr {
    if cut.contains(&path.as_slice()) {
        let h = Expr::Hole(*next);
        *next += 1;
        return h;
    }
    match e {
        Expr::App { prim, args } => {
            let mut out = Vec::with_capacity(args.len());
            for (i, a) in args.iter().enumerate() {
                path.push(i);
                out.push(lift(a, cut, path, next));
                path.pop();
            }
            Expr::app(*prim, out)
        }
        Expr::Hole(_) => unreachable!("every mismatch is covered by a cut"),
    }
}

/// All patterns obtained from an anti-unifier by choosing at most
/// `max_arity` disjoint non-root cut points that cover every mismatch.
fn generalizations(au: &Expr, max_arity: usize, out: &mut HashSet<Expr>) {
    let all = positions(au);
    let holes: Vec<&Vec<usize>> = all
        .iter()
        .filter(|p| matches!(subtree(au, p), Expr::Hole(_)))
        .collect();
    let inner: Vec<&[usize]> = all.iter().skip(1).map(Vec::as_slice).collect();

    let mut chosen: Vec<&[usize]> = Vec::new();
    fn choose<'p>(
        au: &Expr,
        inner: &[&'p [usize]],
        holes: &[&Vec<usize>],
        start: usize,
        max_arity: usize,
        chosen: &mut Vec<&'p [usize]>,
        out: &mut HashSet<Expr>,
    ) {
        let covered = holes.iter().all(|h| chosen.iter().any(|c| is_prefix(c, h)));
        if covered {
            let mut next = 0;
            let pattern = lift(au, chosen, &mut Vec::new(), &mut next);
            if pattern.size() >= 2 {
                out.insert(pattern);
            }
        }
        if chosen.len() == max_arity {
            return;
        }
        for i in start..inner.len() {
            let p = inner[i];
            if chosen.iter().any(|c| is_prefix(c, p) || is_prefix(p, c)) {
                continue;
            }
            chosen.push(p);
            choose(au, inner, holes, i + 1, max_arity, chosen, out);
            chosen.pop();
        }
    }
    choose(au, &inner, &holes, 0, max_arity, &mut chosen, out);
}

fn subtree<'e>(e: &'e Expr, path: &[usize]) -> &'e Expr {
    path.iter().fold(e, |node, &i| &node.args()[i])
}

/// Every candidate pattern for the corpus, deduplicated and in a
/// deterministic order.
pub fn candidates(corpus: &[&Expr], max_arity: usize) -> Vec<Expr> {
    let mut counts: BTreeMap<&Expr, usize> = BTreeMap::new();
    for e in corpus {
        for s in e.subtrees() {
            if s.size() >= 2 {
                *counts.entry(s).or_default() += 1;
            }
        }
    }
    let unique: Vec<(&Expr, usize)> = counts.into_iter().collect();
    let mut found = HashSet::new();
    for (i, &(a, count)) in unique.iter().enumerate() {
        if count >= 2 {
            generalizations(a, max_arity, &mut found);
        }
        for &(b, _) in &unique[i + 1..] {
            if a.head() != b.head() {
                continue;
            }
            let mut mismatches = 0;
            let au = anti_unify(a, b, &mut mismatches);
            // The root always agrees here, so every mismatch is a proper
            // subterm; more than max_arity of them may still be coverable by
            // lifting a common ancestor.
            generalizations(&au, max_arity, &mut found);
        }
    }
    let mut out: Vec<Expr> = found.into_iter().collect();
    out.sort();
    out
}

/// The candidate with the greatest positive utility. Ties go to the smaller
/// body, then to the lexicographically smaller printed body.
pub fn best_abstraction(
    corpus: &[Program],
    lib: &Library,
    max_arity: usize,
) -> Option<Abstraction> {
    let exprs: Vec<&Expr> = corpus.iter().map(Program::expr).collect();
    let mut best: Option<(i64, usize, String, Expr)> = None;
    for pattern in candidates(&exprs, max_arity) {
        let u = utility(exprs.iter().copied(), &pattern);
        if u <= 0 {
            continue;
        }
        let size = pattern.size();
        let better = match &best {
            None => true,
            Some((bu, bs, btext, _)) => {
                u > *bu
                    || (u == *bu && (size < *bs || (size == *bs && pattern.to_sexpr(lib) < *btext)))
            }
        };
        if better {
            best = Some((u, size, pattern.to_sexpr(lib), pattern));
        }
    }
    best.map(|(utility, _, body, pattern)| Abstraction {
        name: lib.fresh_name(),
        arity: count_holes(&pattern),
        body,
        utility,
        pattern: Some(pattern),
    })
}

fn count_holes(e: &Expr) -> usize {
    match e {
        Expr::Hole(_) => 1,
        Expr::App { args, .. } => args.iter().map(count_holes).sum(),
    }
}

/// Up to `max_rounds` rounds of: find the best abstraction, add it to the
/// library, rewrite the corpus with it.
pub fn compress(
    corpus: &[Program],
    lib: &Library,
    max_rounds: usize,
    max_arity: usize,
) -> Result<Compressed, DslError> {
    let mut library = lib.clone();
    let mut programs = corpus.to_vec();
    let mut abstractions = Vec::new();
    for _ in 0..max_rounds {
        let Some(found) = best_abstraction(&programs, &library, max_arity) else {
            break;
        };
        let pattern = found.pattern.clone().expect("set by best_abstraction");
        let id = library.add_abstraction(&found.name, pattern.clone())?;
        programs = programs
            .iter()
            .map(|p| Program::new(rewrite(p.expr(), &pattern, id), &library))
            .collect::<Result<_, _>>()?;
        abstractions.push(found);
    }
    Ok(Compressed {
        library,
        corpus: programs,
        abstractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{evaluate, parse_expr};
    use crate::isomorphism::isomorphic_featured;

    fn corpus(lib: &Library, texts: &[&str]) -> Vec<Program> {
        texts
            .iter()
            .map(|t| Program::parse(t, lib).unwrap())
            .collect()
    }

    fn total(c: &[Program]) -> usize {
        c.iter().map(Program::size).sum()
    }

    #[test]
    fn repeated_pair_is_abstracted() {
        let lib = Library::initial();
        let c = corpus(&lib, &["(compose add_attached_node add_attached_node)"; 3]);
        let best = best_abstraction(&c, &lib, 2).unwrap();
        assert_eq!(best.body, "(compose add_attached_node add_attached_node)");
        assert_eq!((best.arity, best.utility, best.name.as_str()), (0, 3, "f0"));

        let out = compress(&c, &lib, 3, 2).unwrap();
        assert_eq!(out.abstractions.len(), 1);
        assert_eq!(out.library.len(), lib.len() + 1);
        assert_eq!(total(&c), 9);
        assert_eq!(total(&out.corpus), 3);
        assert!(out.corpus.iter().all(|p| p.to_sexpr(&out.library) == "f0"));
    }

    #[test]
    fn distinct_leaves_do_not_compress() {
        let lib = Library::initial();
        let c = corpus(&lib, &["identity", "add_attached_node", "(add_edge 1 2)"]);
        assert_eq!(best_abstraction(&c, &lib, 2), None);
        let out = compress(&c, &lib, 3, 2).unwrap();
        assert_eq!(out.library, lib);
        assert_eq!(out.corpus, c);
    }

    #[test]
    fn zero_rounds_is_identity() {
        let lib = Library::initial();
        let c = corpus(&lib, &["(compose add_attached_node add_attached_node)"; 3]);
        let out = compress(&c, &lib, 0, 2).unwrap();
        assert_eq!((out.library, out.corpus), (lib, c));
    }

    #[test]
    fn varying_argument_becomes_a_parameter() {
        // add_edge a 3 with a varying over three programs: the arity-1
        // pattern (compose add_attached_node (add_edge #0 3)) matches all
        // three, while every closed pattern matches at most one site.
        let lib = Library::initial();
        let c = corpus(
            &lib,
            &[
                "(compose add_attached_node (add_edge 1 3))",
                "(compose add_attached_node (add_edge 2 3))",
                "(compose add_attached_node (add_edge node_count 3))",
            ],
        );
        let best = best_abstraction(&c, &lib, 2).unwrap();
        assert_eq!(best.arity, 1);
        assert_eq!(best.body, "(compose add_attached_node (add_edge #0 3))");
        // 3 matches * (4 - 1) - 4
        assert_eq!(best.utility, 5);
        let closed = parse_expr("(compose add_attached_node (add_edge 1 3))", &lib, false).unwrap();
        let exprs: Vec<&Expr> = c.iter().map(Program::expr).collect();
        assert!(utility(exprs.iter().copied(), &closed) < best.utility);
    }

    #[test]
    fn rewriting_preserves_semantics() {
        let lib = Library::initial();
        let c = corpus(
            &lib,
            &[
                "(compose (repeat 2 add_attached_node) (compose (add_edge 1 node_count) add_attached_node))",
                "(compose (repeat 3 add_attached_node) (add_edge 1 node_count))",
                "(repeat 2 (compose (repeat 2 add_attached_node) (add_edge 1 node_count)))",
            ],
        );
        let out = compress(&c, &lib, 3, 2).unwrap();
        assert!(!out.abstractions.is_empty());
        assert!(out.abstractions.len() <= 3);
        for (before, after) in c.iter().zip(&out.corpus) {
            let g1 = evaluate(before, &lib).unwrap();
            let g2 = evaluate(after, &out.library).unwrap();
            assert!(isomorphic_featured(&g1, &g2));
            assert!(after.size() <= before.size());
        }
        for a in &out.abstractions {
            assert!(a.arity <= 2 && a.utility > 0);
        }
    }

    #[test]
    fn arity_bound_is_respected() {
        let lib = Library::initial();
        let c = corpus(
            &lib,
            &[
                "(compose (add_edge 1 2) (compose (add_edge 3 1) add_attached_node))",
                "(compose (add_edge 2 3) (compose (add_edge 1 2) add_attached_node))",
                "(compose (add_edge 3 1) (compose (add_edge 2 3) add_attached_node))",
            ],
        );
        for arity in 0..=2 {
            if let Some(a) = best_abstraction(&c, &lib, arity) {
                assert!(a.arity <= arity);
            }
        }
    }
}

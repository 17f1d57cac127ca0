//! Isomorphism tests for feature graphs.
//!
//! The matcher is a VF2-style backtracking search over a connectivity-first
//! node ordering (the ordering idea from VF2++): every node after the first
//! has an already-matched neighbour, so candidates are drawn from the
//! neighbourhood of that neighbour's image. Pruning compares node labels,
//! degrees and the multiset of edge labels between each new node and every
//! matched node, which is enough to make the search exact for multigraphs.

use std::collections::{HashMap, VecDeque};

use crate::graph::FeatureGraph;

/// Structural isomorphism: ignores ids and ranks, respects edge
/// multiplicity.
pub fn isomorphic_structure(g1: &FeatureGraph, g2: &FeatureGraph) -> bool {
    let a = Labelled::new(g1, false);
    let b = Labelled::new(g2, false);
    find_mapping(&a, &b).is_some()
}

/// Isomorphism that must also map each element onto one carrying the same
/// id and rank.
pub fn isomorphic_featured(g1: &FeatureGraph, g2: &FeatureGraph) -> bool {
    let a = Labelled::new(g1, true);
    let b = Labelled::new(g2, true);
    find_mapping(&a, &b).is_some()
}

/// Cheap isomorphism invariant used for bucketing: equal keys are necessary
/// for structural isomorphism.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructureKey {
    pub nodes: usize,
    pub edges: usize,
    pub degrees: Vec<usize>,
}

impl StructureKey {
    pub fn of(g: &FeatureGraph) -> Self {
        StructureKey {
            nodes: g.node_count(),
            edges: g.edge_count(),
            degrees: g.degree_sequence(),
        }
    }
}

fn feature_label(id: usize, rank: usize) -> u64 {
    ((id as u64) << 32) | rank as u64
}

/// Graph with dense node indices, node labels and per-pair sorted edge
/// label lists.
struct Labelled {
    labels: Vec<u64>,
    /// Distinct neighbours per node, ascending.
    neighbours: Vec<Vec<usize>>,
    /// Edge count per node (parallel edges counted separately).
    degree: Vec<usize>,
    pairs: HashMap<(usize, usize), Vec<u64>>,
    edge_count: usize,
}

impl Labelled {
    fn new(g: &FeatureGraph, featured: bool) -> Self {
        let index: HashMap<usize, usize> = g.nodes().enumerate().map(|(i, n)| (n.id, i)).collect();
        let n = index.len();
        let labels = g
            .nodes()
            .map(|e| {
                if featured {
                    feature_label(e.id, e.rank)
                } else {
                    0
                }
            })
            .collect();
        let mut pairs: HashMap<(usize, usize), Vec<u64>> = HashMap::new();
        let mut degree = vec![0; n];
        for e in g.edges() {
            let (u, v) = e.endpoints().expect("edge");
            let (a, b) = (index[&u], index[&v]);
            degree[a] += 1;
            degree[b] += 1;
            let label = if featured {
                feature_label(e.id, e.rank)
            } else {
                0
            };
            pairs.entry((a.min(b), a.max(b))).or_default().push(label);
        }
        let mut neighbours = vec![Vec::new(); n];
        for (&(a, b), labels) in pairs.iter_mut() {
            labels.sort_unstable();
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        for list in &mut neighbours {
            list.sort_unstable();
        }
        Labelled {
            labels,
            neighbours,
            degree,
            pairs,
            edge_count: g.edge_count(),
        }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn pair(&self, a: usize, b: usize) -> Option<&Vec<u64>> {
        self.pairs.get(&(a.min(b), a.max(b)))
    }

    fn signature(&self) -> Vec<(u64, usize, usize)> {
        let mut sig: Vec<_> = (0..self.len())
            .map(|i| (self.labels[i], self.degree[i], self.neighbours[i].len()))
            .collect();
        sig.sort_unstable();
        sig
    }

    /// Breadth-first order that starts from the rarest (label, degree) class
    /// and, within the frontier, prefers nodes with more matched neighbours.
    fn match_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut class_size: HashMap<(u64, usize), usize> = HashMap::new();
        for i in 0..n {
            *class_size
                .entry((self.labels[i], self.degree[i]))
                .or_default() += 1;
        }
        let rarity = |i: usize| class_size[&(self.labels[i], self.degree[i])];
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let root = (0..n)
                .filter(|&i| !placed[i])
                .min_by_key(|&i| (rarity(i), std::cmp::Reverse(self.degree[i]), i))
                .expect("unplaced node");
            placed[root] = true;
            order.push(root);
            let mut frontier: VecDeque<usize> = VecDeque::new();
            frontier.push_back(root);
            while let Some(u) = frontier.pop_front() {
                let mut next: Vec<usize> = self.neighbours[u]
                    .iter()
                    .copied()
                    .filter(|&w| !placed[w])
                    .collect();
                next.sort_by_key(|&w| {
                    let linked = self.neighbours[w].iter().filter(|&&x| placed[x]).count();
                    (
                        std::cmp::Reverse(linked),
                        rarity(w),
                        std::cmp::Reverse(self.degree[w]),
                        w,
                    )
                });
                for w in next {
                    placed[w] = true;
                    order.push(w);
                    frontier.push_back(w);
                }
            }
        }
        order
    }
}

/// Returns a node mapping `a -> b` if one exists.
fn find_mapping(a: &Labelled, b: &Labelled) -> Option<Vec<usize>> {
    if a.len() != b.len() || a.edge_count != b.edge_count || a.pairs.len() != b.pairs.len() {
        return None;
    }
    if a.signature() != b.signature() {
        return None;
    }
    let n = a.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let order = a.match_order();
    // For each position, the earliest-ordered neighbour that precedes it.
    let position: Vec<usize> = {
        let mut p = vec![0; n];
        for (k, &u) in order.iter().enumerate() {
            p[u] = k;
        }
        p
    };
    let anchor: Vec<Option<usize>> = order
        .iter()
        .map(|&u| {
            a.neighbours[u]
                .iter()
                .copied()
                .filter(|&w| position[w] < position[u])
                .min_by_key(|&w| position[w])
        })
        .collect();

    let mut map_a: Vec<Option<usize>> = vec![None; n];
    let mut map_b: Vec<Option<usize>> = vec![None; n];
    // Candidate lists and cursor per depth.
    let mut candidates: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cursor = vec![0usize; n];

    let fill = |depth: usize, map_a: &[Option<usize>], map_b: &[Option<usize>]| -> Vec<usize> {
        match anchor[depth] {
            Some(w) => {
                let image = map_a[w].expect("anchor mapped");
                b.neighbours[image]
                    .iter()
                    .copied()
                    .filter(|&v| map_b[v].is_none())
                    .collect()
            }
            None => (0..n).filter(|&v| map_b[v].is_none()).collect(),
        }
    };

    let feasible = |u: usize, v: usize, map_a: &[Option<usize>], map_b: &[Option<usize>]| -> bool {
        if a.labels[u] != b.labels[v]
            || a.degree[u] != b.degree[v]
            || a.neighbours[u].len() != b.neighbours[v].len()
        {
            return false;
        }
        let mut mapped_a = 0;
        for &w in &a.neighbours[u] {
            if let Some(image) = map_a[w] {
                mapped_a += 1;
                if a.pair(u, w) != b.pair(v, image) {
                    return false;
                }
            }
        }
        // b-side neighbours already in the image must be images of
        // a-side neighbours; counting them closes the check.
        let mapped_b = b.neighbours[v]
            .iter()
            .filter(|&&x| map_b[x].is_some())
            .count();
        mapped_a == mapped_b
    };

    let mut depth = 0usize;
    candidates[0] = fill(0, &map_a, &map_b);
    cursor[0] = 0;
    loop {
        let u = order[depth];
        let mut advanced = false;
        while cursor[depth] < candidates[depth].len() {
            let v = candidates[depth][cursor[depth]];
            cursor[depth] += 1;
            if feasible(u, v, &map_a, &map_b) {
                map_a[u] = Some(v);
                map_b[v] = Some(u);
                advanced = true;
                break;
            }
        }
        if advanced {
            if depth + 1 == n {
                return Some(map_a.into_iter().map(|m| m.expect("complete")).collect());
            }
            depth += 1;
            candidates[depth] = fill(depth, &map_a, &map_b);
            cursor[depth] = 0;
        } else {
            if depth == 0 {
                return None;
            }
            depth -= 1;
            let prev = order[depth];
            if let Some(v) = map_a[prev].take() {
                map_b[v] = None;
            }
        }
    }
}

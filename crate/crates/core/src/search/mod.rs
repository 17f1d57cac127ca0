//! Distributional program search.
//!
//! A unigram model over the library is fitted to the current population,
//! its spread is clamped, and programs are then enumerated best-first. Only
//! programs whose graphs are structurally new are kept; programs that
//! reproduce an incumbent's graph exactly with fewer primitives are reported
//! as shortenings.

mod enumerate;

pub use enumerate::{Grammar, HeapSearch, Production};

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dsl::{evaluate, DslError, Library, Program, Type, MAX_PROGRAM_SIZE};
use crate::graph::FeatureGraph;
use crate::isomorphism::{isomorphic_featured, isomorphic_structure, StructureKey};

/// Default clamp on the gap between the most and least likely primitive.
pub const DEFAULT_MAX_SPREAD: f64 = 0.5;

/// Per-primitive log-likelihoods, aligned with library ids.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramModel {
    pub logp: Vec<f64>,
}

impl UnigramModel {
    pub fn uniform(n: usize) -> Self {
        UnigramModel {
            logp: vec![(1.0 / n as f64).ln(); n],
        }
    }

    pub fn mean(&self) -> f64 {
        self.logp.iter().sum::<f64>() / self.logp.len() as f64
    }

    pub fn spread(&self) -> f64 {
        let max = self.logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.logp.iter().copied().fold(f64::INFINITY, f64::min);
        if self.logp.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    pub fn grammar(&self, lib: &Library) -> Grammar {
        Grammar::from_weights(lib, &self.logp)
    }
}

/// Laplace-smoothed (alpha = 1) primitive frequencies over the population.
/// Abstractions count as single primitives. An empty population gives the
/// uniform model.
pub fn infer_unigrams(population: &[Program], lib: &Library) -> UnigramModel {
    let n = lib.len();
    let mut counts = vec![0usize; n];
    for p in population {
        p.expr().count_primitives(&mut counts);
    }
    let total: usize = counts.iter().sum();
    let denom = (total + n) as f64;
    UnigramModel {
        logp: counts
            .iter()
            .map(|&c| ((c + 1) as f64 / denom).ln())
            .collect(),
    }
}

/// Shrinks log-likelihoods towards their mean so that the spread is at most
/// `max_spread`, keeping each weight's relative distance from the mean.
/// Models already within the bound are returned unchanged.
pub fn reweight(model: &UnigramModel, max_spread: f64) -> UnigramModel {
    let spread = model.spread();
    if spread <= max_spread {
        return model.clone();
    }
    let mean = model.mean();
    let mut scale = max_spread / spread;
    loop {
        let logp: Vec<f64> = model
            .logp
            .iter()
            .map(|&l| mean + (l - mean) * scale)
            .collect();
        let out = UnigramModel { logp };
        // Rounding can leave the result a hair above the bound.
        if out.spread() <= max_spread {
            return out;
        }
        scale *= 1.0 - f64::EPSILON;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchLimit {
    WallClock(Duration),
    /// Number of enumerated programs; deterministic.
    Programs(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub limit: SearchLimit,
    pub max_size: usize,
    pub max_results: usize,
    /// Graphs with more elements than this are discarded (the embedding
    /// needs at least one input coordinate per element id).
    pub max_elements: Option<usize>,
}

impl SearchBudget {
    pub fn new(limit: SearchLimit, max_results: usize) -> Self {
        SearchBudget {
            limit,
            max_size: MAX_PROGRAM_SIZE,
            max_results,
            max_elements: None,
        }
    }

    /// The default: 15 seconds of wall clock.
    pub fn wall_clock(max_results: usize) -> Self {
        Self::new(SearchLimit::WallClock(Duration::from_secs(15)), max_results)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub program: Program,
    pub logp: f64,
    pub graph: FeatureGraph,
}

/// A shorter program with exactly the same output as an incumbent.
#[derive(Clone, Debug, PartialEq)]
pub struct Shortening {
    pub incumbent: usize,
    pub program: Program,
    pub logp: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub enumerated: usize,
    pub oversized: usize,
    pub diverged: usize,
    pub too_many_elements: usize,
    pub duplicates: usize,
    pub novel: usize,
    pub shortenings: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchOutcome {
    /// Novel programs, most likely first.
    pub found: Vec<Candidate>,
    /// At most one per incumbent: the shortest equivalent seen.
    pub shortenings: Vec<Shortening>,
    pub stats: SearchStats,
}

/// Buckets graphs by a cheap invariant before running full isomorphism.
#[derive(Default)]
pub struct NoveltyPool {
    buckets: HashMap<StructureKey, Vec<FeatureGraph>>,
}

impl NoveltyPool {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a FeatureGraph>) -> Self {
        let mut pool = NoveltyPool::default();
        for g in graphs {
            pool.insert(g.clone());
        }
        pool
    }

    pub fn contains(&self, g: &FeatureGraph) -> bool {
        self.buckets
            .get(&StructureKey::of(g))
            .is_some_and(|b| b.iter().any(|h| isomorphic_structure(g, h)))
    }

    pub fn insert(&mut self, g: FeatureGraph) {
        self.buckets
            .entry(StructureKey::of(&g))
            .or_default()
            .push(g);
    }
}

/// A current population member that may be replaced by a shorter program.
#[derive(Clone, Copy, Debug)]
pub struct Incumbent<'a> {
    pub program: &'a Program,
    pub graph: &'a FeatureGraph,
}

/// Enumerates programs best-first under `model` and keeps the most likely
/// ones whose graphs are structurally new with respect to `seen` and to each
/// other. Stops at `budget.max_results` or when the budget runs out; the
/// clock is checked before every evaluation.
pub fn heap_search(
    model: &UnigramModel,
    lib: &Library,
    budget: &SearchBudget,
    seen: &[FeatureGraph],
    incumbents: &[Incumbent<'_>],
) -> SearchOutcome {
    let mut out = SearchOutcome::default();
    if budget.max_results == 0 {
        return out;
    }
    let grammar = model.grammar(lib);
    let mut pool = NoveltyPool::new(seen);
    let mut by_key: HashMap<StructureKey, Vec<usize>> = HashMap::new();
    for (i, inc) in incumbents.iter().enumerate() {
        by_key
            .entry(StructureKey::of(inc.graph))
            .or_default()
            .push(i);
    }
    let mut shortest: HashMap<usize, Shortening> = HashMap::new();
    let start = match budget.limit {
        SearchLimit::WallClock(_) => Some(Instant::now()),
        SearchLimit::Programs(_) => None,
    };

    for (expr, logp) in HeapSearch::new(&grammar, Type::Graph) {
        let exhausted = match (budget.limit, start) {
            (SearchLimit::WallClock(d), Some(t0)) => t0.elapsed() >= d,
            (SearchLimit::Programs(n), _) => out.stats.enumerated >= n,
            _ => unreachable!(),
        };
        if exhausted {
            break;
        }
        out.stats.enumerated += 1;
        if expr.size() > budget.max_size {
            out.stats.oversized += 1;
            continue;
        }
        let program = Program::new(expr, lib).expect("enumerated programs are well typed");
        let graph = match evaluate(&program, lib) {
            Ok(g) => g,
            Err(DslError::Diverged(_)) => {
                out.stats.diverged += 1;
                continue;
            }
            Err(e) => panic!("enumerated program failed to evaluate: {e}"),
        };
        if budget.max_elements.is_some_and(|m| graph.len() > m) {
            out.stats.too_many_elements += 1;
            continue;
        }
        if pool.contains(&graph) {
            out.stats.duplicates += 1;
            if let Some(idx) = by_key.get(&StructureKey::of(&graph)) {
                for &i in idx {
                    let inc = &incumbents[i];
                    let best_size = shortest
                        .get(&i)
                        .map_or(inc.program.size(), |s| s.program.size());
                    if program.size() < best_size && isomorphic_featured(&graph, inc.graph) {
                        shortest.insert(
                            i,
                            Shortening {
                                incumbent: i,
                                program: program.clone(),
                                logp,
                            },
                        );
                    }
                }
            }
            continue;
        }
        pool.insert(graph.clone());
        out.stats.novel += 1;
        out.found.push(Candidate {
            program,
            logp,
            graph,
        });
        if out.found.len() >= budget.max_results {
            break;
        }
    }
    let mut shortenings: Vec<Shortening> = shortest.into_values().collect();
    shortenings.sort_by_key(|s| s.incumbent);
    out.stats.shortenings = shortenings.len();
    out.shortenings = shortenings;
    out
}

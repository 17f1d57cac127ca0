//! Browser bindings. Every export takes plain values and returns a JSON
//! string; failures come back as `{"error": "..."}`.

use gssnn_core::dsl::{evaluate, Library, Program};
use gssnn_core::embedding::{graph_map, EmbeddingSpec, PositionScale, ReorderMode};
use gssnn_core::graph::{FeatureGraph, GraphJson};
use gssnn_core::search::{heap_search, infer_unigrams, reweight, SearchBudget, SearchLimit};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Search in the page is capped so a click never hangs the tab.
const MAX_DEMO_PROGRAMS: usize = 50_000;

#[derive(Serialize)]
struct Evaluated {
    graph: GraphJson,
    d_star: usize,
    r_star: usize,
    size: usize,
    features: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Codes {
    q: usize,
    /// `codes[d][r]` is the code of position `(d, r)`.
    codes: Vec<Vec<Vec<f64>>>,
    reordered: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize)]
struct Found {
    program: String,
    logp: f64,
    nodes: usize,
    edges: usize,
    graph: GraphJson,
}

#[derive(Serialize)]
struct SearchResult {
    found: Vec<Found>,
    enumerated: usize,
    duplicates: usize,
    diverged: usize,
}

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn scale(normalized: bool) -> PositionScale {
    if normalized {
        PositionScale::Normalized
    } else {
        PositionScale::Literal
    }
}

fn evaluate_impl(source: &str, m: usize, q: usize, ramp: bool) -> Result<Evaluated, String> {
    let lib = Library::initial();
    let program = Program::parse(source.trim(), &lib).map_err(|e| e.to_string())?;
    let graph = evaluate(&program, &lib).map_err(|e| e.to_string())?;
    let (d_star, r_star) = graph.degree_stats().map_err(|e| e.to_string())?;
    let spec = EmbeddingSpec::new(m.max(d_star), q, d_star, r_star).map_err(|e| e.to_string())?;
    let x: Vec<f64> = if ramp {
        (0..spec.m).map(|i| i as f64 / spec.m as f64).collect()
    } else {
        vec![0.0; spec.m]
    };
    let embedded = graph_map(&graph, &x, &spec).map_err(|e| e.to_string())?;
    Ok(Evaluated {
        graph: GraphJson::from(&graph),
        d_star,
        r_star,
        size: program.size(),
        features: embedded.features,
    })
}

fn codes_impl(
    d_star: usize,
    r_star: usize,
    q: usize,
    normalized: bool,
    simple: bool,
) -> Result<Codes, String> {
    let mode = if simple {
        ReorderMode::Simple
    } else {
        ReorderMode::Interleaved
    };
    let spec = EmbeddingSpec::new(d_star, q, d_star, r_star)
        .map_err(|e| e.to_string())?
        .with_scale(scale(normalized))
        .with_reorder(mode);
    let mut codes = Vec::with_capacity(d_star);
    let mut reordered = Vec::with_capacity(d_star);
    for d in 0..d_star {
        let mut row = Vec::with_capacity(r_star);
        let mut moved = Vec::with_capacity(r_star);
        for r in 0..r_star {
            row.push(spec.pos_2d(d, r).map_err(|e| e.to_string())?);
            moved.push(spec.reorder(d, r).map_err(|e| e.to_string())?);
        }
        codes.push(row);
        reordered.push(moved);
    }
    Ok(Codes {
        q,
        codes,
        reordered,
    })
}

fn search_impl(
    population: &str,
    count: usize,
    programs: usize,
    max_spread: f64,
) -> Result<SearchResult, String> {
    let lib = Library::initial();
    let corpus = population
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| Program::parse(l, &lib).map_err(|e| format!("{l}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let seen = corpus
        .iter()
        .map(|p| evaluate(p, &lib).map_err(|e| e.to_string()))
        .collect::<Result<Vec<FeatureGraph>, _>>()?;
    let model = reweight(&infer_unigrams(&corpus, &lib), max_spread);
    let budget = SearchBudget::new(
        SearchLimit::Programs(programs.min(MAX_DEMO_PROGRAMS)),
        count,
    );
    let out = heap_search(&model, &lib, &budget, &seen, &[]);
    Ok(SearchResult {
        found: out
            .found
            .iter()
            .map(|c| Found {
                program: c.program.to_sexpr(&lib),
                logp: c.logp,
                nodes: c.graph.node_count(),
                edges: c.graph.len() - c.graph.node_count(),
                graph: GraphJson::from(&c.graph),
            })
            .collect(),
        enumerated: out.stats.enumerated,
        duplicates: out.stats.duplicates,
        diverged: out.stats.diverged,
    })
}

/// Runs a program and embeds its graph with an all-zero input (`ramp =
/// false`) or the ramp `x_i = i / m`.
#[wasm_bindgen]
pub fn evaluate_program(source: &str, m: usize, q: usize, ramp: bool) -> String {
    respond(evaluate_impl(source, m, q, ramp))
}

/// Positional codes for every `(d, r)` with `d < d*`, `r < r*`.
#[wasm_bindgen]
pub fn position_codes(
    d_star: usize,
    r_star: usize,
    q: usize,
    normalized: bool,
    simple: bool,
) -> String {
    respond(codes_impl(d_star, r_star, q, normalized, simple))
}

/// Best-first search from the unigram model of `population` (one program
/// per line), skipping graphs isomorphic to the population's.
#[wasm_bindgen]
pub fn search(population: &str, count: usize, programs: usize, max_spread: f64) -> String {
    respond(search_impl(population, count, programs, max_spread))
}

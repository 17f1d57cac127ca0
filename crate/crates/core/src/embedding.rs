//! Feature injection: maps a symbolic feature graph and a real input vector
//! onto a graph with real-valued element features.
//!
//! Each element `(id, rank)` receives the slice of `x` owned by its id,
//! tiled out to `q` dimensions, plus a static sinusoidal code of
//! `(id, rank)`. The code is a bias that does not depend on `x`; the slice
//! term is affine in `x` with every output coordinate copying exactly one
//! input coordinate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FeatureGraph, GraphElement, GraphJson};

const WAVELENGTH_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("invalid embedding spec: {0}")]
    InvalidSpec(String),
    #[error("index {w} out of range (d* = {d_star})")]
    IndexOutOfRange { w: usize, d_star: usize },
    #[error("cannot tile an empty vector")]
    EmptyInput,
    #[error("position ({d}, {r}) out of range for d* = {d_star}, r* = {r_star}")]
    PositionOutOfRange {
        d: usize,
        r: usize,
        d_star: usize,
        r_star: usize,
    },
    #[error("stale spec: element {id} (rank {rank}) outside d* = {d_star}, r* = {r_star}")]
    StaleSpec {
        id: usize,
        rank: usize,
        d_star: usize,
        r_star: usize,
    },
    #[error("input has {got} dimensions, spec expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("spec mismatch: graph has d* = {graph_d}, r* = {graph_r}; spec has d* = {spec_d}, r* = {spec_r}")]
    SpecMismatch {
        graph_d: usize,
        graph_r: usize,
        spec_d: usize,
        spec_r: usize,
    },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Exponent used for the sinusoid wavelengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionScale {
    /// `10000^(k)` for in-quarter offset `k`.
    #[default]
    Literal,
    /// `10000^(k / (q/4))`, the usual transformer encoding.
    Normalized,
}

/// How `(id, rank)` is folded into the two sinusoid arguments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReorderMode {
    /// `((d r* + r) mod d*, floor((d r* + r) / d*))`.
    #[default]
    Interleaved,
    /// `(d, r)` unchanged.
    Simple,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub m: usize,
    pub q: usize,
    pub d_star: usize,
    pub r_star: usize,
    #[serde(skip)]
    pub scale: PositionScale,
    #[serde(skip)]
    pub reorder: ReorderMode,
}

impl EmbeddingSpec {
    pub fn new(m: usize, q: usize, d_star: usize, r_star: usize) -> Result<Self, EmbeddingError> {
        let spec = EmbeddingSpec {
            m,
            q,
            d_star,
            r_star,
            scale: PositionScale::default(),
            reorder: ReorderMode::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec sized to a particular graph.
    pub fn for_graph(g: &FeatureGraph, m: usize, q: usize) -> Result<Self, EmbeddingError> {
        let (d_star, r_star) = g.degree_stats()?;
        Self::new(m, q, d_star, r_star)
    }

    pub fn with_scale(mut self, scale: PositionScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_reorder(mut self, reorder: ReorderMode) -> Self {
        self.reorder = reorder;
        self
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.d_star == 0 {
            return Err(EmbeddingError::InvalidSpec("d* must be at least 1".into()));
        }
        if self.m < self.d_star {
            return Err(EmbeddingError::InvalidSpec(format!(
                "m = {} is smaller than d* = {}",
                self.m, self.d_star
            )));
        }
        if self.q == 0 || !self.q.is_multiple_of(4) {
            return Err(EmbeddingError::InvalidSpec(format!(
                "q = {} must be a positive multiple of 4",
                self.q
            )));
        }
        if self.r_star == 0 {
            return Err(EmbeddingError::InvalidSpec("r* must be at least 1".into()));
        }
        Ok(())
    }

    /// Length of every slice but the first: `floor(m / d*)`.
    pub fn segment(&self) -> usize {
        self.m / self.d_star
    }

    /// Start offset of the slice owned by id `w`; `idx(d*) = m`.
    pub fn idx(&self, w: usize) -> Result<usize, EmbeddingError> {
        if w > self.d_star {
            return Err(EmbeddingError::IndexOutOfRange {
                w,
                d_star: self.d_star,
            });
        }
        // The leftover m - d*·l goes to slice 0. Taking it as m mod l instead
        // leaves a gap at the end whenever l does not divide m - d*·l.
        let l = self.segment();
        Ok(if w == 0 {
            0
        } else {
            self.m % self.d_star + w * l
        })
    }

    /// Half-open slice of `x` owned by id `w`.
    pub fn slice_bounds(&self, w: usize) -> Result<(usize, usize), EmbeddingError> {
        if w >= self.d_star {
            return Err(EmbeddingError::IndexOutOfRange {
                w,
                d_star: self.d_star,
            });
        }
        Ok((self.idx(w)?, self.idx(w + 1)?))
    }

    pub fn reorder(&self, d: usize, r: usize) -> Result<(usize, usize), EmbeddingError> {
        if d >= self.d_star || r >= self.r_star {
            return Err(EmbeddingError::PositionOutOfRange {
                d,
                r,
                d_star: self.d_star,
                r_star: self.r_star,
            });
        }
        Ok(match self.reorder {
            ReorderMode::Interleaved => {
                let k = d * self.r_star + r;
                (k % self.d_star, k / self.d_star)
            }
            ReorderMode::Simple => (d, r),
        })
    }

    /// The static sinusoidal code of `(d, r)`.
    ///
    /// Coordinate `j` (0-based) lies in quarter `j / (q/4)` with in-quarter
    /// offset `k = j mod (q/4)`; the quarters hold `sin(p1 s_k)`,
    /// `cos(p1 s_k)`, `sin(p2 s_k)`, `cos(p2 s_k)` where `s_k` is the
    /// reciprocal wavelength. `s_k` is computed as `exp(-k ln 10000)` so
    /// large offsets underflow to zero instead of overflowing.
    pub fn pos_2d(&self, d: usize, r: usize) -> Result<Vec<f64>, EmbeddingError> {
        let (p1, p2) = self.reorder(d, r)?;
        let quarter = self.q / 4;
        let ln_base = WAVELENGTH_BASE.ln();
        let mut out = Vec::with_capacity(self.q);
        for j in 0..self.q {
            let k = (j % quarter) as f64;
            let exponent = match self.scale {
                PositionScale::Literal => k,
                PositionScale::Normalized => k / quarter as f64,
            };
            let inv = (-exponent * ln_base).exp();
            let value = match j / quarter {
                0 => (p1 as f64 * inv).sin(),
                1 => (p1 as f64 * inv).cos(),
                2 => (p2 as f64 * inv).sin(),
                _ => (p2 as f64 * inv).cos(),
            };
            out.push(value);
        }
        Ok(out)
    }

    /// Feature vector of a single element.
    pub fn embed(&self, element: &GraphElement, x: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
        if element.id >= self.d_star || element.rank >= self.r_star {
            return Err(EmbeddingError::StaleSpec {
                id: element.id,
                rank: element.rank,
                d_star: self.d_star,
                r_star: self.r_star,
            });
        }
        if x.len() != self.m {
            return Err(EmbeddingError::InputLength {
                expected: self.m,
                got: x.len(),
            });
        }
        let (lo, hi) = self.slice_bounds(element.id)?;
        let mut out = tile_expand(&x[lo..hi], self.q)?;
        for (o, b) in out.iter_mut().zip(self.pos_2d(element.id, element.rank)?) {
            *o += b;
        }
        Ok(out)
    }

    /// Index into `x` that coordinate `j` of element `id`'s feature copies.
    pub fn source_coordinate(&self, id: usize, j: usize) -> Result<usize, EmbeddingError> {
        let (lo, hi) = self.slice_bounds(id)?;
        Ok(lo + j % (hi - lo))
    }
}

/// Repeats `s` and truncates to `q` entries: `out[i] = s[i mod len]`.
pub fn tile_expand(s: &[f64], q: usize) -> Result<Vec<f64>, EmbeddingError> {
    if s.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    Ok(s.iter().copied().cycle().take(q).collect())
}

/// A feature graph with one `q`-vector per element, in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedGraph {
    pub graph: FeatureGraph,
    pub features: Vec<Vec<f64>>,
    pub spec: EmbeddingSpec,
}

/// Embeds every element of `g`. The spec must have been sized to `g`.
pub fn graph_map(
    g: &FeatureGraph,
    x: &[f64],
    spec: &EmbeddingSpec,
) -> Result<EmbeddedGraph, EmbeddingError> {
    spec.validate()?;
    let (graph_d, graph_r) = g.degree_stats()?;
    if graph_d != spec.d_star || graph_r != spec.r_star {
        return Err(EmbeddingError::SpecMismatch {
            graph_d,
            graph_r,
            spec_d: spec.d_star,
            spec_r: spec.r_star,
        });
    }
    let features = g
        .elements()
        .iter()
        .map(|e| spec.embed(e, x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddedGraph {
        graph: g.clone(),
        features,
        spec: *spec,
    })
}

/// Wire format: the graph JSON fields plus `features` (indexed by element
/// id) and `spec`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedGraphJson {
    pub nodes: Vec<crate::graph::NodeJson>,
    pub edges: Vec<crate::graph::EdgeJson>,
    pub features: Vec<Vec<f64>>,
    pub spec: EmbeddingSpec,
}

impl From<&EmbeddedGraph> for EmbeddedGraphJson {
    fn from(e: &EmbeddedGraph) -> Self {
        let GraphJson { nodes, edges } = GraphJson::from(&e.graph);
        EmbeddedGraphJson {
            nodes,
            edges,
            features: e.features.clone(),
            spec: e.spec,
        }
    }
}

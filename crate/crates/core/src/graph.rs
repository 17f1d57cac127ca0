//! Symbolic feature graphs: single-component undirected multigraphs whose
//! nodes and edges carry an `(id, rank)` pair.
//!
//! An element's id is the number of elements that existed when it was
//! created, so ids always form the contiguous range `0..len`. Nodes have
//! rank 0. Edge ranks start at 1 and are pairwise distinct among the edges
//! incident to any one node.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Node,
    /// Endpoints are node ids, stored with `u < v`.
    Edge {
        u: usize,
        v: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GraphElement {
    pub id: usize,
    pub rank: usize,
    pub kind: ElementKind,
}

impl GraphElement {
    pub fn is_node(&self) -> bool {
        matches!(self.kind, ElementKind::Node)
    }

    pub fn endpoints(&self) -> Option<(usize, usize)> {
        match self.kind {
            ElementKind::Node => None,
            ElementKind::Edge { u, v } => Some((u, v)),
        }
    }
}

/// A single invariant violation, located by element id where possible.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("empty graph")]
    Empty,
    #[error("id {found} at position {position} (ids must be 0..n in creation order)")]
    NonContiguousId { position: usize, found: usize },
    #[error("self-edge at id {0}")]
    SelfEdge(usize),
    #[error("edge {edge} refers to unknown node {endpoint}")]
    DanglingEndpoint { edge: usize, endpoint: usize },
    #[error("node rank {rank} at id {id} (nodes have rank 0)")]
    NodeRank { id: usize, rank: usize },
    #[error("edge rank 0 at id {0}")]
    EdgeRankZero(usize),
    #[error("edges {first} and {second} share rank {rank} at node {node}")]
    RankCollision {
        node: usize,
        first: usize,
        second: usize,
        rank: usize,
    },
    #[error("graph has {0} connected components")]
    Disconnected(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("empty graph")]
    Empty,
    #[error("invalid graph: {0}")]
    Invalid(Violation),
    #[error("self-edge on node {0}")]
    SelfEdge(usize),
    #[error("{0} is not a node id")]
    NotANode(usize),
}

/// Immutable, validated feature graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureGraph {
    elements: Vec<GraphElement>,
    node_count: usize,
    edge_count: usize,
}

impl FeatureGraph {
    /// Builds a graph from elements, rejecting anything that breaks the
    /// class invariants. Elements may arrive in any order; they are sorted
    /// by id.
    pub fn from_elements(mut elements: Vec<GraphElement>) -> Result<Self, GraphError> {
        elements.sort_by_key(|e| e.id);
        if let Some(v) = Self::violations_of(&elements).into_iter().next() {
            return Err(match v {
                Violation::Empty => GraphError::Empty,
                other => GraphError::Invalid(other),
            });
        }
        let node_count = elements.iter().filter(|e| e.is_node()).count();
        let edge_count = elements.len() - node_count;
        Ok(Self {
            elements,
            node_count,
            edge_count,
        })
    }

    /// Every invariant violation in `elements`, which must already be sorted
    /// by id for the contiguity check to be meaningful.
    pub fn violations_of(elements: &[GraphElement]) -> Vec<Violation> {
        let mut out = Vec::new();
        if elements.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        for (position, e) in elements.iter().enumerate() {
            if e.id != position {
                out.push(Violation::NonContiguousId {
                    position,
                    found: e.id,
                });
            }
        }
        let kinds: HashMap<usize, &GraphElement> = elements.iter().map(|e| (e.id, e)).collect();
        // node id -> (rank -> first edge id)
        let mut seen_ranks: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
        for e in elements {
            match e.kind {
                ElementKind::Node => {
                    if e.rank != 0 {
                        out.push(Violation::NodeRank {
                            id: e.id,
                            rank: e.rank,
                        });
                    }
                }
                ElementKind::Edge { u, v } => {
                    if u == v {
                        out.push(Violation::SelfEdge(e.id));
                    }
                    for endpoint in [u, v] {
                        let ok = kinds
                            .get(&endpoint)
                            .is_some_and(|n| n.is_node() && n.id < e.id);
                        if !ok {
                            out.push(Violation::DanglingEndpoint {
                                edge: e.id,
                                endpoint,
                            });
                        }
                    }
                    if e.rank == 0 {
                        out.push(Violation::EdgeRankZero(e.id));
                    }
                    let ends: &[usize] = if u == v { &[u] } else { &[u, v] };
                    for &node in ends {
                        let ranks = seen_ranks.entry(node).or_default();
                        if let Some(&first) = ranks.get(&e.rank) {
                            out.push(Violation::RankCollision {
                                node,
                                first,
                                second: e.id,
                                rank: e.rank,
                            });
                        } else {
                            ranks.insert(e.rank, e.id);
                        }
                    }
                }
            }
        }
        let components = count_components(elements);
        if components > 1 {
            out.push(Violation::Disconnected(components));
        }
        out
    }

    pub fn elements(&self) -> &[GraphElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphElement> {
        self.elements.iter().filter(|e| e.is_node())
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphElement> {
        self.elements.iter().filter(|e| !e.is_node())
    }

    /// `(d*, r*)`: one more than the largest id and the largest rank.
    pub fn degree_stats(&self) -> Result<(usize, usize), GraphError> {
        degree_stats(&self.elements)
    }

    /// Node degrees (counting parallel edges) sorted descending.
    pub fn degree_sequence(&self) -> Vec<usize> {
        let mut degree: BTreeMap<usize, usize> = self.nodes().map(|n| (n.id, 0)).collect();
        for e in self.edges() {
            let (u, v) = e.endpoints().expect("edge");
            *degree.get_mut(&u).expect("validated") += 1;
            *degree.get_mut(&v).expect("validated") += 1;
        }
        let mut seq: Vec<usize> = degree.into_values().collect();
        seq.sort_unstable_by(|a, b| b.cmp(a));
        seq
    }
}

/// `(1 + max id, 1 + max rank)` over a nonempty element list.
pub fn degree_stats(elements: &[GraphElement]) -> Result<(usize, usize), GraphError> {
    let max_id = elements
        .iter()
        .map(|e| e.id)
        .max()
        .ok_or(GraphError::Empty)?;
    let max_rank = elements
        .iter()
        .map(|e| e.rank)
        .max()
        .ok_or(GraphError::Empty)?;
    Ok((max_id + 1, max_rank + 1))
}

fn count_components(elements: &[GraphElement]) -> usize {
    let nodes: Vec<usize> = elements
        .iter()
        .filter(|e| e.is_node())
        .map(|e| e.id)
        .collect();
    let slot: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in elements {
        if let Some((u, v)) = e.endpoints() {
            if let (Some(&a), Some(&b)) = (slot.get(&u), slot.get(&v)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    (0..nodes.len())
        .filter(|&i| find(&mut parent, i) == i)
        .count()
}

/// Incremental constructor that maintains every invariant except
/// connectivity, which is checked by [`GraphBuilder::finish`].
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    elements: Vec<GraphElement>,
    /// Node ids in creation order.
    nodes: Vec<usize>,
    /// Incident edge ids, keyed by node id.
    incident: HashMap<usize, Vec<usize>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_graph(graph: &FeatureGraph) -> Self {
        let mut b = Self::new();
        for e in graph.elements() {
            b.elements.push(*e);
            match e.kind {
                ElementKind::Node => {
                    b.nodes.push(e.id);
                    b.incident.insert(e.id, Vec::new());
                }
                ElementKind::Edge { u, v } => {
                    b.incident.get_mut(&u).expect("validated").push(e.id);
                    b.incident.get_mut(&v).expect("validated").push(e.id);
                }
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Node id of the `index`-th node in creation order.
    pub fn node_at(&self, index: usize) -> Option<usize> {
        self.nodes.get(index).copied()
    }

    pub fn add_node(&mut self) -> usize {
        let id = self.elements.len();
        self.elements.push(GraphElement {
            id,
            rank: 0,
            kind: ElementKind::Node,
        });
        self.nodes.push(id);
        self.incident.insert(id, Vec::new());
        id
    }

    /// Number of edges already joining nodes `a` and `b`.
    pub fn multiplicity(&self, a: usize, b: usize) -> usize {
        let (u, v) = (a.min(b), a.max(b));
        self.incident.get(&u).map_or(0, |edges| {
            edges
                .iter()
                .filter(|&&e| self.elements[e].kind == ElementKind::Edge { u, v })
                .count()
        })
    }

    /// Adds an edge between two existing nodes. Its rank is one more than
    /// the largest rank already incident to either endpoint.
    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<usize, GraphError> {
        if a == b {
            return Err(GraphError::SelfEdge(a));
        }
        for n in [a, b] {
            if !self.incident.contains_key(&n) {
                return Err(GraphError::NotANode(n));
            }
        }
        let rank = 1 + self.incident[&a]
            .iter()
            .chain(&self.incident[&b])
            .map(|&e| self.elements[e].rank)
            .max()
            .unwrap_or(0);
        let id = self.elements.len();
        self.elements.push(GraphElement {
            id,
            rank,
            kind: ElementKind::Edge {
                u: a.min(b),
                v: a.max(b),
            },
        });
        self.incident.get_mut(&a).expect("checked").push(id);
        self.incident.get_mut(&b).expect("checked").push(id);
        Ok(id)
    }

    pub fn finish(self) -> Result<FeatureGraph, GraphError> {
        FeatureGraph::from_elements(self.elements)
    }
}

/// Wire format shared with the trainer: nodes and edges in separate arrays,
/// each sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<EdgeJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub id: usize,
    pub rank: usize,
    pub u: usize,
    pub v: usize,
}

impl GraphJson {
    pub fn elements(&self) -> Vec<GraphElement> {
        let mut out: Vec<GraphElement> = self
            .nodes
            .iter()
            .map(|n| GraphElement {
                id: n.id,
                rank: n.rank,
                kind: ElementKind::Node,
            })
            .chain(self.edges.iter().map(|e| GraphElement {
                id: e.id,
                rank: e.rank,
                kind: ElementKind::Edge {
                    u: e.u.min(e.v),
                    v: e.u.max(e.v),
                },
            }))
            .collect();
        out.sort_by_key(|e| e.id);
        out
    }
}

impl From<&FeatureGraph> for GraphJson {
    fn from(g: &FeatureGraph) -> Self {
        GraphJson {
            nodes: g
                .nodes()
                .map(|n| NodeJson {
                    id: n.id,
                    rank: n.rank,
                })
                .collect(),
            edges: g
                .edges()
                .map(|e| {
                    let (u, v) = e.endpoints().expect("edge");
                    EdgeJson {
                        id: e.id,
                        rank: e.rank,
                        u,
                        v,
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphJson> for FeatureGraph {
    type Error = GraphError;

    fn try_from(json: GraphJson) -> Result<Self, GraphError> {
        FeatureGraph::from_elements(json.elements())
    }
}

impl Serialize for FeatureGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = GraphJson::deserialize(d)?;
        FeatureGraph::try_from(json).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for FeatureGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "graph[{} nodes, {} edges]",
            self.node_count, self.edge_count
        )
    }
}

//! Symbolic half of graph-based symbolically synthesized networks: a small
//! graph-building language, distributional search and library learning
//! over it, an evolutionary loop, and the embedding that injects a program's
//! graph into real-valued inputs.

pub mod compression;
pub mod dsl;
pub mod embedding;
pub mod evolution;
pub mod graph;
pub mod isomorphism;
pub mod persist;
pub mod search;

//! The graph-construction language.
//!
//! Programs denote transformations of a feature graph and are always run
//! on the same one-node starting graph, so everything a program can learn
//! about comes from the elements it builds itself. There are two value
//! types: graph transformations and integers. Integer expressions are read
//! against the graph as it stands when they are evaluated.

mod eval;
mod expr;
mod library;
mod sexpr;

pub use eval::{evaluate, evaluate_expr, initial_graph, semantically_equal, EvalLimits};
pub use expr::{Expr, Program, Vocabulary};
pub use library::{Builtin, Library, LibraryEntryJson, Primitive, PrimitiveBody};
pub use sexpr::parse_expr;

use std::fmt;

use thiserror::Error;

/// Largest program size (primitive occurrences) that is ever admitted.
pub const MAX_PROGRAM_SIZE: usize = 150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    /// A graph-to-graph transformation.
    Graph,
    Int,
}

impl Type {
    pub const ALL: [Type; 2] = [Type::Graph, Type::Int];

    pub fn index(self) -> usize {
        match self {
            Type::Graph => 0,
            Type::Int => 1,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Graph => f.write_str("G2->G2"),
            Type::Int => f.write_str("int"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("`{name}` takes {expected} arguments, got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("type error: expected {expected}, found {found}")]
    Type { expected: Type, found: Type },
    #[error("parameter #{0} is not bound here")]
    UnboundHole(usize),
    #[error("invalid abstraction: {0}")]
    InvalidAbstraction(String),
    #[error("invalid library: {0}")]
    InvalidLibrary(String),
    #[error("size limit: program has {size} primitives (max {max})")]
    SizeLimit { size: usize, max: usize },
    #[error("diverged: evaluation exceeded {0} steps")]
    Diverged(usize),
}

use crate::graph::{FeatureGraph, GraphBuilder};
use crate::isomorphism::isomorphic_featured;

use super::{Builtin, DslError, Expr, Library, PrimitiveBody, Program};

/// Bounds that keep evaluation cheap and total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalLimits {
    /// Transformation steps before a program counts as diverged.
    pub max_steps: usize,
    /// Upper clamp on `repeat` counts.
    pub max_repeat: usize,
    /// `add_edge` is a no-op once a node pair has this many edges.
    pub max_multiplicity: usize,
}

impl Default for EvalLimits {
    fn default() -> Self {
        EvalLimits {
            max_steps: 10_000,
            max_repeat: 20,
            max_multiplicity: 3,
        }
    }
}

/// The one-node graph every program starts from.
pub fn initial_graph() -> FeatureGraph {
    let mut b = GraphBuilder::new();
    b.add_node();
    b.finish().expect("single node is a valid graph")
}

pub fn evaluate(program: &Program, lib: &Library) -> Result<FeatureGraph, DslError> {
    evaluate_expr(program.expr(), lib, EvalLimits::default())
}

pub fn evaluate_expr(
    expr: &Expr,
    lib: &Library,
    limits: EvalLimits,
) -> Result<FeatureGraph, DslError> {
    let mut graph = GraphBuilder::new();
    graph.add_node();
    let mut ev = Evaluator {
        lib,
        limits,
        steps: 0,
    };
    ev.run(expr, &mut graph)?;
    Ok(graph
        .finish()
        .expect("every builtin preserves the graph invariants"))
}

/// Equal output graphs, features included, up to isomorphism.
pub fn semantically_equal(p1: &Program, p2: &Program, lib: &Library) -> Result<bool, DslError> {
    Ok(isomorphic_featured(
        &evaluate(p1, lib)?,
        &evaluate(p2, lib)?,
    ))
}

struct Evaluator<'a> {
    lib: &'a Library,
    limits: EvalLimits,
    steps: usize,
}

impl Evaluator<'_> {
    fn tick(&mut self) -> Result<(), DslError> {
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            Err(DslError::Diverged(self.limits.max_steps))
        } else {
            Ok(())
        }
    }

    fn resolve(&self, prim: usize) -> Result<&PrimitiveBody, DslError> {
        self.lib
            .get(prim)
            .map(|p| &p.body)
            .ok_or_else(|| DslError::UnknownPrimitive(format!("#{prim}")))
    }

    // Abstraction calls are free: only the builtins they inline cost steps,
    // so rewriting a program with abstractions never changes whether it
    // diverges.
    fn run(&mut self, expr: &Expr, g: &mut GraphBuilder) -> Result<(), DslError> {
        let (prim, args) = match expr {
            Expr::App { prim, args } => (*prim, args),
            Expr::Hole(i) => return Err(DslError::UnboundHole(*i)),
        };
        let builtin = match self.resolve(prim)? {
            PrimitiveBody::Abstraction(body) => {
                let inlined = body.substitute(args)?;
                return self.run(&inlined, g);
            }
            PrimitiveBody::Builtin(b) => *b,
        };
        self.tick()?;
        match builtin {
            Builtin::Identity => Ok(()),
            Builtin::Compose => {
                self.run(&args[0], g)?;
                self.run(&args[1], g)
            }
            Builtin::AddAttachedNode => {
                let previous_node = g.node_at(g.node_count() - 1).expect("graph has a node");
                let node = g.add_node();
                g.add_edge(previous_node, node)
                    .expect("fresh node differs from its anchor");
                Ok(())
            }
            Builtin::AddEdge => {
                let n = g.node_count();
                let a = self.int(&args[0], g)? % n;
                let b = self.int(&args[1], g)? % n;
                if a == b {
                    return Ok(());
                }
                let (u, v) = (g.node_at(a).expect("mod n"), g.node_at(b).expect("mod n"));
                if g.multiplicity(u, v) >= self.limits.max_multiplicity {
                    return Ok(());
                }
                g.add_edge(u, v).expect("distinct existing nodes");
                Ok(())
            }
            Builtin::Repeat => {
                let times = self.int(&args[0], g)?.min(self.limits.max_repeat);
                for _ in 0..times {
                    self.run(&args[1], g)?;
                }
                Ok(())
            }
            Builtin::NodeCount | Builtin::Const(_) | Builtin::Succ => Err(DslError::Type {
                expected: super::Type::Graph,
                found: super::Type::Int,
            }),
        }
    }

    fn int(&mut self, expr: &Expr, g: &GraphBuilder) -> Result<usize, DslError> {
        let (prim, args) = match expr {
            Expr::App { prim, args } => (*prim, args),
            Expr::Hole(i) => return Err(DslError::UnboundHole(*i)),
        };
        let builtin = match self.resolve(prim)? {
            PrimitiveBody::Abstraction(body) => {
                let inlined = body.substitute(args)?;
                return self.int(&inlined, g);
            }
            PrimitiveBody::Builtin(b) => *b,
        };
        self.tick()?;
        match builtin {
            Builtin::NodeCount => Ok(g.node_count()),
            Builtin::Const(c) => Ok(c),
            Builtin::Succ => Ok(self.int(&args[0], g)?.saturating_add(1)),
            _ => Err(DslError::Type {
                expected: super::Type::Int,
                found: super::Type::Graph,
            }),
        }
    }
}

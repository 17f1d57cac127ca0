use std::fmt;

use super::{DslError, Library, Type, MAX_PROGRAM_SIZE};

/// Anything that can name primitive ids when printing expressions.
pub trait Vocabulary {
    fn name(&self, prim: usize) -> &str;
}

/// First-order expression tree. Every application is saturated; `Hole`
/// only appears inside abstraction bodies and compression patterns.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    App { prim: usize, args: Vec<Expr> },
    Hole(usize),
}

impl Expr {
    pub fn leaf(prim: usize) -> Self {
        Expr::App {
            prim,
            args: Vec::new(),
        }
    }

    pub fn app(prim: usize, args: Vec<Expr>) -> Self {
        Expr::App { prim, args }
    }

    pub fn head(&self) -> Option<usize> {
        match self {
            Expr::App { prim, .. } => Some(*prim),
            Expr::Hole(_) => None,
        }
    }

    pub fn args(&self) -> &[Expr] {
        match self {
            Expr::App { args, .. } => args,
            Expr::Hole(_) => &[],
        }
    }

    /// Primitive occurrences; an abstraction call counts once and holes
    /// count zero.
    pub fn size(&self) -> usize {
        match self {
            Expr::App { args, .. } => 1 + args.iter().map(Expr::size).sum::<usize>(),
            Expr::Hole(_) => 0,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::App { args, .. } => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
            Expr::Hole(_) => 0,
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            Expr::App { args, .. } => args.iter().all(Expr::is_closed),
            Expr::Hole(_) => false,
        }
    }

    /// Replaces `Hole(i)` with `values[i]`.
    pub fn substitute(&self, values: &[Expr]) -> Result<Expr, DslError> {
        match self {
            Expr::App { prim, args } => Ok(Expr::App {
                prim: *prim,
                args: args
                    .iter()
                    .map(|a| a.substitute(values))
                    .collect::<Result<_, _>>()?,
            }),
            Expr::Hole(i) => values.get(*i).cloned().ok_or(DslError::UnboundHole(*i)),
        }
    }

    /// Pre-order traversal of every application node.
    pub fn subtrees(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if let Expr::App { args, .. } = e {
                out.push(e);
                stack.extend(args.iter().rev());
            }
        }
        out
    }

    /// Counts occurrences of each primitive id into `counts`.
    pub fn count_primitives(&self, counts: &mut [usize]) {
        if let Expr::App { prim, args } = self {
            counts[*prim] += 1;
            for a in args {
                a.count_primitives(counts);
            }
        }
    }

    /// Infers the type of `self`, recording the types demanded of holes.
    pub fn infer(&self, lib: &Library, holes: &mut Vec<Option<Type>>) -> Result<Type, DslError> {
        match self {
            Expr::Hole(i) => Err(DslError::UnboundHole(*i)),
            Expr::App { prim, args } => {
                let p = lib
                    .get(*prim)
                    .ok_or_else(|| DslError::UnknownPrimitive(format!("#{prim}")))?;
                if p.arg_types.len() != args.len() {
                    return Err(DslError::Arity {
                        name: p.name.clone(),
                        expected: p.arg_types.len(),
                        got: args.len(),
                    });
                }
                for (arg, &expected) in args.iter().zip(&p.arg_types) {
                    match arg {
                        Expr::Hole(i) => {
                            if holes.len() <= *i {
                                holes.resize(*i + 1, None);
                            }
                            match holes[*i] {
                                Some(found) if found != expected => {
                                    return Err(DslError::Type { expected, found })
                                }
                                _ => holes[*i] = Some(expected),
                            }
                        }
                        _ => {
                            let found = arg.infer(lib, holes)?;
                            if found != expected {
                                return Err(DslError::Type { expected, found });
                            }
                        }
                    }
                }
                Ok(p.ret)
            }
        }
    }

    pub fn display<'a, V: Vocabulary + ?Sized>(&'a self, vocab: &'a V) -> Display<'a, V> {
        Display { expr: self, vocab }
    }

    pub fn to_sexpr<V: Vocabulary + ?Sized>(&self, vocab: &V) -> String {
        self.display(vocab).to_string()
    }
}

pub struct Display<'a, V: ?Sized> {
    expr: &'a Expr,
    vocab: &'a V,
}

impl<V: Vocabulary + ?Sized> fmt::Display for Display<'_, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Hole(i) => write!(f, "#{i}"),
            Expr::App { prim, args } if args.is_empty() => f.write_str(self.vocab.name(*prim)),
            Expr::App { prim, args } => {
                write!(f, "({}", self.vocab.name(*prim))?;
                for a in args {
                    write!(f, " {}", a.display(self.vocab))?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A closed, well-typed expression denoting a graph transformation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Program(Expr);

impl Program {
    pub fn new(expr: Expr, lib: &Library) -> Result<Self, DslError> {
        if !expr.is_closed() {
            return Err(DslError::Parse("programs cannot contain parameters".into()));
        }
        let found = expr.infer(lib, &mut Vec::new())?;
        if found != Type::Graph {
            return Err(DslError::Type {
                expected: Type::Graph,
                found,
            });
        }
        Ok(Program(expr))
    }

    /// Like [`Program::new`] but also enforces the size limit.
    pub fn admissible(expr: Expr, lib: &Library) -> Result<Self, DslError> {
        let size = expr.size();
        if size > MAX_PROGRAM_SIZE {
            return Err(DslError::SizeLimit {
                size,
                max: MAX_PROGRAM_SIZE,
            });
        }
        Self::new(expr, lib)
    }

    pub fn parse(text: &str, lib: &Library) -> Result<Self, DslError> {
        Self::new(super::parse_expr(text, lib, false)?, lib)
    }

    pub fn expr(&self) -> &Expr {
        &self.0
    }

    pub fn into_expr(self) -> Expr {
        self.0
    }

    pub fn size(&self) -> usize {
        self.0.size()
    }

    pub fn to_sexpr(&self, lib: &Library) -> String {
        self.0.to_sexpr(lib)
    }
}

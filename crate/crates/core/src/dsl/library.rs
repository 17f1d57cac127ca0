use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{parse_expr, DslError, Expr, Type, Vocabulary};

/// Built-in operations of the starting library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    Identity,
    /// Runs its first argument, then its second.
    Compose,
    /// New node attached to the most recently created node.
    AddAttachedNode,
    /// Edge between the a-th and b-th nodes (creation order, modulo the
    /// node count).
    AddEdge,
    /// Runs its body `min(n, 20)` times.
    Repeat,
    NodeCount,
    Const(usize),
    Succ,
}

impl Builtin {
    pub const ALL: [Builtin; 10] = [
        Builtin::Identity,
        Builtin::Compose,
        Builtin::AddAttachedNode,
        Builtin::AddEdge,
        Builtin::Repeat,
        Builtin::NodeCount,
        Builtin::Const(1),
        Builtin::Const(2),
        Builtin::Const(3),
        Builtin::Succ,
    ];

    pub fn name(self) -> String {
        match self {
            Builtin::Identity => "identity".into(),
            Builtin::Compose => "compose".into(),
            Builtin::AddAttachedNode => "add_attached_node".into(),
            Builtin::AddEdge => "add_edge".into(),
            Builtin::Repeat => "repeat".into(),
            Builtin::NodeCount => "node_count".into(),
            Builtin::Const(n) => n.to_string(),
            Builtin::Succ => "succ".into(),
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn signature(self) -> (Vec<Type>, Type) {
        use Type::*;
        match self {
            Builtin::Identity | Builtin::AddAttachedNode => (vec![], Graph),
            Builtin::Compose => (vec![Graph, Graph], Graph),
            Builtin::AddEdge => (vec![Int, Int], Graph),
            Builtin::Repeat => (vec![Int, Graph], Graph),
            Builtin::NodeCount | Builtin::Const(_) => (vec![], Int),
            Builtin::Succ => (vec![Int], Int),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PrimitiveBody {
    Builtin(Builtin),
    /// Body over holes `#0..#arity`.
    Abstraction(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub name: String,
    pub arg_types: Vec<Type>,
    pub ret: Type,
    pub body: PrimitiveBody,
}

impl Primitive {
    pub fn arity(&self) -> usize {
        self.arg_types.len()
    }

    pub fn is_abstraction(&self) -> bool {
        matches!(self.body, PrimitiveBody::Abstraction(_))
    }
}

/// The current set of primitives and their log-likelihood weights.
/// Primitives are only ever appended, so ids stay valid as it grows.
#[derive(Clone, Debug, PartialEq)]
pub struct Library {
    primitives: Vec<Primitive>,
    logp: Vec<f64>,
    by_name: HashMap<String, usize>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Library {
    /// The built-in library with uniform weights.
    pub fn initial() -> Self {
        let mut lib = Library {
            primitives: Vec::new(),
            logp: Vec::new(),
            by_name: HashMap::new(),
        };
        for b in Builtin::ALL {
            lib.push_builtin(b);
        }
        lib.set_uniform();
        lib
    }

    fn push_builtin(&mut self, b: Builtin) -> usize {
        let (arg_types, ret) = b.signature();
        self.push(Primitive {
            name: b.name(),
            arg_types,
            ret,
            body: PrimitiveBody::Builtin(b),
        })
    }

    fn push(&mut self, p: Primitive) -> usize {
        let id = self.primitives.len();
        self.by_name.insert(p.name.clone(), id);
        self.primitives.push(p);
        self.logp.push(0.0);
        id
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Primitive> {
        self.primitives.get(id)
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Convenience for tests and callers that know a name exists.
    pub fn expect_id(&self, name: &str) -> usize {
        self.id_of(name)
            .unwrap_or_else(|| panic!("no primitive named `{name}`"))
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    pub fn set_logp(&mut self, logp: Vec<f64>) -> Result<(), DslError> {
        if logp.len() != self.primitives.len() {
            return Err(DslError::InvalidLibrary(format!(
                "{} weights for {} primitives",
                logp.len(),
                self.primitives.len()
            )));
        }
        if let Some(bad) = logp.iter().find(|w| !w.is_finite()) {
            return Err(DslError::InvalidLibrary(format!("non-finite weight {bad}")));
        }
        self.logp = logp;
        Ok(())
    }

    pub fn set_uniform(&mut self) {
        let w = -(self.primitives.len() as f64).ln();
        self.logp = vec![w; self.primitives.len()];
    }

    pub fn abstraction_count(&self) -> usize {
        self.primitives
            .iter()
            .filter(|p| p.is_abstraction())
            .count()
    }

    /// A name of the form `f<k>` that is not taken yet.
    pub fn fresh_name(&self) -> String {
        (self.abstraction_count()..)
            .map(|k| format!("f{k}"))
            .find(|n| !self.by_name.contains_key(n))
            .expect("unbounded")
    }

    /// Adds a learned abstraction. Holes must be numbered `#0..#k` with no
    /// gaps; their types are inferred from the positions they occupy.
    pub fn add_abstraction(&mut self, name: &str, body: Expr) -> Result<usize, DslError> {
        if !valid_name(name) || self.by_name.contains_key(name) {
            return Err(DslError::InvalidAbstraction(format!(
                "bad or duplicate name `{name}`"
            )));
        }
        let mut holes = Vec::new();
        let ret = body.infer(self, &mut holes)?;
        let arg_types = holes
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or(DslError::UnboundHole(i)))
            .collect::<Result<Vec<_>, _>>()?;
        if body.size() < 2 {
            return Err(DslError::InvalidAbstraction(
                "body must use at least two primitives".into(),
            ));
        }
        // New primitives start at the current least likely weight.
        let floor = self.logp.iter().copied().fold(f64::INFINITY, f64::min);
        let id = self.push(Primitive {
            name: name.to_string(),
            arg_types,
            ret,
            body: PrimitiveBody::Abstraction(body),
        });
        self.logp[id] = if floor.is_finite() { floor } else { 0.0 };
        Ok(id)
    }

    pub fn to_json(&self) -> Vec<LibraryEntryJson> {
        self.primitives
            .iter()
            .zip(&self.logp)
            .map(|(p, &logp)| LibraryEntryJson {
                name: p.name.clone(),
                arity: p.arity(),
                body: match &p.body {
                    PrimitiveBody::Builtin(_) => "builtin".into(),
                    PrimitiveBody::Abstraction(e) => e.to_sexpr(self),
                },
                logp,
            })
            .collect()
    }

    pub fn from_json(entries: &[LibraryEntryJson]) -> Result<Self, DslError> {
        let mut lib = Library {
            primitives: Vec::new(),
            logp: Vec::new(),
            by_name: HashMap::new(),
        };
        let mut weights = Vec::with_capacity(entries.len());
        for entry in entries {
            if !valid_name(&entry.name) || lib.by_name.contains_key(&entry.name) {
                return Err(DslError::InvalidLibrary(format!(
                    "bad or duplicate name `{}`",
                    entry.name
                )));
            }
            if entry.body == "builtin" {
                let b = Builtin::from_name(&entry.name).ok_or_else(|| {
                    DslError::InvalidLibrary(format!("`{}` is not a builtin", entry.name))
                })?;
                lib.push_builtin(b);
            } else {
                let body = parse_expr(&entry.body, &lib, true)?;
                lib.add_abstraction(&entry.name, body)?;
            }
            let id = lib.len() - 1;
            if lib.primitives[id].arity() != entry.arity {
                return Err(DslError::InvalidLibrary(format!(
                    "`{}` declares arity {} but has {}",
                    entry.name,
                    entry.arity,
                    lib.primitives[id].arity()
                )));
            }
            weights.push(entry.logp);
        }
        lib.set_logp(weights)?;
        Ok(lib)
    }
}

impl Vocabulary for Library {
    fn name(&self, prim: usize) -> &str {
        self.primitives.get(prim).map_or("?", |p| p.name.as_str())
    }
}

/// One library entry on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntryJson {
    pub name: String,
    pub arity: usize,
    /// `"builtin"` or the abstraction body as an s-expression.
    pub body: String,
    pub logp: f64,
}

//! Factor graph of the per-snapshot posterior.
//!
//! Variables are the mobile position `P`, its orientation `ALPHA`, one
//! incidence point `S(j)` per path and the base station `Q`. Each path
//! contributes a distance factor `D(j)` on {P, Q, S(j)}, an AOD factor
//! `AOD(j)` on {Q, S(j)} and an AOA factor `AOA(j)` on {P, ALPHA, S(j)}.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::MIN_PATHS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    Position,
    Orientation,
    Incidence(usize),
    /// Known exactly; only ever sends a Dirac message.
    BaseStation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactorKind {
    Distance,
    Aod,
    Aoa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor {
    pub kind: FactorKind,
    pub path: usize,
}

impl Factor {
    pub fn distance(path: usize) -> Self {
        Factor {
            kind: FactorKind::Distance,
            path,
        }
    }

    pub fn aod(path: usize) -> Self {
        Factor {
            kind: FactorKind::Aod,
            path,
        }
    }

    pub fn aoa(path: usize) -> Self {
        Factor {
            kind: FactorKind::Aoa,
            path,
        }
    }

    /// Variables adjacent to this factor.
    pub fn variables(&self) -> Vec<Variable> {
        let s = Variable::Incidence(self.path);
        match self.kind {
            FactorKind::Distance => vec![Variable::Position, Variable::BaseStation, s],
            FactorKind::Aod => vec![Variable::BaseStation, s],
            FactorKind::Aoa => vec![Variable::Position, Variable::Orientation, s],
        }
    }

    pub fn touches(&self, v: Variable) -> bool {
        self.variables().contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Variable(Variable),
    Factor(Factor),
}

impl Node {
    /// Stable integer code used for seed derivation.
    pub fn code(&self) -> u64 {
        match *self {
            Node::Variable(Variable::Position) => 0,
            Node::Variable(Variable::Orientation) => 1,
            Node::Variable(Variable::BaseStation) => 2,
            Node::Variable(Variable::Incidence(j)) => (1 << 16) | j as u64,
            Node::Factor(f) => {
                let k = match f.kind {
                    FactorKind::Distance => 2,
                    FactorKind::Aod => 3,
                    FactorKind::Aoa => 4,
                };
                (k << 16) | f.path as u64
            }
        }
    }
}

impl From<Variable> for Node {
    fn from(v: Variable) -> Self {
        Node::Variable(v)
    }
}

impl From<Factor> for Node {
    fn from(f: Factor) -> Self {
        Node::Factor(f)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::Position => write!(f, "P"),
            Variable::Orientation => write!(f, "ALPHA"),
            Variable::Incidence(j) => write!(f, "S{j}"),
            Variable::BaseStation => write!(f, "Q"),
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FactorKind::Distance => write!(f, "D{}", self.path),
            FactorKind::Aod => write!(f, "AOD{}", self.path),
            FactorKind::Aoa => write!(f, "AOA{}", self.path),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Variable(v) => v.fmt(f),
            Node::Factor(x) => x.fmt(f),
        }
    }
}

/// Directed edge carrying one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
}

impl Edge {
    pub fn new(from: impl Into<Node>, to: impl Into<Node>) -> Self {
        Edge {
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    n_paths: usize,
}

/// Builds the graph for `n_paths` NLOS paths.
pub fn build_graph(n_paths: usize) -> Result<FactorGraph> {
    if n_paths < MIN_PATHS {
        return Err(Error::InsufficientPaths { found: n_paths });
    }
    Ok(FactorGraph { n_paths })
}

impl FactorGraph {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Estimated variables (everything except `Q`).
    pub fn variables(&self) -> Vec<Variable> {
        let mut v = vec![Variable::Position, Variable::Orientation];
        v.extend((0..self.n_paths).map(Variable::Incidence));
        v
    }

    pub fn factors(&self) -> Vec<Factor> {
        (0..self.n_paths)
            .flat_map(|j| [Factor::distance(j), Factor::aod(j), Factor::aoa(j)])
            .collect()
    }

    pub fn factors_of(&self, v: Variable) -> Vec<Factor> {
        self.factors().into_iter().filter(|f| f.touches(v)).collect()
    }

    pub fn contains(&self, node: Node) -> bool {
        match node {
            Node::Variable(Variable::Incidence(j)) => j < self.n_paths,
            Node::Variable(_) => true,
            Node::Factor(f) => f.path < self.n_paths,
        }
    }

    /// Undirected factor-variable adjacency, `Q` included.
    pub fn edges(&self) -> Vec<(Factor, Variable)> {
        self.factors()
            .into_iter()
            .flat_map(|f| f.variables().into_iter().map(move |v| (f, v)))
            .collect()
    }

    /// Directed edges that carry messages. Nothing is ever sent to `Q`.
    pub fn message_edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (f, v) in self.edges() {
            out.push(Edge::new(v, f));
            if v != Variable::BaseStation {
                out.push(Edge::new(f, v));
            }
        }
        out
    }

    pub fn degree(&self, node: Node) -> usize {
        match node {
            Node::Factor(f) => f.variables().len(),
            Node::Variable(v) => self.factors_of(v).len(),
        }
    }
}

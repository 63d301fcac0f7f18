//! Mixed-integer linear programs with binary variables and their solvers.
//!
//! [`MilpInstance`] is the exchange representation produced by the MPC
//! builders. [`solve_milp`] is the reference branch-and-bound; other solvers
//! plug in through [`MilpBackend`] and the [`BackendRegistry`].

mod backend;
mod bnb;
mod lp;
pub mod mps;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    read_solution_file, solve_mps_file, write_solution_file, BackendHandle, BackendRegistry, MilpBackend,
    ProcessBackend, ReferenceBackend, REFERENCE_BACKEND,
};
pub use bnb::solve_milp;
pub use lp::{solve_lp, LpResult, LpStatus};

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("resource limit reached after {nodes} nodes without an incumbent")]
    ResourceLimit { nodes: usize },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("external backend failed: {0}")]
    Backend(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index of a variable inside one [`MilpInstance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

/// Affine expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(var: VarId, coef: f64) -> Self {
        Self {
            terms: vec![(var, coef)],
            constant: 0.0,
        }
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Merge repeated variables, drop zero coefficients, sort by index.
    pub fn normalized(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        Self {
            terms: merged,
            constant: self.constant,
        }
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        Self::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        Self::constant(c)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self.constant *= k;
        self
    }
}

impl std::iter::Sum for LinExpr {
    fn sum<I: Iterator<Item = LinExpr>>(iter: I) -> LinExpr {
        iter.fold(LinExpr::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    /// Semantic role, e.g. `rho[min,j1]`. Also used as the exported column name.
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
    /// Branching class used by [`BranchingRule::Priority`]; higher first.
    #[serde(default)]
    pub priority: u32,
}

/// `sum(terms) relation rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violate this row (zero when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.relation {
            Relation::Le => (a - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - a).max(0.0),
            Relation::Eq => (a - self.rhs).abs(),
        }
    }
}

/// Minimization problem over bounded continuous and binary variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpInstance {
    pub name: String,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Minimized; the constant is carried as an offset.
    pub objective: LinExpr,
}

impl MilpInstance {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            binary: false,
            priority: 0,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower: 0.0,
            upper: 1.0,
            binary: true,
            priority: 0,
        });
        VarId(self.variables.len() - 1)
    }

    /// Add `lhs relation rhs`; constants on either side move to the right.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        lhs: impl Into<LinExpr>,
        relation: Relation,
        rhs: impl Into<LinExpr>,
    ) {
        let row = (lhs.into() - rhs.into()).normalized();
        self.constraints.push(Constraint {
            name: name.into(),
            terms: row.terms,
            relation,
            rhs: -row.constant,
        });
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.binary).count()
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name).map(VarId)
    }

    /// Range of `expr` over the variable box.
    pub fn interval(&self, expr: &LinExpr) -> (f64, f64) {
        let mut lo = expr.constant;
        let mut hi = expr.constant;
        for (v, c) in &expr.terms {
            let var = &self.variables[v.0];
            let (a, b) = (c * var.lower, c * var.upper);
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.evaluate(values)
    }

    /// Largest bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds = self
            .variables
            .iter()
            .zip(values)
            .map(|(v, x)| (v.lower - x).max(x - v.upper).max(0.0));
        let rows = self.constraints.iter().map(|c| c.violation(values));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.variables.len();
        let bad = |m: String| Err(MilpError::InvalidInstance(m));
        for (i, v) in self.variables.iter().enumerate() {
            if !v.lower.is_finite() || !v.upper.is_finite() || v.lower > v.upper {
                return bad(format!("variable {i} ({}) has invalid bounds", v.name));
            }
            if v.binary && (v.lower < 0.0 || v.upper > 1.0) {
                return bad(format!("binary variable {i} ({}) outside [0, 1]", v.name));
            }
            if v.name.is_empty() || v.name.chars().any(char::is_whitespace) {
                return bad(format!("variable {i} has an unusable name `{}`", v.name));
            }
        }
        let refs = self
            .constraints
            .iter()
            .flat_map(|c| c.terms.iter())
            .chain(self.objective.terms.iter());
        for (v, c) in refs {
            if v.0 >= n {
                return bad(format!("reference to missing variable {}", v.0));
            }
            if !c.is_finite() {
                return bad(format!("non-finite coefficient on variable {}", v.0));
            }
        }
        if let Some(c) = self.constraints.iter().find(|c| !c.rhs.is_finite()) {
            return bad(format!("row {} has a non-finite right-hand side", c.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchingRule {
    /// Branch on the binary closest to 0.5, lowest index on ties.
    MostFractional,
    /// Most fractional among the fractional binaries of the highest
    /// priority class, lowest index on ties.
    Priority,
}

impl BranchingRule {
    pub fn name(self) -> &'static str {
        match self {
            BranchingRule::MostFractional => "most-fractional",
            BranchingRule::Priority => "priority",
        }
    }
}

impl std::fmt::Display for BranchingRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BranchingRule {
    type Err = MilpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [BranchingRule::MostFractional, BranchingRule::Priority]
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| MilpError::InvalidInstance(format!("unknown branching rule `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Absolute optimality gap.
    pub gap_abs: f64,
    pub integrality_tol: f64,
    pub feasibility_tol: f64,
    pub node_limit: Option<usize>,
    pub time_limit: Option<Duration>,
    pub branching: BranchingRule,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_abs: 1e-6,
            integrality_tol: 1e-6,
            feasibility_tol: 1e-7,
            node_limit: None,
            time_limit: None,
            branching: BranchingRule::MostFractional,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), MilpError> {
        if self.gap_abs > 0.0 && self.integrality_tol > 0.0 && self.feasibility_tol > 0.0 {
            Ok(())
        } else {
            Err(MilpError::InvalidInstance("solver tolerances must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// A limit fired; the incumbent is returned without an optimality proof.
    GapLimit,
}

impl fmt::Display for MilpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MilpStatus::Optimal => "optimal",
            MilpStatus::Infeasible => "infeasible",
            MilpStatus::GapLimit => "gap_limit",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: usize,
    pub lp_solves: usize,
    /// Smallest observed `child bound - parent bound`; non-negative up to
    /// LP tolerances.
    pub min_bound_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Objective including the constant offset; `None` when infeasible.
    pub objective: Option<f64>,
    /// Empty when infeasible.
    pub values: Vec<f64>,
    pub best_bound: f64,
    pub stats: SolveStats,
}

impl MilpSolution {
    pub fn infeasible(stats: SolveStats) -> Self {
        Self {
            status: MilpStatus::Infeasible,
            objective: None,
            values: Vec::new(),
            best_bound: f64::INFINITY,
            stats,
        }
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_constants_move_right() {
        let mut m = MilpInstance::new("t");
        let x = m.add_continuous("x", 0.0, 1.0);
        let y = m.add_continuous("y", 0.0, 1.0);
        let lhs = LinExpr::from(x) * 2.0 + LinExpr::constant(1.0) + LinExpr::from(x);
        m.add_constraint("c", lhs, Relation::Le, LinExpr::from(y) + LinExpr::constant(3.0));
        let c = &m.constraints[0];
        assert_eq!(c.terms, vec![(x, 3.0), (y, -1.0)]);
        assert_eq!(c.rhs, 2.0);
        assert_eq!(c.violation(&[1.0, 0.0]), 1.0);
        assert_eq!(m.interval(&(LinExpr::from(x) - LinExpr::from(y))), (-1.0, 1.0));
    }

    #[test]
    fn validation_catches_defects() {
        let mut m = MilpInstance::new("t");
        m.add_continuous("x", 1.0, 0.0);
        assert!(m.validate().is_err());
        let mut m = MilpInstance::new("t");
        m.add_continuous("has space", 0.0, 1.0);
        assert!(m.validate().is_err());
        let mut m = MilpInstance::new("t");
        m.add_continuous("x", 0.0, 1.0);
        m.objective = LinExpr::term(VarId(3), 1.0);
        assert!(m.validate().is_err());
        let mut m = MilpInstance::new("t");
        let z = m.add_binary("z");
        m.variables[z.0].upper = 2.0;
        assert!(m.validate().is_err());
    }
}

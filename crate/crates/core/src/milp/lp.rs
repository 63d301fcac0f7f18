//! Continuous relaxation backed by the `microlp` simplex solver.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};

use super::{MilpError, MilpInstance, Relation, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of the continuous relaxation (binaries relaxed to `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    /// Includes the objective constant; meaningless unless optimal.
    pub objective: f64,
    /// Empty unless optimal.
    pub values: Vec<f64>,
}

/// The relaxation as loaded into the simplex solver.
pub(crate) struct Relaxation {
    problem: Problem,
    pub(crate) vars: Vec<microlp::Variable>,
    offset: f64,
}

impl Relaxation {
    pub(crate) fn new(instance: &MilpInstance) -> Self {
        Self::with_fixed(instance, &[])
    }

    /// Relaxation with the listed variables fixed through their bounds.
    pub(crate) fn with_fixed(instance: &MilpInstance, fixed: &[(usize, f64)]) -> Self {
        Self::build(instance, fixed, &[])
    }

    /// Relaxation with the listed variables fixed through equality rows.
    pub(crate) fn with_fixing_rows(instance: &MilpInstance, fixed: &[(usize, f64)]) -> Self {
        Self::build(instance, &[], fixed)
    }

    fn build(instance: &MilpInstance, fixed: &[(usize, f64)], fixing_rows: &[(usize, f64)]) -> Self {
        let mut bounds: Vec<(f64, f64)> = instance.variables.iter().map(|v| (v.lower, v.upper)).collect();
        for (i, v) in fixed {
            bounds[*i] = (*v, *v);
        }
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let objective = instance.objective.normalized();
        let mut cost = vec![0.0; instance.variables.len()];
        for (v, c) in &objective.terms {
            cost[v.0] = *c;
        }
        let vars: Vec<_> = bounds
            .iter()
            .zip(&cost)
            .map(|(b, c)| problem.add_var(*c, *b))
            .collect();
        for row in &instance.constraints {
            let expr: Vec<_> = merged(&row.terms)
                .into_iter()
                .map(|(i, c)| (vars[i], c))
                .collect();
            let op = match row.relation {
                Relation::Le => ComparisonOp::Le,
                Relation::Ge => ComparisonOp::Ge,
                Relation::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(expr.as_slice(), op, row.rhs);
        }
        for (i, v) in fixing_rows {
            problem.add_constraint([(vars[*i], 1.0)], ComparisonOp::Eq, *v);
        }
        Self {
            problem,
            vars,
            offset: objective.constant,
        }
    }

    pub(crate) fn offset(&self) -> f64 {
        self.offset
    }

    pub(crate) fn solve(&self) -> Result<Node, LpFailure> {
        node_from(self.problem.solve())
    }

    pub(crate) fn values(&self, node: &microlp::Solution) -> Vec<f64> {
        self.vars.iter().map(|v| node.var_value_raw(*v)).collect()
    }
}

/// Warm-startable optimal relaxation.
pub(crate) type Node = microlp::Solution;

pub(crate) enum LpFailure {
    Infeasible,
    Unbounded,
    Error(MilpError),
}

pub(crate) fn node_from(outcome: Result<SolveOutcome, microlp::Error>) -> Result<Node, LpFailure> {
    match outcome {
        Ok(SolveOutcome::Solution(s)) => Ok(s),
        Ok(SolveOutcome::Interrupted(_)) => Err(LpFailure::Error(MilpError::Numerical(
            "simplex interrupted".into(),
        ))),
        Err(microlp::Error::Infeasible) => Err(LpFailure::Infeasible),
        Err(microlp::Error::Unbounded) => Err(LpFailure::Unbounded),
        Err(e) => Err(LpFailure::Error(MilpError::Numerical(e.to_string()))),
    }
}

fn merged(terms: &[(super::VarId, f64)]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = terms.iter().map(|(v, c)| (v.0, *c)).collect();
    out.sort_by_key(|(i, _)| *i);
    out.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    out.retain(|(_, c)| *c != 0.0);
    out
}

/// Violation allowed on a row whose coefficients and right-hand side reach
/// magnitude `scale`.
pub(crate) fn scaled_tol(tol: f64, scale: f64) -> f64 {
    tol * scale.max(1.0)
}

/// Check `values` against `instance` with row-scaled tolerances.
pub(crate) fn verify(instance: &MilpInstance, values: &[f64], tol: f64) -> Result<(), MilpError> {
    for (i, v) in instance.variables.iter().enumerate() {
        let x = values[i];
        let t = scaled_tol(tol, v.lower.abs().max(v.upper.abs()));
        if x < v.lower - t || x > v.upper + t {
            return Err(MilpError::Numerical(format!(
                "variable {} = {x} outside [{}, {}]",
                v.name, v.lower, v.upper
            )));
        }
    }
    for row in &instance.constraints {
        let scale = row
            .terms
            .iter()
            .map(|(v, c)| (c * values[v.0]).abs())
            .fold(row.rhs.abs(), f64::max);
        let viol = row.violation(values);
        if viol > scaled_tol(tol, scale) {
            return Err(MilpError::Numerical(format!(
                "row {} violated by {viol:e}",
                row.name
            )));
        }
    }
    Ok(())
}

/// Solve the continuous relaxation and verify the returned point.
pub fn solve_lp(instance: &MilpInstance, options: &SolveOptions) -> Result<LpResult, MilpError> {
    instance.validate()?;
    options.validate()?;
    let relax = Relaxation::new(instance);
    match relax.solve() {
        Ok(node) => {
            let values = relax.values(&node);
            verify(instance, &values, options.feasibility_tol)?;
            Ok(LpResult {
                status: LpStatus::Optimal,
                objective: node.objective() + relax.offset(),
                values,
            })
        }
        Err(LpFailure::Infeasible) => Ok(LpResult {
            status: LpStatus::Infeasible,
            objective: f64::INFINITY,
            values: Vec::new(),
        }),
        Err(LpFailure::Unbounded) => Ok(LpResult {
            status: LpStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            values: Vec::new(),
        }),
        Err(LpFailure::Error(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::LinExpr;

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y in [0, 10]
        let mut m = MilpInstance::new("lp");
        let x = m.add_continuous("x", 0.0, 10.0);
        let y = m.add_continuous("y", 0.0, 10.0);
        m.add_constraint("a", LinExpr::from(x) + LinExpr::term(y, 2.0), Relation::Le, 4.0);
        m.add_constraint("b", LinExpr::term(x, 3.0) + LinExpr::from(y), Relation::Le, 6.0);
        m.objective = -(LinExpr::from(x) + LinExpr::from(y)) + LinExpr::constant(1.0);
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.values[0] - 1.6).abs() < 1e-9);
        assert!((r.values[1] - 1.2).abs() < 1e-9);
        assert!((r.objective - (1.0 - 2.8)).abs() < 1e-9);
    }

    #[test]
    fn fixing_rows_match_fixed_bounds() {
        let mut m = MilpInstance::new("fix");
        let x = m.add_continuous("x", 0.0, 10.0);
        let z = m.add_binary("z");
        m.add_constraint("a", LinExpr::from(x) - LinExpr::term(z, 4.0), Relation::Le, 1.0);
        m.objective = -LinExpr::from(x) + LinExpr::term(z, 2.0);
        for v in [0.0, 1.0] {
            let a = Relaxation::with_fixed(&m, &[(1, v)]);
            let b = Relaxation::with_fixing_rows(&m, &[(1, v)]);
            let (na, nb) = (a.solve().ok().unwrap(), b.solve().ok().unwrap());
            assert!((na.objective() - nb.objective()).abs() < 1e-12);
            assert_eq!(a.values(&na), b.values(&nb));
            assert_eq!(a.values(&na)[0], 1.0 + 4.0 * v);
        }
    }

    #[test]
    fn single_lower_row() {
        let mut m = MilpInstance::new("one");
        let x = m.add_continuous("x", 0.0, 1.0);
        m.add_constraint("c", x, Relation::Ge, 0.3);
        m.objective = LinExpr::from(x);
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert!((r.objective - 0.3).abs() < 1e-9);
    }

    #[test]
    fn balance_toy() {
        let mut m = MilpInstance::new("balance");
        let pt = m.add_continuous("pt", 0.2, 1.0);
        let ps = m.add_continuous("ps", -1.0, 0.5);
        m.add_constraint("bal", LinExpr::from(pt) + LinExpr::from(ps), Relation::Eq, 1.0);
        m.objective = LinExpr::from(pt);
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert!((r.values[pt.0] - 0.5).abs() < 1e-9);
        assert!((r.values[ps.0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn duplicate_terms_merge() {
        let mut m = MilpInstance::new("dup");
        let x = m.add_continuous("x", 0.0, 10.0);
        m.constraints.push(crate::milp::Constraint {
            name: "c".into(),
            terms: vec![(x, 1.0), (x, 1.0)],
            relation: Relation::Ge,
            rhs: 3.0,
        });
        m.objective = LinExpr::from(x);
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert!((r.values[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_lp() {
        let mut m = MilpInstance::new("inf");
        let x = m.add_continuous("x", 0.0, 1.0);
        m.add_constraint("c", x, Relation::Ge, 2.0);
        let r = solve_lp(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
    }
}

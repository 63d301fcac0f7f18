//! Plan extraction and cross-checking against the dispatch model.

use std::collections::HashMap;

use super::build::horizon_window;
use super::{ControllerConfig, EndpointTrajectory, MpcError, OpenLoopSolution};
use crate::cost::horizon_cost;
use crate::dispatch::{simulate_horizon, StepModel};
use crate::milp::{MilpInstance, MilpSolution, MilpStatus};
use crate::model::{ControlPlan, MicrogridParams};
use crate::scenario::ScenarioWindow;

/// Largest accepted gap between solver values and the dispatch model.
pub const AGREEMENT_TOL: f64 = 1e-6;

struct Lookup<'a> {
    index: HashMap<&'a str, usize>,
    values: &'a [f64],
}

impl Lookup<'_> {
    fn get(&self, name: &str) -> Result<f64, MpcError> {
        self.index
            .get(name)
            .map(|i| self.values[*i])
            .ok_or_else(|| MpcError::EncodingDefect(format!("variable {name} missing from instance")))
    }
}

fn defect(msg: String) -> MpcError {
    MpcError::EncodingDefect(msg)
}

/// Read the plan from `solution`, replay it through the dispatch model along
/// every endpoint copy present in `instance`, and check that unit powers,
/// energies and the cost agree with the solver's values.
pub fn extract_solution(
    solution: &MilpSolution,
    instance: &MilpInstance,
    config: &ControllerConfig,
    params: &MicrogridParams,
    window: &ScenarioWindow,
) -> Result<OpenLoopSolution, MpcError> {
    if solution.status == MilpStatus::Infeasible {
        return Ok(OpenLoopSolution::infeasible(solution.stats.clone()));
    }
    if solution.values.len() != instance.variables.len() {
        return Err(defect("solution length differs from the instance".into()));
    }
    let eff = config.effective_params(params)?;
    let window = horizon_window(config, window)?;
    let np = config.horizon;
    let vals = Lookup {
        index: instance
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect(),
        values: &solution.values,
    };

    let mut plan = ControlPlan {
        u: Vec::with_capacity(np),
        delta: Vec::with_capacity(np),
    };
    for j in 1..=np {
        let u = (0..eff.num_units())
            .map(|i| Ok(vals.get(&format!("u[{j},{i}]"))?.clamp(eff.u_min[i], eff.u_max[i])))
            .collect::<Result<Vec<_>, MpcError>>()?;
        let d = eff
            .conventional()
            .map(|t| Ok(vals.get(&format!("delta[{j},{t}]"))? > 0.5))
            .collect::<Result<Vec<_>, MpcError>>()?;
        plan.u.push(u);
        plan.delta.push(d);
    }

    let mut trajectories = Vec::new();
    for e in config.variant.endpoints() {
        let tag = e.label();
        if !vals.index.contains_key(format!("rho[{tag},1]").as_str()) {
            continue;
        }
        let rows = e.rows(&window);
        let outcomes = simulate_horizon(&eff, rows, &plan, &window.x0)?;
        let mut solver_rho = Vec::with_capacity(np);
        let mut x_prev = window.x0.clone();
        for (j, out) in outcomes.iter().enumerate() {
            let step = j + 1;
            let rho = vals.get(&format!("rho[{tag},{step}]"))?;
            let model = StepModel::new(&eff, &plan.u[j], &plan.delta[j], &x_prev, &rows[j])?;
            let bounds = model.bounds();
            let excess = (bounds.min - out.rho).max(out.rho - bounds.max);
            if !out.feasible && excess > AGREEMENT_TOL {
                return Err(defect(format!(
                    "{tag} copy step {step}: solver feasible but dispatch rho {} leaves [{}, {}]",
                    out.rho, bounds.min, bounds.max
                )));
            }
            // Unit laws evaluated at the solver's rho must reproduce both the
            // solver's powers and the settled dispatch powers.
            let at_solver_rho = model.unit_powers(rho);
            for i in 0..eff.num_units() {
                let pv = vals.get(&format!("p[{tag},{step},{i}]"))?;
                let gaps = [(pv - out.p[i]).abs(), (at_solver_rho[i] - out.p[i]).abs()];
                if gaps.iter().any(|g| *g > AGREEMENT_TOL) {
                    return Err(defect(format!(
                        "{tag} copy step {step} unit {i}: solver {pv}, law at solver rho {}, dispatch {}",
                        at_solver_rho[i], out.p[i]
                    )));
                }
            }
            for s in 0..eff.num_storage {
                let xv = vals.get(&format!("x[{tag},{step},{s}]"))?;
                if (xv - out.x[s]).abs() > AGREEMENT_TOL {
                    return Err(defect(format!(
                        "{tag} copy step {step} storage {s}: solver energy {xv}, dispatch {}",
                        out.x[s]
                    )));
                }
            }
            x_prev.clone_from(&out.x);
            solver_rho.push(rho);
        }
        trajectories.push(EndpointTrajectory {
            endpoint: *e,
            outcomes,
            solver_rho,
        });
    }

    let objective = solution
        .objective
        .ok_or_else(|| defect("feasible solution without objective".into()))?;
    let predicted_cost = match trajectories.iter().find(|t| t.endpoint == super::Endpoint::Min) {
        Some(t) => {
            let replayed = horizon_cost(&t.outcomes, &plan, &window.delta0, &eff.cost_weights)?;
            if (replayed - objective).abs() > AGREEMENT_TOL {
                return Err(defect(format!(
                    "solver objective {objective} differs from replayed cost {replayed}"
                )));
            }
            Some(objective)
        }
        None => None,
    };

    Ok(OpenLoopSolution {
        status: solution.status,
        plan: Some(plan),
        predicted_cost,
        best_bound: Some(solution.best_bound),
        trajectories,
        stats: solution.stats.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve_milp, SolveOptions};
    use crate::mpc::{build_problem, ControllerVariant, Endpoint};

    fn params() -> MicrogridParams {
        MicrogridParams::case_study_reduced(1, 1.0)
    }

    fn solve(variant: ControllerVariant, window: &ScenarioWindow) -> OpenLoopSolution {
        let cfg = ControllerConfig::new(variant, window.len());
        let inst = build_problem(&cfg, window, &params()).unwrap();
        let sol = solve_milp(&inst, &SolveOptions::default()).unwrap();
        extract_solution(&sol, &inst, &cfg, &params(), window).unwrap()
    }

    #[test]
    fn prescient_toy_round_trip() {
        let w = ScenarioWindow::certain(vec![vec![0.3, -0.8]], vec![2.0], vec![false]);
        let s = solve(ControllerVariant::Prescient, &w);
        assert_eq!(s.status, MilpStatus::Optimal);
        let t = s.trajectory(Endpoint::Min).unwrap();
        assert!(t.outcomes[0].feasible);
        assert!(s.trajectory(Endpoint::Max).is_none());
    }

    #[test]
    fn infeasible_has_no_plan() {
        // Load beyond every unit's combined capacity.
        let w = ScenarioWindow::certain(vec![vec![0.3, -5.0]], vec![2.0], vec![false]);
        let s = solve(ControllerVariant::SatResDroopMm, &w);
        assert_eq!(s.status, MilpStatus::Infeasible);
        assert!(s.plan.is_none() && s.predicted_cost.is_none());
    }

    #[test]
    fn all_variants_round_trip_two_steps() {
        let w = ScenarioWindow {
            w_min: vec![vec![0.2, -0.9], vec![0.1, -0.7]],
            w_max: vec![vec![0.4, -0.7], vec![0.3, -0.5]],
            x0: vec![1.0],
            delta0: vec![true],
        };
        for v in ControllerVariant::ALL {
            let s = solve(v, &w);
            assert_eq!(s.status, MilpStatus::Optimal, "{v}");
            assert_eq!(s.trajectories.len(), v.endpoints().len());
        }
    }
}

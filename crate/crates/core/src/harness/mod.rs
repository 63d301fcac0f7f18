//! Receding-horizon closed loop, controller comparison, synthetic scenarios,
//! output files and the randomized verification suite.

mod compare;
mod output;
mod synthetic;
mod verify;

use crate::clock::Stopwatch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::stage_cost;
use crate::dispatch::dispatch_step;
use crate::milp::{BranchingRule, MilpBackend, MilpError, MilpStatus, SolveOptions};
use crate::model::{MicrogridParams, ModelError, StepOutcome};
use crate::mpc::{diagnose_infeasibility, solve_open_loop, ControllerConfig, Endpoint, MpcError, OpenLoopSolution};
use crate::oracles::OracleError;
use crate::scenario::{Scenario, ScenarioError, ScenarioWindow};

pub use compare::{compare_controllers, CompareSettings, Comparison, ControllerComparison, InitialCondition};
pub use output::{comparison_csv, metrics_csv, trajectory_csv};
pub use synthetic::gen_synthetic_scenario;
pub use verify::{
    counterexample_instance, run_verification_suite, run_verification_suite_with, suite_endpoint_sufficiency,
    suite_inclusion, suite_rho_monotone, suite_step_monotone, suite_milp_enumeration, suite_rho_oracle,
    suite_storage_equivalence, suite_worst_case_at_min, Mutation, SuiteReport, VerificationReport, VerifyOptions,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("controller infeasible ({})", describe_endpoints(.endpoints))]
    Infeasible { endpoints: Vec<(Endpoint, bool)> },
    #[error("{controller}: {source}")]
    Controller {
        controller: String,
        #[source]
        source: Box<HarnessError>,
    },
}

fn describe_endpoints(endpoints: &[(Endpoint, bool)]) -> String {
    let failing: Vec<_> = endpoints.iter().filter(|(_, ok)| !ok).map(|(e, _)| e.label()).collect();
    if failing.is_empty() {
        "each endpoint is feasible alone; only the combination fails".into()
    } else {
        format!("infeasible alone at endpoint {}", failing.join(" and "))
    }
}

impl HarnessError {
    /// True if the error is a controller or plan infeasibility.
    pub fn is_infeasible(&self) -> bool {
        match self {
            HarnessError::Infeasible { .. } => true,
            HarnessError::Controller { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }

    /// True if a solver limit fired before any solution was found.
    pub fn is_resource(&self) -> bool {
        match self {
            HarnessError::Mpc(MpcError::Milp(MilpError::ResourceLimit { .. })) => true,
            HarnessError::Controller { source, .. } => source.is_resource(),
            _ => false,
        }
    }
}

/// Solver options used by the harness: the default tolerances with switch
/// statuses branched on first.
pub fn default_solve_options() -> SolveOptions {
    SolveOptions {
        branching: BranchingRule::Priority,
        ..SolveOptions::default()
    }
}

/// Control applied at the current sample and the open-loop solution behind it.
#[derive(Debug, Clone)]
pub struct MpcDecision {
    pub u: Vec<f64>,
    pub delta: Vec<bool>,
    pub solution: OpenLoopSolution,
}

/// Solve the open-loop problem from the current state and return its first
/// control action.
pub fn mpc_step(
    config: &ControllerConfig,
    current_x: &[f64],
    current_delta: &[bool],
    forecast: &ScenarioWindow,
    params: &MicrogridParams,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
) -> Result<MpcDecision, HarnessError> {
    if forecast.len() < config.horizon {
        return Err(MpcError::WindowTooShort {
            needed: config.horizon,
            found: forecast.len(),
        }
        .into());
    }
    let window = ScenarioWindow {
        w_min: forecast.w_min[..config.horizon].to_vec(),
        w_max: forecast.w_max[..config.horizon].to_vec(),
        x0: current_x.to_vec(),
        delta0: current_delta.to_vec(),
    };
    let solution = solve_open_loop(config, &window, params, backend, options)?;
    let Some(plan) = &solution.plan else {
        let endpoints = diagnose_infeasibility(config, &window, params, backend, options)?;
        return Err(HarnessError::Infeasible { endpoints });
    };
    Ok(MpcDecision {
        u: plan.u[0].clone(),
        delta: plan.delta[0].clone(),
        solution,
    })
}

/// Disturbance applied to the plant during a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub enum RealizationRule {
    /// Lower forecast bound, the worst case for the cost.
    Min,
    Max,
    /// Explicit rows, one per simulated sample.
    Trace(Vec<Vec<f64>>),
}

impl RealizationRule {
    fn row<'a>(&'a self, scenario: &'a Scenario, k: usize) -> &'a [f64] {
        match self {
            RealizationRule::Min => &scenario.w_min[k],
            RealizationRule::Max => &scenario.w_max[k],
            RealizationRule::Trace(rows) => &rows[k],
        }
    }
}

/// One closed-loop sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based sample index.
    pub step: usize,
    pub u: Vec<f64>,
    pub delta: Vec<bool>,
    pub w: Vec<f64>,
    pub outcome: StepOutcome,
    pub stage_cost: f64,
    pub status: MilpStatus,
    pub predicted_cost: Option<f64>,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_sample_cost: f64,
    pub per_sample_res_energy: f64,
    pub per_sample_conventional_energy: f64,
    /// Total count over the run, not per sample.
    pub switching_count: usize,
}

impl Metrics {
    /// Aggregate the logged samples; all zeros for an empty run.
    pub fn from_steps(steps: &[StepRecord], delta0: &[bool], params: &MicrogridParams) -> Self {
        let ns = steps.len().max(1) as f64;
        let ts = params.sampling_time;
        let mut prev = delta0;
        let mut switching_count = 0;
        let (mut cost, mut res, mut conv) = (0.0, 0.0, 0.0);
        for s in steps {
            cost += s.stage_cost;
            res += params.renewable().map(|i| ts * s.outcome.p[i]).sum::<f64>();
            conv += params.conventional().map(|i| ts * s.outcome.p[i]).sum::<f64>();
            switching_count += s.delta.iter().zip(prev).filter(|(a, b)| a != b).count();
            prev = &s.delta;
        }
        Self {
            per_sample_cost: cost / ns,
            per_sample_res_energy: res / ns,
            per_sample_conventional_energy: conv / ns,
            switching_count,
        }
    }
}

/// Why a closed-loop run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    /// 1-based sample at which the controller failed.
    pub step: usize,
    pub infeasible: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub controller: String,
    pub delta0: Vec<bool>,
    pub steps: Vec<StepRecord>,
    /// Over the completed samples.
    pub metrics: Metrics,
    pub aborted: Option<Abort>,
}

/// Number of closed-loop samples a scenario supports with full windows.
pub fn simulation_length(scenario: &Scenario, horizon: usize) -> usize {
    scenario.w_min.len().min(scenario.w_max.len()).saturating_sub(horizon)
}

/// Receding-horizon simulation over `simulation_length` samples, or fewer if
/// `max_steps` is given. The plant uses the controller's droop gains. A
/// controller failure ends the run and is recorded in `aborted`.
pub fn closed_loop_simulate(
    config: &ControllerConfig,
    scenario: &Scenario,
    rule: &RealizationRule,
    params: &MicrogridParams,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
    max_steps: Option<usize>,
) -> Result<SimRecord, HarnessError> {
    let plant = config.effective_params(params)?;
    let available = simulation_length(scenario, config.horizon);
    let ns = max_steps.map_or(available, |m| m.min(available));
    if ns == 0 {
        return Err(HarnessError::Input(format!(
            "scenario has {} samples, fewer than horizon {} plus one",
            scenario.w_min.len(),
            config.horizon
        )));
    }
    if let RealizationRule::Trace(rows) = rule {
        if rows.len() < ns {
            return Err(HarnessError::Input(format!("trace has {} rows, need {ns}", rows.len())));
        }
        if let Some(k) = rows.iter().take(ns).position(|r| r.len() != params.num_disturbances()) {
            return Err(HarnessError::Input(format!(
                "trace row {} has the wrong number of entries",
                k + 1
            )));
        }
    }

    let mut x = scenario.x0.clone();
    let mut delta = scenario.delta0.clone();
    let mut steps = Vec::with_capacity(ns);
    let mut aborted = None;
    for k in 0..ns {
        let window = scenario
            .window(k, config.horizon, x.clone(), delta.clone())
            .expect("window length checked against the scenario");
        let started = Stopwatch::start();
        let decision = match mpc_step(config, &x, &delta, &window, params, backend, options) {
            Ok(d) => d,
            Err(e @ (HarnessError::Infeasible { .. } | HarnessError::Mpc(MpcError::Milp(_)))) => {
                aborted = Some(Abort {
                    step: k + 1,
                    infeasible: e.is_infeasible(),
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let solve_seconds = started.elapsed().as_secs_f64();
        let w = rule.row(scenario, k).to_vec();
        let outcome = dispatch_step(&plant, &x, &decision.u, &decision.delta, &w)?;
        let cost = stage_cost(&outcome.p, &decision.delta, &delta, &plant.cost_weights)?;
        x.clone_from(&outcome.x);
        delta.clone_from(&decision.delta);
        steps.push(StepRecord {
            step: k + 1,
            u: decision.u,
            delta: decision.delta,
            w,
            outcome,
            stage_cost: cost,
            status: decision.solution.status,
            predicted_cost: decision.solution.predicted_cost,
            solve_seconds,
        });
    }
    Ok(SimRecord {
        controller: config.variant.cli_name().to_string(),
        metrics: Metrics::from_steps(&steps, &scenario.delta0, &plant),
        delta0: scenario.delta0.clone(),
        steps,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::ReferenceBackend;
    use crate::mpc::ControllerVariant;

    fn toy_scenario(w_min: Vec<Vec<f64>>, w_max: Vec<Vec<f64>>) -> Scenario {
        Scenario {
            horizon: 2,
            w_min,
            w_max,
            x0: vec![2.0],
            delta0: vec![false],
        }
    }

    fn run(variant: ControllerVariant, scenario: &Scenario, np: usize) -> SimRecord {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        closed_loop_simulate(
            &ControllerConfig::new(variant, np),
            scenario,
            &RealizationRule::Min,
            &p,
            &ReferenceBackend,
            &default_solve_options(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_sample_matches_one_step() {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let rows = vec![vec![0.3, -0.8], vec![0.2, -0.6]];
        let s = toy_scenario(rows.clone(), rows);
        let cfg = ControllerConfig::new(ControllerVariant::SatResDroopMm, 1);
        let rec = run(ControllerVariant::SatResDroopMm, &s, 1);
        assert_eq!(rec.steps.len(), 1);
        let window = s.window(0, 1, s.x0.clone(), s.delta0.clone()).unwrap();
        let d = mpc_step(&cfg, &s.x0, &s.delta0, &window, &p, &ReferenceBackend, &default_solve_options()).unwrap();
        let out = dispatch_step(&p, &s.x0, &d.u, &d.delta, &s.w_min[0]).unwrap();
        assert_eq!(rec.steps[0].outcome, out);
        assert_eq!(rec.steps[0].u, d.solution.plan.unwrap().u[0]);
    }

    #[test]
    fn zero_uncertainty_costs_agree() {
        let rows = vec![vec![0.3, -0.8], vec![0.2, -0.6], vec![0.5, -0.9], vec![0.1, -0.7]];
        let s = toy_scenario(rows.clone(), rows);
        let costs: Vec<f64> = ControllerVariant::ALL
            .iter()
            .filter(|v| v.renewable_droop())
            .map(|v| run(*v, &s, 2).metrics.per_sample_cost)
            .collect();
        for c in &costs {
            assert!((c - costs[0]).abs() < 1e-6, "{costs:?}");
        }
    }

    #[test]
    fn metrics_match_recomputation() {
        let rows_min = vec![vec![0.3, -0.8], vec![0.2, -0.6], vec![0.5, -0.9]];
        let rows_max = vec![vec![0.4, -0.7], vec![0.3, -0.5], vec![0.6, -0.8]];
        let s = toy_scenario(rows_min, rows_max);
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let rec = run(ControllerVariant::SatResDroopMm, &s, 1);
        assert!(rec.aborted.is_none());
        assert_eq!(rec.steps.len(), 2);
        let mut prev = s.delta0.clone();
        let mut total = 0.0;
        for st in &rec.steps {
            total += stage_cost(&st.outcome.p, &st.delta, &prev, &p.cost_weights).unwrap();
            prev.clone_from(&st.delta);
        }
        assert!((rec.metrics.per_sample_cost - total / 2.0).abs() < 1e-9);
        let res: f64 = rec.steps.iter().map(|st| 0.25 * st.outcome.p[2]).sum();
        assert!((rec.metrics.per_sample_res_energy - res / 2.0).abs() < 1e-12);
        assert!(rec.metrics.per_sample_conventional_energy >= 0.0);
    }

    #[test]
    fn storage_only_two_steps_by_hand() {
        let p = MicrogridParams {
            num_conventional: 0,
            num_storage: 1,
            num_renewable: 0,
            num_loads: 1,
            u_min: vec![-5.0],
            u_max: vec![5.0],
            p_min: vec![-1.0],
            p_max: vec![1.0],
            x_min: vec![0.0],
            x_max: vec![6.0],
            chi: vec![1.0],
            sampling_time: 0.25,
            cost_weights: crate::model::CostWeights {
                c_t: vec![],
                c_on: vec![],
                c_sw: vec![],
                c_s: vec![0.9],
            },
            renewable_cap: vec![],
        };
        let rows = vec![vec![-0.5], vec![-0.5], vec![-0.5]];
        let s = Scenario {
            horizon: 1,
            w_min: rows.clone(),
            w_max: rows,
            x0: vec![2.0],
            delta0: vec![],
        };
        let rec = closed_loop_simulate(
            &ControllerConfig::new(ControllerVariant::Prescient, 1),
            &s,
            &RealizationRule::Min,
            &p,
            &ReferenceBackend,
            &default_solve_options(),
            None,
        )
        .unwrap();
        // The storage carries the load: 0.9 * 0.5 per sample.
        assert!((rec.metrics.per_sample_cost - 0.45).abs() < 1e-9);
        assert!((rec.steps[1].outcome.x[0] - 1.75).abs() < 1e-12);
    }

    #[test]
    fn infeasibility_keeps_partial_record() {
        let rows = vec![vec![0.3, -0.8], vec![0.2, -5.0], vec![0.5, -0.9]];
        let s = toy_scenario(rows.clone(), rows);
        let rec = run(ControllerVariant::SatResDroopMm, &s, 1);
        assert_eq!(rec.steps.len(), 1);
        let a = rec.aborted.unwrap();
        assert_eq!(a.step, 2);
        assert!(a.infeasible);
        assert!(a.message.contains("min"), "{}", a.message);
    }

    #[test]
    fn short_scenario_rejected() {
        let rows = vec![vec![0.3, -0.8]];
        let s = toy_scenario(rows.clone(), rows);
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let err = closed_loop_simulate(
            &ControllerConfig::new(ControllerVariant::Prescient, 1),
            &s,
            &RealizationRule::Min,
            &p,
            &ReferenceBackend,
            &default_solve_options(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, HarnessError::Input(_)));
    }
}

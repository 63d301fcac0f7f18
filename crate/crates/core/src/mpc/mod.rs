//! Minimax MPC problems in their two-endpoint mixed-integer form.
//!
//! Every robust variant keeps one copy of the physical variables (ρ, unit
//! powers, storage energies and region binaries) for the lower disturbance
//! sequence and one for the upper sequence; set-points and switch statuses
//! are shared. The cost is evaluated on the lower copy only. The prescient
//! controller keeps the lower copy alone.
//!
//! Variable names double as role annotations: `u[j,i]`, `delta[j,t]`,
//! `sw[j,t]`, and per copy `rho[e,j]`, `p[e,j,i]`, `x[e,j,s]` with
//! `e in {min, max}`, 1-based step `j` and 0-based unit index `i`.

mod build;
mod encode;
mod extract;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{MilpBackend, MilpError, MilpStatus, SolveOptions, SolveStats};
use crate::model::{ControlPlan, MicrogridParams, ModelError, StepOutcome};
use crate::scenario::{ScenarioWindow, Violation};

pub use build::{build_problem, build_problem_for};
pub use encode::{
    derive_big_m, encode_abs_switching, encode_min, encode_saturation, encode_switch_product,
    saturation_big_m, EncodingConstants, SatEncoding,
};
pub use extract::{extract_solution, AGREEMENT_TOL};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("forecast window has {found} steps but the horizon needs {needed}")]
    WindowTooShort { needed: usize, found: usize },
    #[error("invalid forecast window: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidWindow(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    /// The solver's point disagrees with the plant model: an encoding bug.
    #[error("encoding defect: {0}")]
    EncodingDefect(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerVariant {
    /// Perfect knowledge of the lower disturbance sequence.
    Prescient,
    /// Minimax with hard limits, renewables not sharing.
    Mm,
    /// Minimax with saturation, renewables not sharing.
    SatMm,
    /// Minimax with hard limits and renewable droop.
    ResDroopMm,
    /// Minimax with saturation and renewable droop.
    SatResDroopMm,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 5] = [
        ControllerVariant::Prescient,
        ControllerVariant::Mm,
        ControllerVariant::SatMm,
        ControllerVariant::ResDroopMm,
        ControllerVariant::SatResDroopMm,
    ];

    /// Name used on the command line and in output files.
    pub fn cli_name(self) -> &'static str {
        match self {
            ControllerVariant::Prescient => "prescient",
            ControllerVariant::Mm => "mm",
            ControllerVariant::SatMm => "sat-mm",
            ControllerVariant::ResDroopMm => "res-mm",
            ControllerVariant::SatResDroopMm => "sat-res-mm",
        }
    }

    pub fn saturated(self) -> bool {
        !matches!(self, ControllerVariant::Mm | ControllerVariant::ResDroopMm)
    }

    pub fn renewable_droop(self) -> bool {
        !matches!(self, ControllerVariant::Mm | ControllerVariant::SatMm)
    }

    pub fn endpoints(self) -> &'static [Endpoint] {
        match self {
            ControllerVariant::Prescient => &[Endpoint::Min],
            _ => &[Endpoint::Min, Endpoint::Max],
        }
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for ControllerVariant {
    type Err = MpcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.cli_name() == s)
            .ok_or_else(|| MpcError::InvalidConfig(format!("unknown controller `{s}`")))
    }
}

/// One endpoint disturbance sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Min,
    Max,
}

impl Endpoint {
    pub fn label(self) -> &'static str {
        match self {
            Endpoint::Min => "min",
            Endpoint::Max => "max",
        }
    }

    pub fn rows(self, window: &ScenarioWindow) -> &[Vec<f64>] {
        match self {
            Endpoint::Min => &window.w_min,
            Endpoint::Max => &window.w_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub variant: ControllerVariant,
    pub horizon: usize,
    /// Replaces the parameter set's droop gains.
    pub chi_override: Option<Vec<f64>>,
}

impl ControllerConfig {
    pub fn new(variant: ControllerVariant, horizon: usize) -> Self {
        Self {
            variant,
            horizon,
            chi_override: None,
        }
    }

    pub fn validate(&self, params: &MicrogridParams) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::InvalidConfig("horizon must be at least 1".into()));
        }
        if let Some(chi) = &self.chi_override {
            if chi.len() != params.num_units() {
                return Err(MpcError::InvalidConfig(format!(
                    "chi_override has {} entries, expected {}",
                    chi.len(),
                    params.num_units()
                )));
            }
            if chi.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                return Err(MpcError::InvalidConfig("chi_override must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    /// Parameters with the droop gains this controller assumes, which are
    /// also the gains of the plant it drives. Variants without renewable
    /// droop zero the renewable gains.
    pub fn effective_params(&self, params: &MicrogridParams) -> Result<MicrogridParams, MpcError> {
        self.validate(params)?;
        let mut chi = self.chi_override.clone().unwrap_or_else(|| params.chi.clone());
        if !self.variant.renewable_droop() {
            for i in params.renewable() {
                chi[i] = 0.0;
            }
        }
        Ok(params.with_chi(chi)?)
    }
}

/// Predicted plant response along one endpoint sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointTrajectory {
    pub endpoint: Endpoint,
    /// Recomputed by the dispatch model from the extracted plan.
    pub outcomes: Vec<StepOutcome>,
    /// ρ as chosen by the solver; may differ from the dispatch value inside
    /// a flat run where every unit power is unchanged.
    pub solver_rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopSolution {
    pub status: MilpStatus,
    pub plan: Option<ControlPlan>,
    /// Horizon cost along the lower disturbance sequence.
    pub predicted_cost: Option<f64>,
    pub best_bound: Option<f64>,
    pub trajectories: Vec<EndpointTrajectory>,
    pub stats: SolveStats,
}

impl OpenLoopSolution {
    pub fn infeasible(stats: SolveStats) -> Self {
        Self {
            status: MilpStatus::Infeasible,
            plan: None,
            predicted_cost: None,
            best_bound: None,
            trajectories: Vec::new(),
            stats,
        }
    }

    pub fn trajectory(&self, endpoint: Endpoint) -> Option<&EndpointTrajectory> {
        self.trajectories.iter().find(|t| t.endpoint == endpoint)
    }
}

/// Build, solve and extract one open-loop problem.
pub fn solve_open_loop(
    config: &ControllerConfig,
    window: &ScenarioWindow,
    params: &MicrogridParams,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
) -> Result<OpenLoopSolution, MpcError> {
    let instance = build_problem(config, window, params)?;
    let solution = backend.solve(&instance, options)?;
    extract_solution(&solution, &instance, config, params, window)
}

/// Solve each endpoint copy on its own to locate the source of an
/// infeasible problem. Returns `(endpoint, feasible alone)` pairs.
pub fn diagnose_infeasibility(
    config: &ControllerConfig,
    window: &ScenarioWindow,
    params: &MicrogridParams,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
) -> Result<Vec<(Endpoint, bool)>, MpcError> {
    config
        .variant
        .endpoints()
        .iter()
        .map(|e| {
            let instance = build_problem_for(config, window, params, &[*e])?;
            let sol = backend.solve(&instance, options)?;
            Ok((*e, sol.status != MilpStatus::Infeasible))
        })
        .collect()
}

/// Free-MPS text of the problem, with a header describing the roles and
/// big-M constants.
pub fn export_mps(
    config: &ControllerConfig,
    window: &ScenarioWindow,
    params: &MicrogridParams,
) -> Result<String, MpcError> {
    let instance = build_problem(config, window, params)?;
    let eff = config.effective_params(params)?;
    let consts = derive_big_m(&eff, &build::horizon_window(config, window)?)?;
    let mut comments = vec![
        format!("controller {} horizon {}", config.variant, config.horizon),
        format!(
            "{} variables ({} binary), {} rows",
            instance.variables.len(),
            instance.num_binaries(),
            instance.constraints.len()
        ),
        "roles: u[j,i] set-point, delta[j,t] switch, sw[j,t] switching indicator,".into(),
        "  rho[e,j], p[e,j,i], x[e,j,s] per endpoint copy e; steps j are 1-based".into(),
    ];
    comments.extend(consts.entries().iter().map(|(k, v)| format!("big-M {k} = {v}")));
    Ok(crate::milp::mps::write_mps(&instance, &comments)?)
}

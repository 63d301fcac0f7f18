//! Robust energy management for islanded microgrids whose units share power
//! through saturated droop control.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`], [`cost`], [`scenario`]: domain types, stage costs, forecasts.
//! * [`dispatch`]: exact steady-state response of the droop layer.
//! * [`milp`]: mixed-integer programs, a reference branch-and-bound solver
//!   and the MPS exchange format.
//! * [`mpc`]: minimax MPC problems in their two-endpoint form.
//! * [`oracles`]: slow, independent brute-force checkers.
//! * [`harness`]: closed-loop simulation, comparisons, synthetic scenarios
//!   and the randomized verification suite.

mod clock;
pub mod cost;
pub mod dispatch;
pub mod harness;
pub mod milp;
pub mod model;
pub mod mpc;
pub mod oracles;
pub mod scenario;

#[cfg(test)]
pub(crate) mod testutil;

pub use cost::{horizon_cost, stage_cost};
pub use dispatch::{dispatch_step, rho_bounds, simulate_horizon, solve_rho, RhoBounds, StepModel};
pub use model::{
    saturate, ControlPlan, CostWeights, MicrogridParams, ModelError, SatFlag, StepOutcome,
};
pub use scenario::{validate_scenario, Scenario, ScenarioFile, ScenarioWindow};

//! Steady-state response of the droop-controlled lower layer with saturation.
//!
//! Every unit follows `p_i = sat(lo_i, u_i + chi_i * rho, hi_i)` (conventional
//! units only while switched on). The plant settles on the largest `rho` that
//! zeroes the augmented balance
//!
//! ```text
//! f(rho) = min(0, rho - rho_min) + max(0, rho - rho_max) + sum(p(rho)) + sum(w_load)
//! ```
//!
//! which is continuous, piecewise affine, non-decreasing and surjective. The
//! step is feasible when that root lies inside `[rho_min, rho_max]`.

use serde::{Deserialize, Serialize};

use crate::model::{
    check_len, dynamic_storage_limits, saturate, ControlPlan, MicrogridParams, ModelError, SatFlag,
    StepOutcome, UnitKind,
};

/// Breakpoints closer than this are merged and balance values within it
/// count as zero.
pub const BREAKPOINT_TOL: f64 = 1e-12;

/// Slack on the power-sharing bounds when flagging feasibility.
pub const RHO_FEASIBILITY_TOL: f64 = 1e-9;

/// Interval of power-sharing values beyond which every droop unit is
/// saturated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoBounds {
    pub min: f64,
    pub max: f64,
}

impl RhoBounds {
    pub fn contains(&self, rho: f64) -> bool {
        rho >= self.min - RHO_FEASIBILITY_TOL && rho <= self.max + RHO_FEASIBILITY_TOL
    }
}

pub fn rho_bounds(params: &MicrogridParams) -> Result<RhoBounds, ModelError> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for i in 0..params.num_units() {
        let chi = params.chi[i];
        if chi > 0.0 {
            min = min.min((params.p_min[i] - params.u_max[i]) / chi);
            max = max.max((params.sharing_upper(i) - params.u_min[i]) / chi);
        }
    }
    if min.is_finite() && max.is_finite() {
        Ok(RhoBounds { min, max })
    } else {
        Err(ModelError::NoDroop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakpointSource {
    Unit { unit: usize, bound: BoundKind },
    RhoMin,
    RhoMax,
}

/// Abscissa where the balance function changes slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub rho: f64,
    pub source: BreakpointSource,
}

#[derive(Debug, Clone, Copy)]
struct UnitLaw {
    setpoint: f64,
    chi: f64,
    lower: f64,
    upper: f64,
    online: bool,
}

impl UnitLaw {
    fn power(&self, rho: f64) -> f64 {
        if !self.online {
            return 0.0;
        }
        let v = self.setpoint + self.chi * rho;
        if v < self.lower {
            self.lower
        } else if v > self.upper {
            self.upper
        } else {
            v
        }
    }

    fn flag(&self, rho: f64) -> SatFlag {
        if !self.online {
            return SatFlag::Off;
        }
        let v = self.setpoint + self.chi * rho;
        if v < self.lower - BREAKPOINT_TOL {
            SatFlag::AtLower
        } else if v > self.upper + BREAKPOINT_TOL {
            SatFlag::AtUpper
        } else {
            SatFlag::Interior
        }
    }
}

/// Droop laws of all units frozen for one sampling period.
#[derive(Debug, Clone)]
pub struct StepModel {
    laws: Vec<UnitLaw>,
    load: f64,
    bounds: RhoBounds,
    load_sign: f64,
}

impl StepModel {
    /// Freeze the unit laws for set-points `u`, switch statuses `delta`,
    /// storage energies `x_prev` at the start of the step and disturbance `w`.
    pub fn new(
        params: &MicrogridParams,
        u: &[f64],
        delta: &[bool],
        x_prev: &[f64],
        w: &[f64],
    ) -> Result<Self, ModelError> {
        check_len("set-points", params.num_units(), u.len())?;
        check_len("switch statuses", params.num_conventional, delta.len())?;
        check_len("disturbance", params.num_disturbances(), w.len())?;
        let bounds = rho_bounds(params)?;
        let (s_lo, s_hi) = dynamic_storage_limits(x_prev, params)?;
        let mut laws = Vec::with_capacity(params.num_units());
        for i in 0..params.num_units() {
            let (lower, upper, online) = match params.unit_kind(i) {
                UnitKind::Conventional => (params.p_min[i], params.p_max[i], delta[i]),
                UnitKind::Storage => {
                    let s = i - params.storage().start;
                    (s_lo[s], s_hi[s], true)
                }
                UnitKind::Renewable => {
                    let r = i - params.renewable().start;
                    (params.p_min[i], w[r], true)
                }
            };
            if lower > upper {
                return Err(ModelError::InvalidBounds { lo: lower, hi: upper });
            }
            laws.push(UnitLaw {
                setpoint: u[i],
                chi: params.chi[i],
                lower,
                upper,
                online,
            });
        }
        let load = w[params.num_renewable..].iter().sum();
        Ok(Self {
            laws,
            load,
            bounds,
            load_sign: 1.0,
        })
    }

    /// Mutation hook for the verification suite: enters the load with the
    /// wrong sign so that monotonicity checks must fail.
    #[doc(hidden)]
    pub fn with_load_sign_flipped(mut self) -> Self {
        self.load_sign = -self.load_sign;
        self
    }

    pub fn bounds(&self) -> RhoBounds {
        self.bounds
    }

    pub fn unit_powers(&self, rho: f64) -> Vec<f64> {
        self.laws.iter().map(|l| l.power(rho)).collect()
    }

    pub fn sat_flags(&self, rho: f64) -> Vec<SatFlag> {
        self.laws.iter().map(|l| l.flag(rho)).collect()
    }

    /// Augmented power balance at `rho`.
    pub fn augmented_total_power(&self, rho: f64) -> f64 {
        let b = self.bounds;
        let units: f64 = self.laws.iter().map(|l| l.power(rho)).sum();
        (rho - b.min).min(0.0) + (rho - b.max).max(0.0) + units + self.load_sign * self.load
    }

    /// All slope changes of the balance function, ascending and merged.
    pub fn breakpoints(&self) -> Vec<Breakpoint> {
        let mut pts = vec![
            Breakpoint {
                rho: self.bounds.min,
                source: BreakpointSource::RhoMin,
            },
            Breakpoint {
                rho: self.bounds.max,
                source: BreakpointSource::RhoMax,
            },
        ];
        for (unit, law) in self.laws.iter().enumerate() {
            if !law.online || law.chi <= 0.0 {
                continue;
            }
            for (bound, value) in [(BoundKind::Lower, law.lower), (BoundKind::Upper, law.upper)] {
                pts.push(Breakpoint {
                    rho: (value - law.setpoint) / law.chi,
                    source: BreakpointSource::Unit { unit, bound },
                });
            }
        }
        pts.sort_by(|a, b| a.rho.total_cmp(&b.rho));
        pts.dedup_by(|next, kept| (next.rho - kept.rho).abs() <= BREAKPOINT_TOL);
        pts
    }

    /// Largest root of the augmented balance, found by scanning breakpoints
    /// and solving the affine piece that contains it.
    pub fn max_root(&self) -> f64 {
        let pts: Vec<f64> = self.breakpoints().iter().map(|b| b.rho).collect();
        let vals: Vec<f64> = pts.iter().map(|r| self.augmented_total_power(*r)).collect();
        let last = pts.len() - 1;
        match vals.iter().rposition(|v| *v <= BREAKPOINT_TOL) {
            None => {
                // Root left of every breakpoint; the leftmost piece is affine.
                let (b, fb) = (pts[0], vals[0]);
                let slope = fb - self.augmented_total_power(b - 1.0);
                b - fb / slope
            }
            Some(i) if i == last => {
                let (b, fb) = (pts[i], vals[i]);
                let slope = self.augmented_total_power(b + 1.0) - fb;
                b - fb / slope
            }
            Some(i) => {
                let (a, b) = (pts[i], pts[i + 1]);
                let (fa, fb) = (vals[i], vals[i + 1]);
                a - fa * (b - a) / (fb - fa)
            }
        }
    }

    /// Settled power-sharing value and whether it respects the bounds.
    pub fn solve_rho(&self) -> (f64, bool) {
        let rho = self.max_root();
        (rho, self.bounds.contains(rho))
    }
}

/// Augmented power balance for the given step inputs at `rho`.
pub fn augmented_total_power(
    u: &[f64],
    delta: &[bool],
    x_prev: &[f64],
    w: &[f64],
    rho: f64,
    params: &MicrogridParams,
) -> Result<f64, ModelError> {
    Ok(StepModel::new(params, u, delta, x_prev, w)?.augmented_total_power(rho))
}

/// Largest power-sharing value balancing the step, and its feasibility.
pub fn solve_rho(
    u: &[f64],
    delta: &[bool],
    x_prev: &[f64],
    w: &[f64],
    params: &MicrogridParams,
) -> Result<(f64, bool), ModelError> {
    Ok(StepModel::new(params, u, delta, x_prev, w)?.solve_rho())
}

/// Storage response using state-of-charge dependent power limits.
/// Returns `(power, energy after the step)`.
pub fn storage_response_dynamic(
    params: &MicrogridParams,
    storage: usize,
    x_prev: f64,
    demand: f64,
) -> Result<(f64, f64), ModelError> {
    let unit = params.storage().start + storage;
    let ts = params.sampling_time;
    let lo = params.p_min[unit].max((x_prev - params.x_max[storage]) / ts);
    let hi = params.p_max[unit].min((x_prev - params.x_min[storage]) / ts);
    let p = saturate(lo, demand, hi)?;
    Ok((p, x_prev - ts * p))
}

/// Storage response written as a power saturation followed by an energy
/// saturation, the form used by the mixed-integer encoding.
pub fn storage_response_energy(
    params: &MicrogridParams,
    storage: usize,
    x_prev: f64,
    demand: f64,
) -> Result<(f64, f64), ModelError> {
    let unit = params.storage().start + storage;
    let ts = params.sampling_time;
    let requested = saturate(params.p_min[unit], demand, params.p_max[unit])?;
    let x = saturate(params.x_min[storage], x_prev - ts * requested, params.x_max[storage])?;
    Ok(((x_prev - x) / ts, x))
}

/// Plant response to one sampling period. Infeasibility is reported in the
/// outcome, not as an error.
pub fn dispatch_step(
    params: &MicrogridParams,
    x_prev: &[f64],
    u: &[f64],
    delta: &[bool],
    w: &[f64],
) -> Result<StepOutcome, ModelError> {
    let model = StepModel::new(params, u, delta, x_prev, w)?;
    let (rho, feasible) = model.solve_rho();
    let p = model.unit_powers(rho);
    let ts = params.sampling_time;
    let x = params
        .storage()
        .enumerate()
        .map(|(s, unit)| (x_prev[s] - ts * p[unit]).clamp(params.x_min[s], params.x_max[s]))
        .collect();
    Ok(StepOutcome {
        sat_flags: model.sat_flags(rho),
        p,
        x,
        rho,
        feasible,
    })
}

/// Roll the plant forward over a disturbance realization under `plan`.
pub fn simulate_horizon(
    params: &MicrogridParams,
    realization: &[Vec<f64>],
    plan: &ControlPlan,
    x0: &[f64],
) -> Result<Vec<StepOutcome>, ModelError> {
    check_len("realization length", plan.horizon(), realization.len())?;
    check_len("plan switch steps", plan.horizon(), plan.delta.len())?;
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(plan.horizon());
    for ((u, delta), w) in plan.u.iter().zip(&plan.delta).zip(realization) {
        let step = dispatch_step(params, &x, u, delta, w)?;
        x.clone_from(&step.x);
        out.push(step);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{single_storage, storage_only};

    fn single(w_d: f64) -> StepModel {
        StepModel::new(&single_storage(), &[0.0], &[], &[50.0], &[w_d]).unwrap()
    }

    #[test]
    fn rho_bounds_examples() {
        let b = rho_bounds(&MicrogridParams::case_study(1.0)).unwrap();
        assert_eq!((b.min, b.max), (-6.0, 6.0));
        let b = rho_bounds(&single_storage()).unwrap();
        assert_eq!((b.min, b.max), (-6.0, 6.0));
        let mut p = single_storage();
        p.chi = vec![0.0];
        assert_eq!(rho_bounds(&p), Err(ModelError::NoDroop));
    }

    #[test]
    fn augmented_examples() {
        assert!(single(-0.5).augmented_total_power(0.5).abs() < 1e-15);
        assert!((single(-1.5).augmented_total_power(6.1) + 0.4).abs() < 1e-12);
        assert_eq!(single(0.0).augmented_total_power(0.0), 0.0);
        // below rho_min the augmented term keeps the function surjective
        assert!((single(0.0).augmented_total_power(-7.0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_rho_examples() {
        let (r, ok) = single(-0.5).solve_rho();
        assert!((r - 0.5).abs() < 1e-12 && ok);
        let (r, ok) = single(-1.5).solve_rho();
        assert!((r - 6.5).abs() < 1e-12 && !ok);
        let (r, ok) = single(-1.0).solve_rho();
        assert!((r - 6.0).abs() < 1e-12 && ok);
        let (r, ok) = single(2.0).solve_rho();
        assert!((r + 7.0).abs() < 1e-12 && !ok);
    }

    #[test]
    fn breakpoints_skip_offline_and_zero_gain() {
        let mut p = MicrogridParams::case_study(1.0);
        p.chi[2] = 0.0;
        let m = StepModel::new(&p, &[0.5, 0.0, 0.3, 0.1], &[false], &[2.0], &[0.2, 0.2, -0.7]).unwrap();
        let units: Vec<usize> = m
            .breakpoints()
            .iter()
            .filter_map(|b| match b.source {
                BreakpointSource::Unit { unit, .. } => Some(unit),
                _ => None,
            })
            .collect();
        assert!(!units.contains(&0) && !units.contains(&2));
        assert!(units.contains(&1) && units.contains(&3));
    }

    #[test]
    fn dispatch_example_renewable_saturates() {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let out = dispatch_step(&p, &[2.0], &[0.5, 0.0, 0.3], &[true], &[0.2, -1.0]).unwrap();
        assert!((out.rho - 0.15).abs() < 1e-12);
        assert!((out.p[0] - 0.65).abs() < 1e-12);
        assert!((out.p[1] - 0.15).abs() < 1e-12);
        assert!((out.p[2] - 0.2).abs() < 1e-12);
        assert_eq!(out.sat_flags, vec![SatFlag::Interior, SatFlag::Interior, SatFlag::AtUpper]);
        assert!(out.feasible);
        assert!((out.x[0] - (2.0 - 0.25 * 0.15)).abs() < 1e-12);
    }

    #[test]
    fn dispatch_idle_grid() {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let out = dispatch_step(&p, &[2.0], &[0.0; 3], &[false], &[0.0, 0.0]).unwrap();
        assert!(out.p.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(out.x, vec![2.0]);
        assert_eq!(out.sat_flags[0], SatFlag::Off);
        let m = StepModel::new(&p, &[0.0; 3], &[false], &[2.0], &[0.0, 0.0]).unwrap();
        assert!(m.augmented_total_power(out.rho).abs() < 1e-12);
        assert!(m.augmented_total_power(out.rho + 1e-6) > 0.0);
    }

    #[test]
    fn storage_paths_at_empty_boundary() {
        let p = storage_only();
        let (ps, x) = storage_response_dynamic(&p, 0, 0.1, 1.0).unwrap();
        assert!((ps - 0.4).abs() < 1e-12 && x.abs() < 1e-12);
        let (ps, x) = storage_response_energy(&p, 0, 0.1, 1.0).unwrap();
        assert!((ps - 0.4).abs() < 1e-12 && x == 0.0);
        let out = dispatch_step(&p, &[0.1], &[1.0], &[], &[-0.4]).unwrap();
        assert!((out.p[0] - 0.4).abs() < 1e-12 && out.feasible);
        assert!(out.x[0] >= 0.0 && out.x[0] < 1e-12);
    }

    #[test]
    fn simulate_two_steps() {
        let p = storage_only();
        let plan = ControlPlan {
            u: vec![vec![0.0]; 2],
            delta: vec![vec![]; 2],
        };
        let traj = simulate_horizon(&p, &[vec![-0.5], vec![-0.5]], &plan, &[2.0]).unwrap();
        assert!((traj[0].x[0] - 1.875).abs() < 1e-12);
        assert!((traj[1].x[0] - 1.75).abs() < 1e-12);
        let one = simulate_horizon(
            &p,
            &[vec![-0.5]],
            &ControlPlan { u: vec![vec![0.0]], delta: vec![vec![]] },
            &[2.0],
        )
        .unwrap();
        assert_eq!(one[0], dispatch_step(&p, &[2.0], &[0.0], &[], &[-0.5]).unwrap());
        assert!(simulate_horizon(&p, &[vec![-0.5]], &plan, &[2.0]).is_err());
    }

    #[test]
    fn infeasible_step_is_flagged_and_simulation_continues() {
        let p = storage_only();
        let plan = ControlPlan {
            u: vec![vec![0.0]; 2],
            delta: vec![vec![]; 2],
        };
        let traj = simulate_horizon(&p, &[vec![-3.0], vec![-0.5]], &plan, &[2.0]).unwrap();
        assert!(!traj[0].feasible);
        assert!(traj[1].feasible);
        assert!((traj[0].p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        let p = storage_only();
        assert!(dispatch_step(&p, &[7.0], &[0.0], &[], &[0.0]).is_err());
        assert!(dispatch_step(&p, &[2.0], &[0.0, 1.0], &[], &[0.0]).is_err());
        let q = MicrogridParams::case_study_reduced(1, 1.0);
        let mut q2 = q.clone();
        q2.p_min[2] = 0.5;
        assert!(matches!(
            dispatch_step(&q2, &[2.0], &[0.0; 3], &[false], &[0.2, -0.5]),
            Err(ModelError::InvalidBounds { .. })
        ));
    }
}

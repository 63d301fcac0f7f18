//! Slow, independent brute-force checkers.
//!
//! Nothing here calls into the dispatch, cost or MPC code: unit laws, storage
//! energy updates, power-sharing bounds and stage costs are re-derived from
//! the raw parameter fields. Storage power is obtained by clamping the
//! requested power and then the resulting energy, instead of through
//! state-of-charge dependent power limits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlPlan, MicrogridParams};
use crate::scenario::ScenarioWindow;

/// Width of the final bisection bracket.
pub const BISECTION_WIDTH: f64 = 1e-10;

/// Balance values within this of zero count as zero.
const ZERO_TOL: f64 = 1e-11;

/// Slack on the power-sharing bounds and on hard unit limits.
const LIMIT_TOL: f64 = 1e-9;

/// Default cap on the number of enumerated points.
pub const DEFAULT_GRID_CAP: usize = 1_000_000;

/// Largest number of switch binaries [`enumerate_small_milp`] accepts.
pub const MAX_SWITCH_BINARIES: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid of {size} points exceeds the cap of {cap}")]
    GridTooLarge { size: u128, cap: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{found} switch binaries exceed the enumeration limit of {limit}")]
    TooManyBinaries { found: usize, limit: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Uniform grid over a box, `points` values per non-degenerate dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub cap: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 5,
            cap: DEFAULT_GRID_CAP,
        }
    }
}

impl GridSpec {
    pub fn new(points: usize) -> Result<Self, OracleError> {
        Self::with_cap(points, DEFAULT_GRID_CAP)
    }

    pub fn with_cap(points: usize, cap: usize) -> Result<Self, OracleError> {
        if points < 2 {
            return Err(OracleError::InvalidGrid(format!("{points} points per dimension, need at least 2")));
        }
        if cap == 0 {
            return Err(OracleError::InvalidGrid("cap must be positive".into()));
        }
        Ok(Self { points, cap })
    }

    /// Grid values on `[lo, hi]`; a single point when the interval is empty.
    fn axis(&self, lo: f64, hi: f64) -> Vec<f64> {
        if hi <= lo {
            return vec![lo];
        }
        let n = self.points - 1;
        (0..=n)
            .map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 })
            .collect()
    }

    /// All points of the product of `axes`, first axis slowest, or an error
    /// if there are more than the cap.
    fn product(&self, axes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OracleError> {
        let size = axes.iter().fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128));
        if size > self.cap as u128 {
            return Err(OracleError::GridTooLarge { size, cap: self.cap });
        }
        let mut out = vec![Vec::with_capacity(axes.len())];
        for axis in axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Conventional,
    Storage(usize),
    Renewable(usize),
}

fn kind(params: &MicrogridParams, i: usize) -> Kind {
    let t = params.num_conventional;
    let s = params.num_storage;
    if i < t {
        Kind::Conventional
    } else if i < t + s {
        Kind::Storage(i - t)
    } else {
        Kind::Renewable(i - t - s)
    }
}

fn clamp(lo: f64, v: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Interval outside of which every unit with a positive gain is saturated.
fn sharing_interval(params: &MicrogridParams) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..params.chi.len() {
        let c = params.chi[i];
        if c <= 0.0 {
            continue;
        }
        let top = match kind(params, i) {
            Kind::Renewable(r) => params.renewable_cap[r],
            _ => params.p_max[i],
        };
        lo = lo.min((params.p_min[i] - params.u_max[i]) / c);
        hi = hi.max((top - params.u_min[i]) / c);
    }
    (lo, hi)
}

/// One sampling period with frozen inputs.
struct Step<'a> {
    params: &'a MicrogridParams,
    u: &'a [f64],
    delta: &'a [bool],
    x_prev: &'a [f64],
    w: &'a [f64],
    rho_lo: f64,
    rho_hi: f64,
}

impl<'a> Step<'a> {
    fn new(
        params: &'a MicrogridParams,
        u: &'a [f64],
        delta: &'a [bool],
        x_prev: &'a [f64],
        w: &'a [f64],
    ) -> Result<Self, OracleError> {
        let n = params.num_conventional + params.num_storage + params.num_renewable;
        if u.len() != n || delta.len() != params.num_conventional || x_prev.len() != params.num_storage {
            return Err(OracleError::Dimension("step inputs do not match the unit counts".into()));
        }
        if w.len() != params.num_renewable + params.num_loads {
            return Err(OracleError::Dimension("disturbance length".into()));
        }
        let (rho_lo, rho_hi) = sharing_interval(params);
        Ok(Self {
            params,
            u,
            delta,
            x_prev,
            w,
            rho_lo,
            rho_hi,
        })
    }

    /// Unclamped droop value of unit `i`.
    fn droop(&self, i: usize, rho: f64) -> f64 {
        self.u[i] + self.params.chi[i] * rho
    }

    /// Power of unit `i` and, for storage, the energy after the step.
    fn unit(&self, i: usize, rho: f64) -> (f64, Option<f64>) {
        let p = self.params;
        let v = self.droop(i, rho);
        match kind(p, i) {
            Kind::Conventional => (if self.delta[i] { clamp(p.p_min[i], v, p.p_max[i]) } else { 0.0 }, None),
            Kind::Storage(s) => {
                let ts = p.sampling_time;
                let requested = clamp(p.p_min[i], v, p.p_max[i]);
                let x = clamp(p.x_min[s], self.x_prev[s] - ts * requested, p.x_max[s]);
                ((self.x_prev[s] - x) / ts, Some(x))
            }
            Kind::Renewable(r) => (clamp(p.p_min[i], v, self.w[r]), None),
        }
    }

    fn balance(&self, rho: f64) -> f64 {
        let units: f64 = (0..self.u.len()).map(|i| self.unit(i, rho).0).sum();
        let loads: f64 = self.w[self.params.num_renewable..].iter().sum();
        (rho - self.rho_lo).min(0.0) + (rho - self.rho_hi).max(0.0) + units + loads
    }

    /// Largest root of the augmented balance.
    fn max_root(&self) -> f64 {
        let f = |r: f64| self.balance(r);
        let mut margin = 1.0;
        while !(f(self.rho_lo - margin) < 0.0 && f(self.rho_hi + margin) > 0.0) {
            margin *= 2.0;
            if margin > 1e12 {
                // Only reachable when the balance is not increasing, e.g.
                // under a mutated model; report the bracket edge.
                return self.rho_hi + margin;
            }
        }
        let (mut lo, mut hi) = (self.rho_lo - margin, self.rho_hi + margin);
        while hi - lo > BISECTION_WIDTH {
            let mid = 0.5 * (lo + hi);
            if f(mid) < -ZERO_TOL {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // `hi` is the left edge of the zero set; walk right over a flat run.
        let edge = hi;
        if f(edge).abs() > ZERO_TOL {
            return edge;
        }
        let mut step = BISECTION_WIDTH;
        while f(edge + step).abs() <= ZERO_TOL {
            step *= 2.0;
        }
        let (mut flat, mut up) = (edge + 0.5 * step, edge + step);
        if f(flat).abs() > ZERO_TOL {
            flat = edge;
        }
        while up - flat > BISECTION_WIDTH {
            let mid = 0.5 * (flat + up);
            if f(mid).abs() <= ZERO_TOL {
                flat = mid;
            } else {
                up = mid;
            }
        }
        flat
    }
}

/// Maximal power-sharing value balancing one step, found by bisection of the
/// augmented balance followed by a rightward walk over any flat zero run.
pub fn bisection_rho(
    u: &[f64],
    delta: &[bool],
    x_prev: &[f64],
    w: &[f64],
    params: &MicrogridParams,
) -> Result<f64, OracleError> {
    Ok(Step::new(params, u, delta, x_prev, w)?.max_root())
}

/// Plant response computed by the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStep {
    pub rho: f64,
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub feasible: bool,
    /// Every unit power equals its unclamped droop value, except renewables
    /// curtailed at their availability.
    pub within_hard_limits: bool,
}

fn oracle_step(
    params: &MicrogridParams,
    x_prev: &[f64],
    u: &[f64],
    delta: &[bool],
    w: &[f64],
) -> Result<OracleStep, OracleError> {
    let s = Step::new(params, u, delta, x_prev, w)?;
    let rho = s.max_root();
    let mut p = Vec::with_capacity(u.len());
    let mut x = Vec::with_capacity(params.num_storage);
    let mut hard = true;
    for i in 0..u.len() {
        let (pi, xi) = s.unit(i, rho);
        let v = s.droop(i, rho);
        let exact = match kind(params, i) {
            Kind::Conventional => !delta[i] || (pi - v).abs() <= LIMIT_TOL,
            Kind::Storage(_) => (pi - v).abs() <= LIMIT_TOL,
            Kind::Renewable(_) => v >= params.p_min[i] - LIMIT_TOL,
        };
        hard &= exact;
        p.push(pi);
        x.extend(xi);
    }
    Ok(OracleStep {
        feasible: rho >= s.rho_lo - LIMIT_TOL && rho <= s.rho_hi + LIMIT_TOL,
        within_hard_limits: hard,
        rho,
        p,
        x,
    })
}

/// Roll the oracle plant over `realization` under `plan`.
pub fn oracle_rollout(
    params: &MicrogridParams,
    plan: &ControlPlan,
    realization: &[Vec<f64>],
    x0: &[f64],
) -> Result<Vec<OracleStep>, OracleError> {
    if plan.u.len() != realization.len() || plan.delta.len() != realization.len() {
        return Err(OracleError::Dimension("plan and realization lengths differ".into()));
    }
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(realization.len());
    for j in 0..realization.len() {
        let s = oracle_step(params, &x, &plan.u[j], &plan.delta[j], &realization[j])?;
        x.clone_from(&s.x);
        out.push(s);
    }
    Ok(out)
}

/// Horizon cost of an oracle trajectory.
pub fn oracle_cost(params: &MicrogridParams, plan: &ControlPlan, steps: &[OracleStep], delta0: &[bool]) -> f64 {
    let w = &params.cost_weights;
    let t = params.num_conventional;
    let mut prev = delta0.to_vec();
    let mut total = 0.0;
    for (j, s) in steps.iter().enumerate() {
        for i in 0..t {
            let on = plan.delta[j][i];
            total += w.c_t[i] * s.p[i];
            total += if on { w.c_on[i] } else { 0.0 };
            total += if on != prev[i] { w.c_sw[i] } else { 0.0 };
        }
        for k in 0..params.num_storage {
            total += w.c_s[k] * s.p[t + k];
        }
        prev.clone_from(&plan.delta[j]);
    }
    total
}

/// Every realization on the grid over the window's disturbance box, in
/// index order starting at the all-lower corner.
fn realizations(window: &ScenarioWindow, grid: &GridSpec) -> Result<Vec<Vec<Vec<f64>>>, OracleError> {
    let steps = window.w_min.len();
    if window.w_max.len() != steps {
        return Err(OracleError::Dimension("w_min and w_max lengths differ".into()));
    }
    let width = window.w_min.first().map_or(0, Vec::len);
    let mut axes = Vec::new();
    for j in 0..steps {
        if window.w_min[j].len() != width || window.w_max[j].len() != width {
            return Err(OracleError::Dimension(format!("disturbance row {j}")));
        }
        for k in 0..width {
            axes.push(grid.axis(window.w_min[j][k], window.w_max[j][k]));
        }
    }
    Ok(grid
        .product(&axes)?
        .into_iter()
        .map(|flat| flat.chunks(width.max(1)).map(<[f64]>::to_vec).take(steps).collect())
        .collect())
}

/// Largest horizon cost of `plan` over the grid and a realization attaining
/// it (the first one in grid order on ties).
pub fn grid_worst_cost(
    plan: &ControlPlan,
    window: &ScenarioWindow,
    grid: &GridSpec,
    params: &MicrogridParams,
) -> Result<(f64, Vec<Vec<f64>>), OracleError> {
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for w in realizations(window, grid)? {
        let steps = oracle_rollout(params, plan, &w, &window.x0)?;
        let cost = oracle_cost(params, plan, &steps, &window.delta0);
        if best.as_ref().is_none_or(|(c, _)| cost > *c) {
            best = Some((cost, w));
        }
    }
    Ok(best.expect("a grid always has at least one point"))
}

/// First grid realization under which some step leaves the power-sharing
/// bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridViolation {
    pub realization: Vec<Vec<f64>>,
    pub step: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFeasibility {
    pub all_feasible: bool,
    pub first_violation: Option<GridViolation>,
    pub points: usize,
}

/// Dispatch feasibility of `plan` at every grid realization.
pub fn grid_feasibility(
    plan: &ControlPlan,
    window: &ScenarioWindow,
    grid: &GridSpec,
    params: &MicrogridParams,
) -> Result<GridFeasibility, OracleError> {
    let all = realizations(window, grid)?;
    let points = all.len();
    for w in all {
        let steps = oracle_rollout(params, plan, &w, &window.x0)?;
        if let Some(j) = steps.iter().position(|s| !s.feasible) {
            return Ok(GridFeasibility {
                all_feasible: false,
                first_violation: Some(GridViolation {
                    rho: steps[j].rho,
                    realization: w,
                    step: j,
                }),
                points,
            });
        }
    }
    Ok(GridFeasibility {
        all_feasible: true,
        first_violation: None,
        points,
    })
}

/// Small open-loop problem for [`enumerate_small_milp`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmallProblem {
    /// Plant parameters with the droop gains the controller assumes.
    pub params: MicrogridParams,
    pub window: ScenarioWindow,
    /// Require feasibility at the upper sequence as well as the lower one.
    pub robust: bool,
    /// Reject points where a unit would need clamping (renewables may still
    /// be curtailed at their availability).
    pub hard_limits: bool,
}

/// Best plan found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub cost: f64,
    pub plan: ControlPlan,
    pub candidates: usize,
}

/// Enumerate every switch sequence and every set-point sequence on a grid of
/// `u_points` values per unit and step; return the cheapest admissible plan
/// by its lower-sequence cost, or `None` if no grid plan is admissible.
/// Since only grid plans are tried, the result bounds the true optimum from
/// above.
pub fn enumerate_small_milp(
    problem: &SmallProblem,
    u_points: usize,
    cap: usize,
) -> Result<Option<EnumerationResult>, OracleError> {
    let p = &problem.params;
    let w = &problem.window;
    let np = w.w_min.len();
    let n = p.num_conventional + p.num_storage + p.num_renewable;
    let t = p.num_conventional;
    let binaries = t * np;
    if binaries > MAX_SWITCH_BINARIES {
        return Err(OracleError::TooManyBinaries {
            found: binaries,
            limit: MAX_SWITCH_BINARIES,
        });
    }
    let grid = GridSpec::with_cap(u_points, cap)?;
    let axes: Vec<Vec<f64>> = (0..np)
        .flat_map(|_| (0..n).map(|i| grid.axis(p.u_min[i], p.u_max[i])))
        .collect();
    let per_switch = axes.iter().fold(1u128, |a, x| a.saturating_mul(x.len() as u128));
    let total = per_switch.saturating_mul(1u128 << binaries);
    if total > cap as u128 {
        return Err(OracleError::GridTooLarge { size: total, cap });
    }
    let u_grid = grid.product(&axes)?;

    let admissible = |steps: &[OracleStep]| {
        steps.iter().all(|s| s.feasible && (!problem.hard_limits || s.within_hard_limits))
    };
    let mut best: Option<EnumerationResult> = None;
    let mut candidates = 0;
    for mask in 0..(1u32 << binaries) {
        let delta: Vec<Vec<bool>> = (0..np)
            .map(|j| (0..t).map(|i| (mask >> (j * t + i)) & 1 == 1).collect())
            .collect();
        for flat in &u_grid {
            candidates += 1;
            let plan = ControlPlan {
                u: flat.chunks(n.max(1)).map(<[f64]>::to_vec).take(np).collect(),
                delta: delta.clone(),
            };
            let low = oracle_rollout(p, &plan, &w.w_min, &w.x0)?;
            if !admissible(&low) {
                continue;
            }
            if problem.robust && !admissible(&oracle_rollout(p, &plan, &w.w_max, &w.x0)?) {
                continue;
            }
            let cost = oracle_cost(p, &plan, &low, &w.delta0);
            if best.as_ref().is_none_or(|b| cost < b.cost) {
                best = Some(EnumerationResult {
                    cost,
                    plan,
                    candidates: 0,
                });
            }
        }
    }
    Ok(best.map(|b| EnumerationResult { candidates, ..b }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostWeights;

    fn single_storage() -> MicrogridParams {
        MicrogridParams {
            num_conventional: 0,
            num_storage: 1,
            num_renewable: 0,
            num_loads: 1,
            u_min: vec![-5.0],
            u_max: vec![5.0],
            p_min: vec![-1.0],
            p_max: vec![1.0],
            x_min: vec![0.0],
            x_max: vec![100.0],
            chi: vec![1.0],
            sampling_time: 0.25,
            cost_weights: CostWeights {
                c_t: vec![],
                c_on: vec![],
                c_sw: vec![],
                c_s: vec![0.9],
            },
            renewable_cap: vec![],
        }
    }

    fn rho(w_d: f64) -> f64 {
        bisection_rho(&[0.0], &[], &[50.0], &[w_d], &single_storage()).unwrap()
    }

    #[test]
    fn bisection_examples() {
        assert!((rho(-0.5) - 0.5).abs() < 1e-9);
        assert!((rho(-1.5) - 6.5).abs() < 1e-9);
        // Flat zero run on [1, 6]: the right edge is selected.
        assert!((rho(-1.0) - 6.0).abs() < 1e-9);
        assert!((rho(2.0) + 7.0).abs() < 1e-9);
    }

    #[test]
    fn grid_spec_rules() {
        assert!(GridSpec::new(1).is_err());
        let g = GridSpec::with_cap(3, 8).unwrap();
        assert_eq!(g.axis(0.0, 1.0), vec![0.0, 0.5, 1.0]);
        assert_eq!(g.axis(0.4, 0.4), vec![0.4]);
        let axes = vec![vec![0.0, 1.0]; 4];
        assert!(matches!(g.product(&axes), Err(OracleError::GridTooLarge { size: 16, cap: 8 })));
        assert_eq!(g.product(&axes[..3]).unwrap().len(), 8);
        assert_eq!(g.product(&axes[..3]).unwrap()[0], vec![0.0; 3]);
    }

    #[test]
    fn zero_width_box_has_one_point() {
        let p = single_storage();
        let window = ScenarioWindow::certain(vec![vec![-0.5], vec![-0.3]], vec![2.0], vec![]);
        let plan = ControlPlan {
            u: vec![vec![0.1], vec![0.0]],
            delta: vec![vec![]; 2],
        };
        let (cost, w) = grid_worst_cost(&plan, &window, &GridSpec::default(), &p).unwrap();
        assert_eq!(w, window.w_min);
        // Storage covers both loads: 0.9 * (0.5 + 0.3).
        assert!((cost - 0.72).abs() < 1e-9);
        let f = grid_feasibility(&plan, &window, &GridSpec::default(), &p).unwrap();
        assert!(f.all_feasible && f.points == 1);
    }

    #[test]
    fn overload_reported_at_lower_corner() {
        let p = single_storage();
        let window = ScenarioWindow {
            w_min: vec![vec![-1.5]],
            w_max: vec![vec![-0.5]],
            x0: vec![2.0],
            delta0: vec![],
        };
        let plan = ControlPlan {
            u: vec![vec![0.0]],
            delta: vec![vec![]],
        };
        let f = grid_feasibility(&plan, &window, &GridSpec::default(), &p).unwrap();
        assert!(!f.all_feasible);
        let v = f.first_violation.unwrap();
        assert_eq!(v.realization, window.w_min);
        assert_eq!(v.step, 0);
    }

    #[test]
    fn enumeration_rejects_large_inputs() {
        let mut p = MicrogridParams::case_study_reduced(1, 1.0);
        p.renewable_cap = vec![1.0];
        let rows = vec![vec![0.2, -0.5]; 13];
        let problem = SmallProblem {
            params: p,
            window: ScenarioWindow::certain(rows, vec![2.0], vec![false]),
            robust: true,
            hard_limits: false,
        };
        assert!(matches!(
            enumerate_small_milp(&problem, 2, DEFAULT_GRID_CAP),
            Err(OracleError::TooManyBinaries { .. })
        ));
        let mut small = problem.clone();
        small.window.w_min.truncate(2);
        small.window.w_max.truncate(2);
        assert!(matches!(
            enumerate_small_milp(&small, 50, DEFAULT_GRID_CAP),
            Err(OracleError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn storage_only_enumeration() {
        // One step, load 0.5: the storage must deliver 0.5 whatever the
        // set-point, so every plan costs 0.45.
        let p = single_storage();
        let problem = SmallProblem {
            params: p,
            window: ScenarioWindow::certain(vec![vec![-0.5]], vec![2.0], vec![]),
            robust: false,
            hard_limits: false,
        };
        let r = enumerate_small_milp(&problem, 5, DEFAULT_GRID_CAP).unwrap().unwrap();
        assert!((r.cost - 0.45).abs() < 1e-9);
        assert_eq!(r.candidates, 5);
    }
}

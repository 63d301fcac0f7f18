//! Randomized property suites with replayable failure reports.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{default_solve_options, HarnessError};
use crate::cost::horizon_cost;
use crate::dispatch::{
    dispatch_step, simulate_horizon, solve_rho, storage_response_dynamic, storage_response_energy, StepModel,
};
use crate::milp::{solve_milp, MilpInstance, MilpStatus, ReferenceBackend};
use crate::model::{ControlPlan, CostWeights, MicrogridParams, SatFlag, StepOutcome};
use crate::mpc::{build_problem, solve_open_loop, ControllerConfig, ControllerVariant};
use crate::oracles::{
    bisection_rho, enumerate_small_milp, grid_feasibility, grid_worst_cost, GridSpec, SmallProblem,
    DEFAULT_GRID_CAP,
};
use crate::scenario::ScenarioWindow;

/// Agreement required by the monotonicity and oracle suites.
const TOL: f64 = 1e-9;
/// Agreement required between grid and endpoint costs, and between the
/// solver and the enumeration.
const COST_TOL: f64 = 1e-6;
/// Failing cases kept per suite.
const KEPT_FAILURES: usize = 5;

/// Deliberate defects used to check that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Enter the load into the power balance with the wrong sign.
    FlipLoadSign,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub rho_monotone: usize,
    pub step_monotone: usize,
    pub rho_oracle: usize,
    pub storage_equivalence: usize,
    pub worst_case_at_min: usize,
    pub endpoint_sufficiency: usize,
    pub inclusion: usize,
    pub milp_enumeration: usize,
    pub mutation: Option<Mutation>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            rho_monotone: 1000,
            step_monotone: 1000,
            rho_oracle: 1000,
            storage_equivalence: 1000,
            worst_case_at_min: 200,
            endpoint_sufficiency: 200,
            inclusion: 100,
            milp_enumeration: 10,
            mutation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Up to five failing inputs, enough to replay each case.
    pub failing_cases: Vec<Value>,
    /// Suite-specific counters.
    pub counters: BTreeMap<String, usize>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            instances: 0,
            failures: 0,
            failing_cases: Vec::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn check(&mut self, ok: bool, case: impl FnOnce() -> Value) {
        self.instances += 1;
        if !ok {
            self.fail(case());
        }
    }

    fn fail(&mut self, case: Value) {
        self.failures += 1;
        if self.failing_cases.len() < KEPT_FAILURES {
            self.failing_cases.push(case);
        }
    }

    fn count(&mut self, key: &str) {
        *self.counters.entry(key.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

/// Every suite at its default size.
pub fn run_verification_suite(params: &MicrogridParams, seed: u64) -> Result<VerificationReport, HarnessError> {
    run_verification_suite_with(params, seed, &VerifyOptions::default())
}

/// Every suite with explicit sizes and an optional mutation. The mixed-integer
/// suites run on the first conventional, storage and renewable units of
/// `params`.
pub fn run_verification_suite_with(
    params: &MicrogridParams,
    seed: u64,
    options: &VerifyOptions,
) -> Result<VerificationReport, HarnessError> {
    params.validate()?;
    let suites = vec![
        suite_rho_monotone(params, seed, options.rho_monotone, options.mutation),
        suite_step_monotone(params, seed, options.step_monotone),
        suite_rho_oracle(params, seed, options.rho_oracle),
        suite_storage_equivalence(params, seed, options.storage_equivalence),
        suite_worst_case_at_min(params, seed, options.worst_case_at_min),
        suite_endpoint_sufficiency(params, seed, options.endpoint_sufficiency),
        suite_inclusion(params, seed, options.inclusion),
        suite_milp_enumeration(params, seed, options.milp_enumeration),
    ];
    Ok(VerificationReport {
        seed,
        passed: suites.iter().all(SuiteReport::passed),
        suites,
    })
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Typical load magnitude: the combined rating of the dispatchable units.
fn load_scale(p: &MicrogridParams) -> f64 {
    p.conventional().chain(p.storage()).map(|i| p.p_max[i]).sum::<f64>().max(0.1)
}

fn random_x(p: &MicrogridParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..p.num_storage)
        .map(|s| match rng.gen_range(0..10) {
            0 => p.x_min[s],
            1 => p.x_max[s],
            _ => rng.gen_range(p.x_min[s]..=p.x_max[s]),
        })
        .collect()
}

fn random_w(p: &MicrogridParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<f64> = p.renewable_cap.iter().map(|c| rng.gen_range(0.0..=*c)).collect();
    let scale = 1.1 * load_scale(p) / p.num_loads.max(1) as f64;
    w.extend((0..p.num_loads).map(|_| -rng.gen_range(0.0..=scale)));
    w
}

/// Set-point near the useful range of the unit half the time, anywhere in
/// its box otherwise.
fn random_u(p: &MicrogridParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..p.num_units())
        .map(|i| {
            let (lo, hi) = (p.u_min[i], p.u_max[i]);
            if rng.gen_bool(0.5) {
                let a = (p.p_min[i] - 0.5).clamp(lo, hi);
                let b = (p.sharing_upper(i) + 0.5).clamp(lo, hi);
                rng.gen_range(a..=b)
            } else {
                rng.gen_range(lo..=hi)
            }
        })
        .collect()
}

fn random_delta(p: &MicrogridParams, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..p.num_conventional).map(|_| rng.gen_bool(0.7)).collect()
}

/// Raise one random entry of `w` or `x` (or several when `all`).
fn raise(p: &MicrogridParams, rng: &mut ChaCha8Rng, w: &mut [f64], x: &mut [f64], all: bool) {
    let nw = w.len();
    let targets: Vec<usize> = if all {
        (0..nw + x.len()).filter(|_| rng.gen_bool(0.6)).collect()
    } else {
        vec![rng.gen_range(0..nw + x.len())]
    };
    for t in targets {
        if t < nw {
            let top = if t < p.num_renewable { p.renewable_cap[t] } else { 0.0 };
            w[t] = rng.gen_range(w[t]..=top.max(w[t]));
        } else {
            let s = t - nw;
            x[s] = rng.gen_range(x[s]..=p.x_max[s]);
        }
    }
}

/// Larger disturbances or storage energies never raise the settled power
/// sharing value.
pub fn suite_rho_monotone(params: &MicrogridParams, seed: u64, n: usize, mutation: Option<Mutation>) -> SuiteReport {
    let mut rep = SuiteReport::new("rho_monotone");
    let mut rng = rng_for(seed, 1);
    let rho = |u: &[f64], d: &[bool], x: &[f64], w: &[f64]| {
        StepModel::new(params, u, d, x, w).map(|m| match mutation {
            Some(Mutation::FlipLoadSign) => m.with_load_sign_flipped().solve_rho().0,
            None => m.solve_rho().0,
        })
    };
    for _ in 0..n {
        let (u, d) = (random_u(params, &mut rng), random_delta(params, &mut rng));
        let (x1, w1) = (random_x(params, &mut rng), random_w(params, &mut rng));
        let (mut x2, mut w2) = (x1.clone(), w1.clone());
        raise(params, &mut rng, &mut w2, &mut x2, false);
        let case = || json!({"u": u, "delta": d, "x1": x1, "w1": w1, "x2": x2, "w2": w2});
        match (rho(&u, &d, &x1, &w1), rho(&u, &d, &x2, &w2)) {
            (Ok(r1), Ok(r2)) => rep.check(r2 <= r1 + TOL, || {
                let mut c = case();
                c["rho1"] = json!(r1);
                c["rho2"] = json!(r2);
                c
            }),
            (a, b) => rep.check(false, || {
                let mut c = case();
                c["error"] = json!(format!("{a:?} {b:?}"));
                c
            }),
        }
    }
    rep
}

/// Larger disturbances and initial energies lower rho and conventional
/// power and raise the stored energy after the step.
pub fn suite_step_monotone(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("step_monotone");
    let mut rng = rng_for(seed, 2);
    for _ in 0..n {
        let (u, d) = (random_u(params, &mut rng), random_delta(params, &mut rng));
        let (x1, w1) = (random_x(params, &mut rng), random_w(params, &mut rng));
        let (mut x2, mut w2) = (x1.clone(), w1.clone());
        raise(params, &mut rng, &mut w2, &mut x2, true);
        let case = json!({"u": u, "delta": d, "x1": x1, "w1": w1, "x2": x2, "w2": w2});
        match (dispatch_step(params, &x1, &u, &d, &w1), dispatch_step(params, &x2, &u, &d, &w2)) {
            (Ok(a), Ok(b)) => {
                let ok = b.rho <= a.rho + TOL
                    && params.conventional().all(|i| b.p[i] <= a.p[i] + TOL)
                    && b.x.iter().zip(&a.x).all(|(b, a)| *b >= a - TOL);
                rep.check(ok, || json!({"case": case, "first": a, "second": b}));
            }
            (a, b) => rep.check(false, || json!({"case": case, "error": format!("{a:?} {b:?}")})),
        }
    }
    rep
}

/// Loads that make the balance vanish on a whole interval of rho, if the
/// random set-points produce such an interval.
fn flat_run_load(p: &MicrogridParams, u: &[f64], d: &[bool], x: &[f64], w: &mut [f64]) -> bool {
    for l in &mut w[p.num_renewable..] {
        *l = 0.0;
    }
    let Ok(model) = StepModel::new(p, u, d, x, w) else {
        return false;
    };
    let b = model.bounds();
    let steps = 400;
    let total = |k: usize| {
        let rho = b.min + (b.max - b.min) * k as f64 / steps as f64;
        model.unit_powers(rho).iter().sum::<f64>()
    };
    let mut prev = total(0);
    for k in 1..=steps {
        let cur = total(k);
        if (cur - prev).abs() < 1e-13 && cur >= 0.0 {
            w[p.num_renewable] = -cur;
            return true;
        }
        prev = cur;
    }
    false
}

/// The breakpoint root finder agrees with plain bisection. Every fourth
/// instance is built to have a flat zero run of the balance.
pub fn suite_rho_oracle(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("rho_vs_bisection");
    let mut rng = rng_for(seed, 3);
    for k in 0..n {
        let mut d = random_delta(params, &mut rng);
        let x = random_x(params, &mut rng);
        let mut w = random_w(params, &mut rng);
        let mut u = random_u(params, &mut rng);
        if k % 4 == 0 && params.num_loads > 0 {
            let mut found = false;
            for _ in 0..50 {
                u = (0..params.num_units())
                    .map(|i| match rng.gen_range(0..3) {
                        0 => params.u_min[i],
                        1 => params.u_max[i],
                        _ => rng.gen_range(params.u_min[i]..=params.u_max[i]),
                    })
                    .collect();
                d = random_delta(params, &mut rng);
                if flat_run_load(params, &u, &d, &x, &mut w) {
                    found = true;
                    break;
                }
            }
            if found {
                rep.count("flat_runs");
            }
        }
        let case = || json!({"u": u, "delta": d, "x": x, "w": w});
        match (solve_rho(&u, &d, &x, &w, params), bisection_rho(&u, &d, &x, &w, params)) {
            (Ok((a, _)), Ok(b)) => rep.check((a - b).abs() <= TOL, || {
                let mut c = case();
                c["solve_rho"] = json!(a);
                c["bisection"] = json!(b);
                c
            }),
            (a, b) => rep.check(false, || {
                let mut c = case();
                c["error"] = json!(format!("{a:?} {b:?}"));
                c
            }),
        }
    }
    rep
}

/// Power-limited and energy-saturated storage responses coincide.
pub fn suite_storage_equivalence(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("storage_forms_equivalent");
    if params.num_storage == 0 {
        return rep;
    }
    let mut rng = rng_for(seed, 4);
    for _ in 0..n {
        let s = rng.gen_range(0..params.num_storage);
        let x = random_x(params, &mut rng)[s];
        let unit = params.storage().start + s;
        let span = 2.0 * (params.p_max[unit] - params.p_min[unit]);
        let demand = rng.gen_range(params.p_min[unit] - span..=params.p_max[unit] + span);
        let case = json!({"storage": s, "x_prev": x, "demand": demand});
        match (
            storage_response_dynamic(params, s, x, demand),
            storage_response_energy(params, s, x, demand),
        ) {
            (Ok(a), Ok(b)) => rep.check((a.0 - b.0).abs() <= 1e-12 && (a.1 - b.1).abs() <= 1e-12, || {
                json!({"case": case, "dynamic": [a.0, a.1], "energy": [b.0, b.1]})
            }),
            (a, b) => rep.check(false, || json!({"case": case, "error": format!("{a:?} {b:?}")})),
        }
    }
    rep
}

/// Random window with one or two uncertain disturbance entries and a plan
/// feasible at both endpoints, or `None` if none was found.
fn endpoint_feasible_instance(
    p: &MicrogridParams,
    rng: &mut ChaCha8Rng,
) -> Option<(ScenarioWindow, ControlPlan)> {
    let np = rng.gen_range(1..=3);
    let dims = p.num_disturbances();
    let mut uncertain: Vec<usize> = (0..dims).collect();
    uncertain.shuffle(rng);
    uncertain.truncate(rng.gen_range(1..=2.min(dims)));
    let mut w_min = Vec::with_capacity(np);
    let mut w_max = Vec::with_capacity(np);
    for _ in 0..np {
        let nominal = random_w(p, rng);
        let mut lo = nominal.clone();
        let mut hi = nominal;
        for &k in &uncertain {
            let spread = rng.gen_range(0.0..0.3) * lo[k].abs() + 0.05;
            if k < p.num_renewable {
                lo[k] = (lo[k] - spread).max(0.0);
                hi[k] = (hi[k] + spread).min(p.renewable_cap[k]);
            } else {
                lo[k] -= spread;
                hi[k] = (hi[k] + spread).min(0.0);
            }
        }
        w_min.push(lo);
        w_max.push(hi);
    }
    let window = ScenarioWindow {
        w_min,
        w_max,
        x0: random_x(p, rng),
        delta0: random_delta(p, rng),
    };
    for _ in 0..50 {
        let plan = ControlPlan {
            u: (0..np).map(|_| random_u(p, rng)).collect(),
            delta: (0..np).map(|_| random_delta(p, rng)).collect(),
        };
        let feasible = |rows: &[Vec<f64>]| {
            simulate_horizon(p, rows, &plan, &window.x0).is_ok_and(|o| o.iter().all(|s| s.feasible))
        };
        if feasible(&window.w_min) && feasible(&window.w_max) {
            return Some((window, plan));
        }
    }
    None
}

fn window_json(w: &ScenarioWindow) -> Value {
    json!({"w_min": w.w_min, "w_max": w.w_max, "x0": w.x0, "delta0": w.delta0})
}

/// The largest cost over the disturbance grid is the cost at the lower
/// sequence.
pub fn suite_worst_case_at_min(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("worst_case_at_w_min");
    let mut rng = rng_for(seed, 5);
    let grid = GridSpec::default();
    let mut attempts = 0;
    while rep.instances < n && attempts < 20 * n {
        attempts += 1;
        let Some((window, plan)) = endpoint_feasible_instance(params, &mut rng) else {
            rep.count("discarded");
            continue;
        };
        let at_min = simulate_horizon(params, &window.w_min, &plan, &window.x0)
            .map_err(|e| e.to_string())
            .and_then(|o| horizon_cost(&o, &plan, &window.delta0, &params.cost_weights).map_err(|e| e.to_string()));
        let worst = grid_worst_cost(&plan, &window, &grid, params).map_err(|e| e.to_string());
        let case = || json!({"window": window_json(&window), "plan": plan});
        match (at_min, worst) {
            (Ok(c), Ok((g, arg))) => rep.check((g - c).abs() <= COST_TOL, || {
                json!({"case": case(), "cost_at_w_min": c, "grid_worst": g, "argmax": arg})
            }),
            (a, b) => rep.check(false, || json!({"case": case(), "error": format!("{a:?} {b:?}")})),
        }
    }
    rep
}

/// A plan feasible at both endpoint sequences is feasible everywhere on the
/// disturbance grid.
pub fn suite_endpoint_sufficiency(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("endpoint_sufficiency");
    let mut rng = rng_for(seed, 6);
    let grid = GridSpec::default();
    let mut attempts = 0;
    while rep.instances < n && attempts < 20 * n {
        attempts += 1;
        let Some((window, plan)) = endpoint_feasible_instance(params, &mut rng) else {
            rep.count("discarded");
            continue;
        };
        let case = || json!({"window": window_json(&window), "plan": plan});
        match grid_feasibility(&plan, &window, &grid, params) {
            Ok(f) => rep.check(f.all_feasible, || json!({"case": case(), "violation": f.first_violation})),
            Err(e) => rep.check(false, || json!({"case": case(), "error": e.to_string()})),
        }
    }
    rep
}

/// First conventional, first storage and up to `renewables` renewable units
/// of `p`, or `None` without a conventional or storage unit.
fn desk_toy(p: &MicrogridParams, renewables: usize) -> Option<MicrogridParams> {
    if p.num_conventional == 0 || p.num_storage == 0 {
        return None;
    }
    let r = renewables.min(p.num_renewable);
    let keep: Vec<usize> = [0, p.num_conventional]
        .into_iter()
        .chain(p.renewable().take(r))
        .collect();
    let pick = |v: &[f64]| keep.iter().map(|i| v[*i]).collect::<Vec<_>>();
    Some(MicrogridParams {
        num_conventional: 1,
        num_storage: 1,
        num_renewable: r,
        num_loads: 1,
        u_min: pick(&p.u_min),
        u_max: pick(&p.u_max),
        p_min: pick(&p.p_min),
        p_max: pick(&p.p_max),
        x_min: vec![p.x_min[0]],
        x_max: vec![p.x_max[0]],
        chi: pick(&p.chi),
        sampling_time: p.sampling_time,
        cost_weights: CostWeights {
            c_t: vec![p.cost_weights.c_t[0]],
            c_on: vec![p.cost_weights.c_on[0]],
            c_sw: vec![p.cost_weights.c_sw[0]],
            c_s: vec![p.cost_weights.c_s[0]],
        },
        renewable_cap: p.renewable_cap[..r].to_vec(),
    })
}

/// Small random window for the mixed-integer suites.
fn toy_window(p: &MicrogridParams, np: usize, rng: &mut ChaCha8Rng) -> ScenarioWindow {
    let mut w_min = Vec::with_capacity(np);
    let mut w_max = Vec::with_capacity(np);
    for _ in 0..np {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for cap in &p.renewable_cap {
            let a = rng.gen_range(0.0..=0.6 * cap);
            lo.push(a);
            hi.push((a + rng.gen_range(0.0..0.2)).min(*cap));
        }
        let load = -rng.gen_range(0.3..1.2);
        lo.push(load - rng.gen_range(0.0..0.2));
        hi.push(load);
        w_min.push(lo);
        w_max.push(hi);
    }
    ScenarioWindow {
        w_min,
        w_max,
        x0: vec![rng.gen_range(0.5..=p.x_max[0] - 0.5)],
        delta0: vec![rng.gen_bool(0.5)],
    }
}

/// Copy of `instance` with set-points and switch statuses pinned to `plan`.
fn pin_plan(mut instance: MilpInstance, plan: &ControlPlan) -> MilpInstance {
    for (j, (u, d)) in plan.u.iter().zip(&plan.delta).enumerate() {
        let step = j + 1;
        for (i, v) in u.iter().enumerate() {
            if let Some(id) = instance.var(&format!("u[{step},{i}]")) {
                instance.variables[id.0].lower = *v;
                instance.variables[id.0].upper = *v;
            }
        }
        for (t, on) in d.iter().enumerate() {
            if let Some(id) = instance.var(&format!("delta[{step},{t}]")) {
                let v = if *on { 1.0 } else { 0.0 };
                instance.variables[id.0].lower = v;
                instance.variables[id.0].upper = v;
            }
        }
    }
    instance
}

/// Objective of the pinned problem, `None` if infeasible.
fn pinned_objective(
    variant: ControllerVariant,
    window: &ScenarioWindow,
    p: &MicrogridParams,
    plan: &ControlPlan,
) -> Result<Option<f64>, String> {
    let config = ControllerConfig::new(variant, plan.u.len());
    let instance = build_problem(&config, window, p).map_err(|e| e.to_string())?;
    let sol = solve_milp(&pin_plan(instance, plan), &default_solve_options()).map_err(|e| e.to_string())?;
    Ok(match sol.status {
        MilpStatus::Infeasible => None,
        _ => sol.objective,
    })
}

/// No unit clamps except renewables curtailed at their availability.
fn unclamped(outcomes: &[StepOutcome], p: &MicrogridParams) -> bool {
    outcomes.iter().all(|o| {
        o.feasible
            && o.sat_flags.iter().enumerate().all(|(i, f)| match f {
                SatFlag::Interior | SatFlag::Off => true,
                SatFlag::AtUpper => p.renewable().contains(&i),
                SatFlag::AtLower => false,
            })
    })
}

/// Plan whose powers at the lower sequence are chosen directly: rho settles
/// at zero and every unit sits strictly inside its limits.
fn interior_plan(p: &MicrogridParams, window: &ScenarioWindow, rng: &mut ChaCha8Rng) -> Option<ControlPlan> {
    let mut plan = ControlPlan {
        u: Vec::new(),
        delta: Vec::new(),
    };
    let mut x = window.x0.clone();
    let s = p.num_conventional;
    for row in &window.w_min {
        let on = rng.gen_bool(0.7);
        let pt = if on { rng.gen_range(p.p_min[0]..=p.p_max[0]) } else { 0.0 };
        let renew: Vec<f64> = (0..p.num_renewable).map(|r| rng.gen_range(0.0..=row[r])).collect();
        let ps = -row[p.num_renewable] - pt - renew.iter().sum::<f64>();
        let ts = p.sampling_time;
        let lo = p.p_min[s].max((x[0] - p.x_max[0]) / ts);
        let hi = p.p_max[s].min((x[0] - p.x_min[0]) / ts);
        if !(ps > lo + 1e-6 && ps < hi - 1e-6) {
            return None;
        }
        let mut u = vec![pt.max(p.p_min[0]), ps];
        u.extend(&renew);
        if u.iter().enumerate().any(|(i, v)| *v < p.u_min[i] || *v > p.u_max[i]) {
            return None;
        }
        x[0] -= ts * ps;
        plan.u.push(u);
        plan.delta.push(vec![on]);
    }
    Some(plan)
}

/// Plans feasible for the hard-limit problem keep their cost in the
/// saturated problem, and the strict-inclusion counterexample separates the
/// two.
pub fn suite_inclusion(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("feasible_set_inclusion");
    let Some(base) = desk_toy(params, 1) else {
        rep.count("skipped_no_toy");
        return rep;
    };
    let mut rng = rng_for(seed, 7);
    let pairs = [
        (ControllerVariant::ResDroopMm, ControllerVariant::SatResDroopMm),
        (ControllerVariant::Mm, ControllerVariant::SatMm),
    ];
    let mut attempts = 0;
    while rep.instances < n && attempts < 200 * n.max(1) {
        attempts += 1;
        let (hard, sat) = pairs[attempts % 2];
        let np = rng.gen_range(1..=2);
        let window = toy_window(&base, np, &mut rng);
        let Some(plan) = interior_plan(&base, &window, &mut rng) else {
            continue;
        };
        let Ok(eff) = ControllerConfig::new(hard, np).effective_params(&base) else {
            continue;
        };
        let both = [&window.w_min, &window.w_max]
            .iter()
            .all(|rows| simulate_horizon(&eff, rows, &plan, &window.x0).is_ok_and(|o| unclamped(&o, &eff)));
        if !both {
            rep.count("rejected_by_dispatch");
            continue;
        }
        let case = || json!({"hard": hard, "sat": sat, "window": window_json(&window), "plan": plan});
        match pinned_objective(hard, &window, &base, &plan) {
            Ok(None) => {
                rep.count("rejected_by_hard_encoding");
                continue;
            }
            Ok(Some(j1)) => match pinned_objective(sat, &window, &base, &plan) {
                Ok(Some(j2)) => rep.check((j1 - j2).abs() <= TOL, || {
                    json!({"case": case(), "hard_cost": j1, "sat_cost": j2})
                }),
                other => rep.check(false, || json!({"case": case(), "sat_result": format!("{other:?}")})),
            },
            Err(e) => rep.check(false, || json!({"case": case(), "error": e})),
        }
    }

    let (p, window, plan) = counterexample_instance();
    let hard = pinned_objective(ControllerVariant::ResDroopMm, &window, &p, &plan);
    let sat = pinned_objective(ControllerVariant::SatResDroopMm, &window, &p, &plan);
    let ok = matches!((&hard, &sat), (Ok(None), Ok(Some(_))));
    rep.check(ok, || {
        json!({"counterexample": true, "hard": format!("{hard:?}"), "sat": format!("{sat:?}")})
    });
    rep.count("counterexample");
    rep
}

/// One conventional unit pinned at its minimum power and one storage unit
/// pinned at its maximum, facing an uncertain load. Saturation lets the
/// conventional unit pick up extra load and the storage shed it; with hard
/// limits only rho = 0 is admissible, which cannot balance both endpoints.
pub fn counterexample_instance() -> (MicrogridParams, ScenarioWindow, ControlPlan) {
    let mut p = MicrogridParams::case_study_reduced(0, 1.0);
    p.u_min = vec![p.p_min[0], p.p_max[1]];
    p.u_max = p.u_min.clone();
    let window = ScenarioWindow {
        w_min: vec![vec![-1.3]],
        w_max: vec![vec![-1.1]],
        x0: vec![3.0],
        delta0: vec![true],
    };
    let plan = ControlPlan {
        u: vec![p.u_min.clone()],
        delta: vec![vec![true]],
    };
    (p, window, plan)
}

/// The solver's optimum is no worse than the best plan on a set-point grid,
/// and its extracted plan replays exactly through the dispatch model.
pub fn suite_milp_enumeration(params: &MicrogridParams, seed: u64, n: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("milp_vs_enumeration");
    let mut rng = rng_for(seed, 8);
    for k in 0..n {
        let Some(p) = desk_toy(params, rng.gen_range(0..=1)) else {
            rep.count("skipped_no_toy");
            return rep;
        };
        let variant = ControllerVariant::ALL[k % ControllerVariant::ALL.len()];
        let np = rng.gen_range(1..=2);
        let window = toy_window(&p, np, &mut rng);
        let mut assumed = p.clone();
        if !variant.renewable_droop() {
            for c in &mut assumed.chi[p.num_conventional + p.num_storage..] {
                *c = 0.0;
            }
        }
        let problem = SmallProblem {
            params: assumed,
            window: window.clone(),
            robust: variant != ControllerVariant::Prescient,
            hard_limits: !variant.saturated(),
        };
        let case = || json!({"variant": variant, "renewables": p.num_renewable, "window": window_json(&window)});
        let solved = solve_open_loop(
            &ControllerConfig::new(variant, np),
            &window,
            &p,
            &ReferenceBackend,
            &default_solve_options(),
        );
        let enumerated = enumerate_small_milp(&problem, 5, DEFAULT_GRID_CAP);
        match (solved, enumerated) {
            (Ok(s), Ok(e)) => {
                let enum_cost = e.map(|e| e.cost);
                let ok = match (s.predicted_cost, enum_cost) {
                    (Some(m), Some(g)) => m <= g + COST_TOL,
                    (Some(_), None) => true,
                    (None, found) => found.is_none() && s.status == MilpStatus::Infeasible,
                };
                if s.predicted_cost.is_some() {
                    rep.count("feasible");
                }
                rep.check(ok, || json!({"case": case(), "milp": s.predicted_cost, "enumeration": enum_cost}));
            }
            (a, b) => rep.check(false, || {
                json!({"case": case(), "error": format!("{:?} {:?}", a.err().map(|e| e.to_string()), b.err())})
            }),
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MicrogridParams {
        MicrogridParams::case_study_reduced(1, 1.0)
    }

    #[test]
    fn small_default_run_passes() {
        let opts = VerifyOptions {
            rho_monotone: 100,
            step_monotone: 100,
            rho_oracle: 100,
            storage_equivalence: 100,
            worst_case_at_min: 10,
            endpoint_sufficiency: 10,
            inclusion: 5,
            milp_enumeration: 3,
            mutation: None,
        };
        let r = run_verification_suite_with(&params(), 11, &opts).unwrap();
        for s in &r.suites {
            assert!(s.passed(), "{}: {:?}", s.name, s.failing_cases);
            assert!(s.instances > 0, "{}", s.name);
        }
        assert!(r.passed);
        assert!(r.suites[2].counters.get("flat_runs").copied().unwrap_or(0) > 0);
    }

    #[test]
    fn load_sign_mutation_is_caught() {
        let rep = suite_rho_monotone(&params(), 3, 300, Some(Mutation::FlipLoadSign));
        assert!(rep.failures > 0);
        assert!(!rep.failing_cases.is_empty());
    }

    #[test]
    fn counterexample_separates_encodings() {
        let (p, window, plan) = counterexample_instance();
        assert_eq!(pinned_objective(ControllerVariant::ResDroopMm, &window, &p, &plan), Ok(None));
        assert!(pinned_objective(ControllerVariant::SatResDroopMm, &window, &p, &plan)
            .unwrap()
            .is_some());
    }

    #[test]
    fn report_is_deterministic() {
        let opts = VerifyOptions {
            rho_monotone: 50,
            step_monotone: 50,
            rho_oracle: 50,
            storage_equivalence: 50,
            worst_case_at_min: 3,
            endpoint_sufficiency: 3,
            inclusion: 2,
            milp_enumeration: 1,
            mutation: None,
        };
        let a = serde_json::to_string(&run_verification_suite_with(&params(), 5, &opts).unwrap()).unwrap();
        let b = serde_json::to_string(&run_verification_suite_with(&params(), 5, &opts).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

//! Assembly of the open-loop mixed-integer program.

use super::encode::{
    derive_big_m, encode_abs_switching, encode_min, encode_saturation, encode_switch_product,
    EncodingConstants,
};
use super::{ControllerConfig, Endpoint, MpcError};
use crate::dispatch::{rho_bounds, RhoBounds};
use crate::milp::{LinExpr, MilpInstance, Relation, VarId};
use crate::model::MicrogridParams;
use crate::scenario::{validate_scenario, Scenario, ScenarioWindow};

/// Branching class of the region binaries of prediction step `step`: earlier
/// steps first. Switch statuses sit above every step.
fn step_priority(horizon: usize, step: usize) -> u32 {
    (horizon + 1 - step) as u32
}

/// First `horizon` steps of `window`, validated against `params`.
pub(crate) fn horizon_window(config: &ControllerConfig, window: &ScenarioWindow) -> Result<ScenarioWindow, MpcError> {
    let np = config.horizon;
    if window.w_min.len() < np || window.w_max.len() < np {
        return Err(MpcError::WindowTooShort {
            needed: np,
            found: window.w_min.len().min(window.w_max.len()),
        });
    }
    Ok(ScenarioWindow {
        w_min: window.w_min[..np].to_vec(),
        w_max: window.w_max[..np].to_vec(),
        x0: window.x0.clone(),
        delta0: window.delta0.clone(),
    })
}

fn check_window(window: &ScenarioWindow, params: &MicrogridParams) -> Result<(), MpcError> {
    let scenario = Scenario {
        horizon: window.len(),
        w_min: window.w_min.clone(),
        w_max: window.w_max.clone(),
        x0: window.x0.clone(),
        delta0: window.delta0.clone(),
    };
    let report = validate_scenario(&scenario, params);
    if report.is_empty() {
        Ok(())
    } else {
        Err(MpcError::InvalidWindow(report))
    }
}

/// Build the configured problem with all of its endpoint copies.
pub fn build_problem(
    config: &ControllerConfig,
    window: &ScenarioWindow,
    params: &MicrogridParams,
) -> Result<MilpInstance, MpcError> {
    build_problem_for(config, window, params, config.variant.endpoints())
}

/// Build the configured problem keeping only the listed endpoint copies. The
/// cost is attached to the lower copy; without it the program is a pure
/// feasibility check.
pub fn build_problem_for(
    config: &ControllerConfig,
    window: &ScenarioWindow,
    params: &MicrogridParams,
    endpoints: &[Endpoint],
) -> Result<MilpInstance, MpcError> {
    params.validate()?;
    let eff = config.effective_params(params)?;
    let window = horizon_window(config, window)?;
    check_window(&window, &eff)?;
    let consts = derive_big_m(&eff, &window)?;
    let rho = rho_bounds(&eff)?;

    let np = config.horizon;
    let mut m = MilpInstance::new(format!("{}_np{np}", config.variant.cli_name().replace('-', "_")));

    let u: Vec<Vec<VarId>> = (1..=np)
        .map(|j| {
            (0..eff.num_units())
                .map(|i| m.add_continuous(format!("u[{j},{i}]"), eff.u_min[i], eff.u_max[i]))
                .collect()
        })
        .collect();
    let delta: Vec<Vec<VarId>> = (1..=np)
        .map(|j| {
            eff.conventional()
                .map(|t| {
                    let d = m.add_binary(format!("delta[{j},{t}]"));
                    m.variables[d.0].priority = step_priority(np, 0);
                    d
                })
                .collect()
        })
        .collect();

    let w = &eff.cost_weights;
    let mut objective = LinExpr::default();
    let costed = endpoints.contains(&Endpoint::Min);
    for j in 0..np {
        for t in eff.conventional() {
            let prev = if j == 0 {
                LinExpr::constant(if window.delta0[t] { 1.0 } else { 0.0 })
            } else {
                LinExpr::from(delta[j - 1][t])
            };
            let s = encode_abs_switching(&mut m, &format!("sw[{},{t}]", j + 1), delta[j][t], &prev);
            if costed {
                objective = objective + LinExpr::term(delta[j][t], w.c_on[t]) + LinExpr::term(s, w.c_sw[t]);
            }
        }
    }

    let mut ctx = CopyBuilder {
        m: &mut m,
        params: &eff,
        consts: &consts,
        rho,
        saturated: config.variant.saturated(),
        u: &u,
        delta: &delta,
    };
    for e in endpoints {
        let powers = ctx.add_copy(*e, e.rows(&window), &window.x0)?;
        if *e == Endpoint::Min {
            for step in &powers {
                for t in eff.conventional() {
                    objective = objective + LinExpr::term(step[t], w.c_t[t]);
                }
                for (k, i) in eff.storage().enumerate() {
                    objective = objective + LinExpr::term(step[i], w.c_s[k]);
                }
            }
        }
    }
    m.objective = objective.normalized();
    Ok(m)
}

struct CopyBuilder<'a> {
    m: &'a mut MilpInstance,
    params: &'a MicrogridParams,
    consts: &'a EncodingConstants,
    rho: RhoBounds,
    saturated: bool,
    u: &'a [Vec<VarId>],
    delta: &'a [Vec<VarId>],
}

impl CopyBuilder<'_> {
    /// Add one endpoint copy; returns the unit power variables per step.
    fn add_copy(&mut self, e: Endpoint, rows: &[Vec<f64>], x0: &[f64]) -> Result<Vec<Vec<VarId>>, MpcError> {
        let p = self.params;
        let c = self.consts;
        let tag = e.label();
        let ts = p.sampling_time;
        let mut x_prev: Vec<LinExpr> = x0.iter().map(|x| LinExpr::constant(*x)).collect();
        let mut all_powers = Vec::with_capacity(rows.len());

        for (j, w) in rows.iter().enumerate() {
            let step = j + 1;
            let first_var = self.m.variables.len();
            let rho = self.m.add_continuous(format!("rho[{tag},{step}]"), self.rho.min, self.rho.max);
            let droop = |i: usize| LinExpr::from(self.u[j][i]) + LinExpr::term(rho, p.chi[i]);
            let mut powers = Vec::with_capacity(p.num_units());

            for t in p.conventional() {
                let name = format!("p[{tag},{step},{t}]");
                let d = self.delta[j][t];
                let pt = if self.saturated {
                    let y = encode_saturation(
                        self.m,
                        &format!("ysat[{tag},{step},{t}]"),
                        &droop(t),
                        p.p_min[t],
                        p.p_max[t],
                        c.conventional_sat,
                        c.eps_strict,
                    )?;
                    encode_switch_product(self.m, &name, d, &y.y.into(), p.p_max[t], c.switch_product_sat)?
                } else {
                    let pt = encode_switch_product(self.m, &name, d, &droop(t), p.p_max[t], c.switch_product_free)?;
                    self.m
                        .add_constraint(format!("{name}.min"), pt, Relation::Ge, LinExpr::term(d, p.p_min[t]));
                    pt
                };
                powers.push(pt);
            }

            for (s, i) in p.storage().enumerate() {
                let name = format!("p[{tag},{step},{i}]");
                let xname = format!("x[{tag},{step},{s}]");
                let ps = self.m.add_continuous(&name, p.p_min[i], p.p_max[i]);
                let x = if self.saturated {
                    let pt = encode_saturation(
                        self.m,
                        &format!("pt[{tag},{step},{i}]"),
                        &droop(i),
                        p.p_min[i],
                        p.p_max[i],
                        c.storage_power_sat,
                        c.eps_strict,
                    )?;
                    let target = x_prev[s].clone() - LinExpr::term(pt.y, ts);
                    let x = encode_saturation(
                        self.m,
                        &xname,
                        &target,
                        p.x_min[s],
                        p.x_max[s],
                        c.storage_energy_sat,
                        c.eps_strict,
                    )?
                    .y;
                    self.m.add_constraint(
                        format!("{name}.energy"),
                        LinExpr::term(ps, ts),
                        Relation::Eq,
                        x_prev[s].clone() - LinExpr::from(x),
                    );
                    x
                } else {
                    self.m.add_constraint(format!("{name}.droop"), ps, Relation::Eq, droop(i));
                    let next = x_prev[s].clone() - LinExpr::term(ps, ts);
                    let (lo, hi) = self.m.interval(&next);
                    let x = self
                        .m
                        .add_continuous(&xname, lo.max(p.x_min[s]), hi.min(p.x_max[s]).max(p.x_min[s]));
                    self.m.add_constraint(format!("{xname}.dyn"), x, Relation::Eq, next);
                    x
                };
                x_prev[s] = LinExpr::from(x);
                powers.push(ps);
            }

            for (r, i) in p.renewable().enumerate() {
                let name = format!("p[{tag},{step},{i}]");
                let avail = w[r];
                let pr = if self.saturated {
                    encode_saturation(self.m, &name, &droop(i), p.p_min[i], avail, c.renewable_sat, c.eps_strict)?.y
                } else {
                    encode_min(self.m, &name, &droop(i), avail, p.p_min[i], p.p_max[i], c.renewable_min)?.0
                };
                powers.push(pr);
            }

            let load: f64 = w[p.num_renewable..].iter().sum();
            let total: LinExpr = powers.iter().map(|v| LinExpr::from(*v)).sum();
            self.m
                .add_constraint(format!("balance[{tag},{step}]"), total, Relation::Eq, -load);
            let class = step_priority(rows.len(), step);
            for v in self.m.variables[first_var..].iter_mut().filter(|v| v.binary) {
                v.priority = class;
            }
            all_powers.push(powers);
        }
        Ok(all_powers)
    }
}

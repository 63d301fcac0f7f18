//! Big-M encodings of the piecewise-affine unit laws.

use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::dispatch::rho_bounds;
use crate::milp::{LinExpr, MilpInstance, Relation, VarId};
use crate::model::MicrogridParams;
use crate::scenario::ScenarioWindow;

/// Safety factor applied to expression magnitudes.
const M_FACTOR: f64 = 1.1;

/// Big-M constants, one per encoding class, plus the strictness tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConstants {
    pub conventional_sat: f64,
    pub storage_power_sat: f64,
    pub storage_energy_sat: f64,
    pub renewable_sat: f64,
    /// Switch product for saturated conventional output.
    pub switch_product_sat: f64,
    /// Switch product for unsaturated conventional droop.
    pub switch_product_free: f64,
    pub renewable_min: f64,
    /// Closed region inequalities (`0` keeps both boundary regions feasible).
    pub eps_strict: f64,
}

impl EncodingConstants {
    /// Named constants for audit output.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("conventional_sat", self.conventional_sat),
            ("storage_power_sat", self.storage_power_sat),
            ("storage_energy_sat", self.storage_energy_sat),
            ("renewable_sat", self.renewable_sat),
            ("switch_product_sat", self.switch_product_sat),
            ("switch_product_free", self.switch_product_free),
            ("renewable_min", self.renewable_min),
        ]
    }
}

/// Big-M for `sat(lo, e, hi)` with `e` ranging over `[e_lo, e_hi]`: the larger
/// of the padded magnitude of `e` and the smallest constant that relaxes
/// every region constraint.
pub fn saturation_big_m(e_lo: f64, e_hi: f64, lo: f64, hi: f64) -> f64 {
    let required = (e_hi - lo).max(hi - e_lo).max(hi - lo);
    (M_FACTOR * e_lo.abs().max(e_hi.abs())).max(required)
}

fn class_max(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.fold(0.0, f64::max);
    // Unused classes still get a positive constant.
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Derive every big-M constant by interval arithmetic over the box
/// `u in [u_min, u_max]`, `rho in [rho_min, rho_max]`, `x in [x_min, x_max]`
/// and the window's disturbance range. `params` must carry the droop gains
/// the controller actually uses.
pub fn derive_big_m(params: &MicrogridParams, window: &ScenarioWindow) -> Result<EncodingConstants, MpcError> {
    let rho = rho_bounds(params)?;
    let droop = |i: usize| {
        let c = params.chi[i];
        (params.u_min[i] + c * rho.min, params.u_max[i] + c * rho.max)
    };
    let conventional_sat = class_max(params.conventional().map(|i| {
        let (a, b) = droop(i);
        saturation_big_m(a, b, params.p_min[i], params.p_max[i])
    }));
    let storage_power_sat = class_max(params.storage().map(|i| {
        let (a, b) = droop(i);
        saturation_big_m(a, b, params.p_min[i], params.p_max[i])
    }));
    let ts = params.sampling_time;
    let storage_energy_sat = class_max(params.storage().enumerate().map(|(s, i)| {
        let e_lo = params.x_min[s] - ts * params.p_max[i];
        let e_hi = params.x_max[s] - ts * params.p_min[i];
        saturation_big_m(e_lo, e_hi, params.x_min[s], params.x_max[s])
    }));

    let rows = window.w_min.iter().chain(&window.w_max);
    let w_range = |r: usize| {
        rows.clone()
            .map(|w| w[r])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let renewable_sat = class_max(params.renewable().enumerate().map(|(r, i)| {
        let (a, b) = droop(i);
        let (_, w_hi) = w_range(r);
        saturation_big_m(a, b, params.p_min[i], w_hi.max(params.p_min[i]))
    }));
    let renewable_min = class_max(params.renewable().enumerate().map(|(r, i)| {
        let (a, b) = droop(i);
        let (w_lo, w_hi) = w_range(r);
        let required = (b - w_lo).max(w_hi - a);
        (M_FACTOR * a.abs().max(b.abs()).max(w_hi.abs())).max(required)
    }));
    let switch_product_sat = class_max(
        params
            .conventional()
            .map(|i| M_FACTOR * params.p_min[i].abs().max(params.p_max[i].abs())),
    );
    let switch_product_free = class_max(params.conventional().map(|i| {
        let (a, b) = droop(i);
        M_FACTOR * a.abs().max(b.abs())
    }));
    Ok(EncodingConstants {
        conventional_sat,
        storage_power_sat,
        storage_energy_sat,
        renewable_sat,
        switch_product_sat,
        switch_product_free,
        renewable_min,
        eps_strict: 0.0,
    })
}

/// Variables introduced by [`encode_saturation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SatEncoding {
    pub y: VarId,
    pub z_lo: VarId,
    pub z_hi: VarId,
}

/// Row constant for a big-M row that must relax by `required` over the
/// current variable box. Fails if `required` exceeds the class constant.
fn row_m(name: &str, required: f64, big_m: f64) -> Result<f64, MpcError> {
    let required = required.max(0.0);
    if required > big_m * (1.0 + 1e-9) + 1e-12 {
        return Err(MpcError::EncodingDefect(format!(
            "{name}: needs big-M {required} above the class constant {big_m}"
        )));
    }
    Ok(required)
}

/// Add `y = sat(lo, expr, hi)` to `m`. `z_lo = 1` selects the lower region,
/// `z_hi = 1` the upper one, both zero the linear region.
///
/// Each row uses the smallest constant valid over the interval of `expr`
/// implied by the current variable bounds, capped by `big_m`; regions the
/// interval cannot reach have their binary fixed.
pub fn encode_saturation(
    m: &mut MilpInstance,
    name: &str,
    expr: &LinExpr,
    lo: f64,
    hi: f64,
    big_m: f64,
    eps_strict: f64,
) -> Result<SatEncoding, MpcError> {
    if lo > hi {
        return Err(MpcError::InvalidConfig(format!("{name}: saturation bounds {lo} > {hi}")));
    }
    let (e_lo, e_hi) = m.interval(expr);
    let (y_lo, y_hi) = (e_lo.clamp(lo, hi), e_hi.clamp(lo, hi));
    let y = m.add_continuous(name, y_lo, y_hi);
    let z_lo = m.add_binary(format!("{name}.zlo"));
    let z_hi = m.add_binary(format!("{name}.zhi"));
    if e_lo >= lo {
        m.variables[z_lo.0].upper = 0.0;
    } else if e_hi < lo {
        m.variables[z_lo.0].lower = 1.0;
    }
    if e_hi <= hi {
        m.variables[z_hi.0].upper = 0.0;
    } else if e_lo > hi {
        m.variables[z_hi.0].lower = 1.0;
    }
    let e = || expr.clone();
    let zl = || LinExpr::from(z_lo);
    let zh = || LinExpr::from(z_hi);
    let one = || LinExpr::constant(1.0);
    let row = |tag: &str, need: f64| row_m(&format!("{name}.{tag}"), need, big_m);
    let m_below = row("ylo", lo - e_lo)?;
    let m_above = row("yhi", e_hi - hi)?;
    let m_atlo = row("atlo", y_hi - lo)?;
    let m_athi = row("athi", hi - y_lo)?;
    let m_reglo = row("reglo", e_hi - lo + eps_strict)?;
    let m_reghi = row("reghi", hi + eps_strict - e_lo)?;
    m.add_constraint(format!("{name}.excl"), zl() + zh(), Relation::Le, 1.0);
    m.add_constraint(format!("{name}.ylo"), y, Relation::Le, e() + zl() * m_below);
    m.add_constraint(format!("{name}.yhi"), y, Relation::Ge, e() - zh() * m_above);
    m.add_constraint(format!("{name}.atlo"), y, Relation::Le, LinExpr::constant(lo) + (one() - zl()) * m_atlo);
    m.add_constraint(format!("{name}.athi"), y, Relation::Ge, LinExpr::constant(hi) - (one() - zh()) * m_athi);
    m.add_constraint(
        format!("{name}.reglo"),
        e(),
        Relation::Le,
        LinExpr::constant(lo - eps_strict) + (one() - zl()) * m_reglo,
    );
    m.add_constraint(
        format!("{name}.reghi"),
        e(),
        Relation::Ge,
        LinExpr::constant(hi + eps_strict) - (one() - zh()) * m_reghi,
    );
    m.add_constraint(
        format!("{name}.inlo"),
        e(),
        Relation::Ge,
        LinExpr::constant(lo) - zl() * m_below - zh() * m_below,
    );
    m.add_constraint(
        format!("{name}.inhi"),
        e(),
        Relation::Le,
        LinExpr::constant(hi) + zl() * m_above + zh() * m_above,
    );
    Ok(SatEncoding { y, z_lo, z_hi })
}

/// Add `p = delta * y` for a binary `delta` and `|y| <= big_m`; returns `p`.
/// Uses the four product envelopes over the interval of `y`, so the
/// relaxation is the convex hull of the product on that box.
pub fn encode_switch_product(
    m: &mut MilpInstance,
    name: &str,
    delta: VarId,
    y: &LinExpr,
    p_max: f64,
    big_m: f64,
) -> Result<VarId, MpcError> {
    let (y_lo, y_hi) = m.interval(y);
    if y_lo.abs().max(y_hi.abs()) > big_m * (1.0 + 1e-9) + 1e-12 {
        return Err(MpcError::EncodingDefect(format!(
            "{name}: operand range [{y_lo}, {y_hi}] exceeds big-M {big_m}"
        )));
    }
    let upper = p_max.min(y_hi.max(0.0));
    let p = m.add_continuous(name, 0.0, upper);
    let d = || LinExpr::from(delta);
    let off = || LinExpr::constant(1.0) - d();
    m.add_constraint(format!("{name}.on_hi"), p, Relation::Le, y.clone() - off() * y_lo);
    m.add_constraint(format!("{name}.on_lo"), p, Relation::Ge, y.clone() - off() * y_hi);
    m.add_constraint(format!("{name}.off"), p, Relation::Le, d() * upper);
    if y_lo > 0.0 {
        m.add_constraint(format!("{name}.floor"), p, Relation::Ge, d() * y_lo);
    }
    Ok(p)
}

/// Add `s = |delta - prev|` for binary operands; `prev` may be a constant.
pub fn encode_abs_switching(m: &mut MilpInstance, name: &str, delta: VarId, prev: &LinExpr) -> VarId {
    let s = m.add_continuous(name, 0.0, 1.0);
    let d = || LinExpr::from(delta);
    let q = || prev.clone();
    m.add_constraint(format!("{name}.up"), s, Relation::Ge, d() - q());
    m.add_constraint(format!("{name}.down"), s, Relation::Ge, q() - d());
    m.add_constraint(format!("{name}.sum"), s, Relation::Le, d() + q());
    m.add_constraint(format!("{name}.both"), s, Relation::Le, LinExpr::constant(2.0) - d() - q());
    s
}

/// Add `p = min(a, w)` for a constant `w`, with `p` boxed to `[lower, upper]`.
/// `z = 1` selects `w`. Returns `(p, z)`.
pub fn encode_min(
    m: &mut MilpInstance,
    name: &str,
    a: &LinExpr,
    w: f64,
    lower: f64,
    upper: f64,
    big_m: f64,
) -> Result<(VarId, VarId), MpcError> {
    let (a_lo, a_hi) = m.interval(a);
    let m_a = row_m(&format!("{name}.ge_a"), a_hi - w, big_m)?;
    let m_w = row_m(&format!("{name}.ge_w"), w - a_lo, big_m)?;
    let p = m.add_continuous(name, lower, upper);
    let z = m.add_binary(format!("{name}.z"));
    if a_hi <= w {
        m.variables[z.0].upper = 0.0;
    } else if a_lo >= w {
        m.variables[z.0].lower = 1.0;
    }
    m.add_constraint(format!("{name}.le_a"), p, Relation::Le, a.clone());
    m.add_constraint(format!("{name}.le_w"), p, Relation::Le, w);
    m.add_constraint(format!("{name}.ge_a"), p, Relation::Ge, a.clone() - LinExpr::term(z, m_a));
    m.add_constraint(
        format!("{name}.ge_w"),
        p,
        Relation::Ge,
        LinExpr::constant(w - m_w) + LinExpr::term(z, m_w),
    );
    Ok((p, z))
}

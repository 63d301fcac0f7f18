//! Economic stage and horizon costs.
//!
//! Renewable units are free to operate; conventional units pay fuel, a fixed
//! on-cost and a switching cost, storage pays (or earns) in proportion to its
//! power.

use crate::model::{check_len, ControlPlan, CostWeights, ModelError, StepOutcome};

/// Stage cost of one sampling period.
///
/// `p` holds the unit powers ordered conventional, storage, renewable; only
/// the first `T + S` entries enter the cost.
pub fn stage_cost(
    p: &[f64],
    delta: &[bool],
    delta_prev: &[bool],
    weights: &CostWeights,
) -> Result<f64, ModelError> {
    let t = weights.c_t.len();
    let s = weights.c_s.len();
    if p.len() < t + s {
        return Err(ModelError::Dimension {
            what: "unit powers",
            expected: t + s,
            found: p.len(),
        });
    }
    check_len("switch statuses", t, delta.len())?;
    check_len("previous switch statuses", t, delta_prev.len())?;

    let mut cost = 0.0;
    for i in 0..t {
        cost += weights.c_t[i] * p[i];
        if delta[i] {
            cost += weights.c_on[i];
        }
        if delta[i] != delta_prev[i] {
            cost += weights.c_sw[i];
        }
    }
    for k in 0..s {
        cost += weights.c_s[k] * p[t + k];
    }
    Ok(cost)
}

/// Sum of stage costs along a predicted or realized trajectory, with
/// `delta0` seeding the first switching term.
pub fn horizon_cost(
    outcomes: &[StepOutcome],
    plan: &ControlPlan,
    delta0: &[bool],
    weights: &CostWeights,
) -> Result<f64, ModelError> {
    check_len("trajectory length", plan.horizon(), outcomes.len())?;
    check_len("plan switch steps", plan.horizon(), plan.delta.len())?;
    let mut prev = delta0;
    let mut total = 0.0;
    for (out, delta) in outcomes.iter().zip(&plan.delta) {
        total += stage_cost(&out.p, delta, prev, weights)?;
        prev = delta;
    }
    Ok(total)
}

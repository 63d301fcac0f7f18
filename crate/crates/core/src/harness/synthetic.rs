//! Seeded synthetic forecasts: wind, PV and a two-peak load.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::model::MicrogridParams;
use crate::scenario::{validate_scenario, Scenario};

/// Half-sine daylight shape, zero outside 06:00 to 18:00.
fn daylight(hour: f64) -> f64 {
    if (6.0..=18.0).contains(&hour) {
        (PI * (hour - 6.0) / 12.0).sin().max(0.0)
    } else {
        0.0
    }
}

/// Load magnitude with a morning and an evening peak.
fn demand(hour: f64) -> f64 {
    let bump = |centre: f64, spread: f64| (-((hour - centre) / spread).powi(2)).exp();
    0.35 + 0.35 * bump(8.0, 1.5) + 0.5 * bump(19.0, 2.0)
}

/// Forecast intervals over `days` days at the sampling time of `params`.
///
/// Renewable units alternate wind and PV, starting with wind. Bounds are the
/// nominal profile scaled by `1 -/+ width`, clipped to the sign conventions
/// and renewable capacities. The storage starts at one third of its range and
/// every conventional unit starts off.
pub fn gen_synthetic_scenario(
    seed: u64,
    days: usize,
    params: &MicrogridParams,
    width: f64,
) -> Result<Scenario, HarnessError> {
    if days == 0 {
        return Err(HarnessError::Input("days must be at least 1".into()));
    }
    if !(width >= 0.0 && width.is_finite()) {
        return Err(HarnessError::Input(format!("uncertainty width {width} must be finite and non-negative")));
    }
    params.validate()?;
    let per_day = 24.0 / params.sampling_time;
    if (per_day - per_day.round()).abs() > 1e-9 || per_day < 1.0 {
        return Err(HarnessError::Input("sampling time must divide a day".into()));
    }
    let per_day = per_day.round() as usize;
    let n = days * per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut renewables = vec![Vec::with_capacity(n); params.num_renewable];
    for (r, series) in renewables.iter_mut().enumerate() {
        let cap = params.renewable_cap[r];
        if r % 2 == 0 {
            let mut level: f64 = rng.gen_range(0.3..0.7);
            let mut smooth = level;
            for _ in 0..n {
                level = (level + rng.gen_range(-0.08..0.08)).clamp(0.05, 0.95);
                smooth = 0.8 * smooth + 0.2 * level;
                series.push(cap * smooth);
            }
        } else {
            for _ in 0..days {
                let amplitude: f64 = rng.gen_range(0.6..1.2);
                for k in 0..per_day {
                    let hour = k as f64 * params.sampling_time;
                    series.push(cap * (amplitude * daylight(hour)).clamp(0.0, 1.0));
                }
            }
        }
    }
    let loads: Vec<f64> = (0..n)
        .map(|k| {
            let hour = (k % per_day) as f64 * params.sampling_time;
            -demand(hour) * (1.0 + rng.gen_range(-0.05..0.05)) / params.num_loads.max(1) as f64
        })
        .collect();

    let mut w_min = Vec::with_capacity(n);
    let mut w_max = Vec::with_capacity(n);
    for k in 0..n {
        let mut lo = Vec::with_capacity(params.num_disturbances());
        let mut hi = Vec::with_capacity(params.num_disturbances());
        for (r, series) in renewables.iter().enumerate() {
            let v = series[k];
            let cap = params.renewable_cap[r];
            lo.push((v * (1.0 - width)).clamp(0.0, cap));
            hi.push((v * (1.0 + width)).clamp(0.0, cap));
        }
        for _ in 0..params.num_loads {
            let v = loads[k];
            lo.push((v * (1.0 + width)).min(0.0));
            hi.push((v * (1.0 - width)).min(0.0));
        }
        w_min.push(lo);
        w_max.push(hi);
    }

    let scenario = Scenario {
        horizon: n,
        w_min,
        w_max,
        x0: (0..params.num_storage)
            .map(|s| params.x_min[s] + (params.x_max[s] - params.x_min[s]) / 3.0)
            .collect(),
        delta0: vec![false; params.num_conventional],
    };
    let violations = validate_scenario(&scenario, params);
    if !violations.is_empty() {
        return Err(crate::scenario::ScenarioError::Invalid(violations).into());
    }
    Ok(scenario)
}

//! Browser bindings: a load sweep through the droop layer, a synthetic
//! forecast, and a short closed-loop run. Every export returns JSON text.

use satdroop::harness::{closed_loop_simulate, default_solve_options, gen_synthetic_scenario, RealizationRule};
use satdroop::milp::ReferenceBackend;
use satdroop::mpc::{ControllerConfig, ControllerVariant};
use satdroop::{dispatch_step, MicrogridParams, ScenarioFile};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Longest closed loop the page may request.
pub const MAX_DEMO_STEPS: usize = 48;
/// Longest prediction horizon the page may request.
pub const MAX_DEMO_HORIZON: usize = 6;

fn params(renewables: usize) -> Result<MicrogridParams, String> {
    if renewables > 2 {
        return Err(format!("renewables must be 0, 1 or 2, got {renewables}"));
    }
    Ok(MicrogridParams::case_study_reduced(renewables, 1.0))
}

fn text(v: Value) -> String {
    serde_json::to_string(&v).expect("JSON values serialize")
}

/// Unit powers and rho as the load magnitude rises from `load_from` to
/// `load_to`, with every set-point at `setpoint`, the conventional unit on,
/// renewables at half capacity and the storage at mid charge.
pub fn droop_sweep_json(
    renewables: usize,
    setpoint: f64,
    load_from: f64,
    load_to: f64,
    points: usize,
) -> Result<String, String> {
    let p = params(renewables)?;
    if !(2..=400).contains(&points) {
        return Err(format!("points must be between 2 and 400, got {points}"));
    }
    if !(setpoint.is_finite() && load_from.is_finite() && load_to.is_finite()) {
        return Err("inputs must be finite".into());
    }
    let u = vec![setpoint.clamp(-5.0, 5.0); p.num_units()];
    let delta = vec![true; p.num_conventional];
    let x = vec![0.5 * (p.x_min[0] + p.x_max[0])];
    let mut rows = Vec::with_capacity(points);
    for k in 0..points {
        let load = load_from + (load_to - load_from) * k as f64 / (points - 1) as f64;
        let mut w: Vec<f64> = p.renewable_cap.iter().map(|c| 0.5 * c).collect();
        w.push(-load.abs());
        let o = dispatch_step(&p, &x, &u, &delta, &w).map_err(|e| e.to_string())?;
        rows.push(json!({"load": load.abs(), "p": o.p, "rho": o.rho, "feasible": o.feasible}));
    }
    let names: Vec<&str> = ["conventional", "storage", "wind", "pv"][..p.num_units()].to_vec();
    Ok(text(json!({"units": names, "rows": rows})))
}

/// Scenario JSON in the on-disk format.
pub fn synthetic_scenario_json(seed: u64, days: usize, width: f64, renewables: usize) -> Result<String, String> {
    let p = params(renewables)?;
    if !(1..=7).contains(&days) {
        return Err(format!("days must be between 1 and 7, got {days}"));
    }
    let s = gen_synthetic_scenario(seed, days, &p, width).map_err(|e| e.to_string())?;
    Ok(ScenarioFile::new(p, s).to_json())
}

/// Closed loop of `steps` samples against the lower forecast bound.
pub fn closed_loop_json(scenario_json: &str, controller: &str, horizon: usize, steps: usize) -> Result<String, String> {
    let (p, s) = ScenarioFile::from_json(scenario_json).map_err(|e| e.to_string())?;
    let variant: ControllerVariant = controller.parse().map_err(|e: satdroop::mpc::MpcError| e.to_string())?;
    if !(1..=MAX_DEMO_HORIZON).contains(&horizon) {
        return Err(format!("horizon must be between 1 and {MAX_DEMO_HORIZON}"));
    }
    if !(1..=MAX_DEMO_STEPS).contains(&steps) {
        return Err(format!("steps must be between 1 and {MAX_DEMO_STEPS}"));
    }
    let config = ControllerConfig::new(variant, horizon);
    let record = closed_loop_simulate(
        &config,
        &s,
        &RealizationRule::Min,
        &p,
        &ReferenceBackend,
        &default_solve_options(),
        Some(steps),
    )
    .map_err(|e| e.to_string())?;
    let steps: Vec<Value> = record
        .steps
        .iter()
        .map(|st| {
            json!({
                "step": st.step,
                "x": st.outcome.x,
                "p": st.outcome.p,
                "rho": st.outcome.rho,
                "delta": st.delta,
                "stage_cost": st.stage_cost,
            })
        })
        .collect();
    Ok(text(json!({
        "controller": variant.to_string(),
        "sampling_time": p.sampling_time,
        "steps": steps,
        "per_sample_cost": record.metrics.per_sample_cost,
        "switching_count": record.metrics.switching_count,
        "aborted": record.aborted.map(|a| a.message),
    })))
}

#[wasm_bindgen]
pub fn droop_sweep(renewables: usize, setpoint: f64, load_from: f64, load_to: f64, points: usize) -> Result<String, JsError> {
    droop_sweep_json(renewables, setpoint, load_from, load_to, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn synthetic_scenario(seed: u32, days: usize, width: f64, renewables: usize) -> Result<String, JsError> {
    synthetic_scenario_json(u64::from(seed), days, width, renewables).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn closed_loop(scenario_json: &str, controller: &str, horizon: usize, steps: usize) -> Result<String, JsError> {
    closed_loop_json(scenario_json, controller, horizon, steps).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_saturates_the_conventional_unit() {
        let v: Value = serde_json::from_str(&droop_sweep_json(1, 0.0, 0.0, 3.0, 31).unwrap()).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 31);
        let first = rows[0]["p"][0].as_f64().unwrap();
        let last = rows[30]["p"][0].as_f64().unwrap();
        assert!(first >= 0.2 - 1e-12);
        assert!((last - 1.0).abs() < 1e-12);
        let rho: Vec<f64> = rows.iter().map(|r| r["rho"].as_f64().unwrap()).collect();
        assert!(rho.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn scenario_round_trips() {
        let a = synthetic_scenario_json(4, 1, 0.1, 1).unwrap();
        assert_eq!(a, synthetic_scenario_json(4, 1, 0.1, 1).unwrap());
        let (p, s) = ScenarioFile::from_json(&a).unwrap();
        assert_eq!(p.num_renewable, 1);
        assert_eq!(s.w_min.len(), 96);
    }

    #[test]
    fn short_closed_loop() {
        let scenario = synthetic_scenario_json(4, 1, 0.1, 1).unwrap();
        let v: Value = serde_json::from_str(&closed_loop_json(&scenario, "sat-res-mm", 2, 3).unwrap()).unwrap();
        assert_eq!(v["steps"].as_array().unwrap().len(), 3);
        assert!(v["per_sample_cost"].is_f64());
        assert!(v["aborted"].is_null());
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(droop_sweep_json(3, 0.0, 0.0, 1.0, 10).is_err());
        assert!(droop_sweep_json(1, 0.0, 0.0, 1.0, 1).is_err());
        assert!(synthetic_scenario_json(1, 0, 0.1, 1).is_err());
        let scenario = synthetic_scenario_json(4, 1, 0.1, 1).unwrap();
        assert!(closed_loop_json(&scenario, "nope", 2, 3).is_err());
        assert!(closed_loop_json(&scenario, "mm", 20, 3).is_err());
        assert!(closed_loop_json("{}", "mm", 2, 3).is_err());
    }
}

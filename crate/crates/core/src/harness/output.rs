//! CSV renderings of closed-loop runs and comparisons.

use super::{Comparison, SimRecord};
use crate::model::MicrogridParams;

fn render(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory cannot fail");
    }
    String::from_utf8(w.into_inner().expect("flushing memory cannot fail")).expect("CSV fields are UTF-8")
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// One row per sample: step, storage energies, unit powers, rho, switch
/// statuses, stage cost and feasibility.
pub fn trajectory_csv(record: &SimRecord, params: &MicrogridParams) -> String {
    let mut header = vec!["step".to_string()];
    header.extend((0..params.num_storage).map(|s| format!("x_{s}")));
    header.extend((0..params.num_units()).map(|i| format!("p_{i}")));
    header.push("rho".into());
    header.extend((0..params.num_conventional).map(|t| format!("delta_{t}")));
    header.extend(["stage_cost".to_string(), "feasible".to_string()]);
    let mut rows = vec![header];
    for s in &record.steps {
        let mut row = vec![s.step.to_string()];
        row.extend(s.outcome.x.iter().map(f64::to_string));
        row.extend(s.outcome.p.iter().map(f64::to_string));
        row.push(s.outcome.rho.to_string());
        row.extend(s.delta.iter().map(|d| flag(*d)));
        row.push(s.stage_cost.to_string());
        row.push(flag(s.outcome.feasible));
        rows.push(row);
    }
    render(rows)
}

/// One row per closed-loop run.
pub fn metrics_csv(records: &[&SimRecord]) -> String {
    let mut rows = vec![[
        "controller",
        "per_sample_cost",
        "per_sample_res_energy",
        "per_sample_conventional_energy",
        "switching_count",
        "samples",
        "completed",
    ]
    .map(String::from)
    .to_vec()];
    for r in records {
        let m = r.metrics;
        rows.push(vec![
            r.controller.clone(),
            m.per_sample_cost.to_string(),
            m.per_sample_res_energy.to_string(),
            m.per_sample_conventional_energy.to_string(),
            m.switching_count.to_string(),
            r.steps.len().to_string(),
            flag(r.aborted.is_none()),
        ]);
    }
    render(rows)
}

/// Predicted cost of every controller at every initial condition; empty
/// cells mark infeasible problems.
pub fn comparison_csv(comparison: &Comparison) -> String {
    let first = comparison.initial_conditions.first();
    let storage = first.map_or(0, |ic| ic.x.len());
    let conventional = first.map_or(0, |ic| ic.delta.len());
    let mut header = vec!["k".to_string()];
    header.extend((0..storage).map(|s| format!("x_{s}")));
    header.extend((0..conventional).map(|t| format!("delta_{t}")));
    header.extend(comparison.controllers.iter().map(|c| c.config.variant.to_string()));
    let mut rows = vec![header];
    for (n, ic) in comparison.initial_conditions.iter().enumerate() {
        let mut row = vec![ic.k.to_string()];
        row.extend(ic.x.iter().map(f64::to_string));
        row.extend(ic.delta.iter().map(|d| flag(*d)));
        row.extend(
            comparison
                .controllers
                .iter()
                .map(|c| c.predicted[n].map_or(String::new(), |v| v.to_string())),
        );
        rows.push(row);
    }
    render(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Metrics, StepRecord};
    use crate::milp::MilpStatus;
    use crate::model::{SatFlag, StepOutcome};

    fn record() -> SimRecord {
        let steps = vec![StepRecord {
            step: 1,
            u: vec![0.2, 0.1, 0.0],
            delta: vec![true],
            w: vec![0.3, -0.8],
            outcome: StepOutcome {
                p: vec![0.25, 0.25, 0.3],
                x: vec![1.9375],
                rho: 0.05,
                sat_flags: vec![SatFlag::Interior; 3],
                feasible: true,
            },
            stage_cost: 0.975,
            status: MilpStatus::Optimal,
            predicted_cost: Some(0.975),
            solve_seconds: 0.01,
        }];
        SimRecord {
            controller: "sat-res-mm".into(),
            delta0: vec![false],
            metrics: Metrics {
                per_sample_cost: 0.975,
                per_sample_res_energy: 0.075,
                per_sample_conventional_energy: 0.0625,
                switching_count: 1,
            },
            steps,
            aborted: None,
        }
    }

    #[test]
    fn trajectory_columns() {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let text = trajectory_csv(&record(), &p);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,x_0,p_0,p_1,p_2,rho,delta_0,stage_cost,feasible");
        assert_eq!(lines[1], "1,1.9375,0.25,0.25,0.3,0.05,1,0.975,1");
    }

    #[test]
    fn metrics_columns() {
        let r = record();
        let text = metrics_csv(&[&r]);
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with(
            "controller,per_sample_cost,per_sample_res_energy,per_sample_conventional_energy,switching_count"
        ));
        assert_eq!(lines[1], "sat-res-mm,0.975,0.075,0.0625,1,1,1");
    }
}

//! Open-loop comparison of controllers along a shared set of initial
//! conditions.

use serde::{Deserialize, Serialize};

use super::{closed_loop_simulate, HarnessError, Metrics, RealizationRule, SimRecord};
use crate::milp::{MilpBackend, SolveOptions};
use crate::model::MicrogridParams;
use crate::mpc::{solve_open_loop, ControllerConfig, ControllerVariant, Endpoint};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSettings {
    /// Cap on the number of initial conditions.
    pub max_steps: Option<usize>,
    /// Also run every controller in closed loop.
    pub closed_loop: bool,
    /// Disturbance driving the reference and closed-loop runs.
    pub realization: RealizationRule,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            max_steps: None,
            closed_loop: true,
            realization: RealizationRule::Min,
        }
    }
}

/// State at the start of sample `k` of the reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub k: usize,
    pub x: Vec<f64>,
    pub delta: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerComparison {
    pub config: ControllerConfig,
    /// Predicted cost per initial condition; `None` where infeasible.
    pub predicted: Vec<Option<f64>>,
    /// Mean predicted conventional energy per sample over the feasible
    /// initial conditions.
    pub mean_predicted_conventional: Option<f64>,
    pub closed_loop: Option<SimRecord>,
}

impl ControllerComparison {
    pub fn metrics(&self) -> Option<Metrics> {
        self.closed_loop.as_ref().map(|r| r.metrics)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub initial_conditions: Vec<InitialCondition>,
    pub controllers: Vec<ControllerComparison>,
}

impl Comparison {
    pub fn controller(&self, variant: ControllerVariant) -> Option<&ControllerComparison> {
        self.controllers.iter().find(|c| c.config.variant == variant)
    }
}

fn annotate(config: &ControllerConfig, e: HarnessError) -> HarnessError {
    HarnessError::Controller {
        controller: config.variant.to_string(),
        source: Box::new(e),
    }
}

/// Run a prescient closed loop to collect initial conditions, then solve
/// every controller's open-loop problem at each of them. Controllers are
/// evaluated on separate threads; results keep the order of `configs`.
pub fn compare_controllers(
    configs: &[ControllerConfig],
    scenario: &Scenario,
    params: &MicrogridParams,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
    settings: &CompareSettings,
) -> Result<Comparison, HarnessError> {
    let Some(first) = configs.first() else {
        return Err(HarnessError::Input("no controllers to compare".into()));
    };
    let horizon = first.horizon;
    if configs.iter().any(|c| c.horizon != horizon) {
        return Err(HarnessError::Input("controllers must share the prediction horizon".into()));
    }
    let reference_config = ControllerConfig {
        variant: ControllerVariant::Prescient,
        horizon,
        chi_override: first.chi_override.clone(),
    };
    let reference = closed_loop_simulate(
        &reference_config,
        scenario,
        &settings.realization,
        params,
        backend,
        options,
        settings.max_steps,
    )
    .map_err(|e| annotate(&reference_config, e))?;
    if let Some(a) = &reference.aborted {
        return Err(annotate(
            &reference_config,
            HarnessError::Input(format!("reference run stopped at sample {}: {}", a.step, a.message)),
        ));
    }

    let mut initial_conditions = Vec::with_capacity(reference.steps.len());
    let (mut x, mut delta) = (scenario.x0.clone(), scenario.delta0.clone());
    for (k, s) in reference.steps.iter().enumerate() {
        initial_conditions.push(InitialCondition {
            k,
            x: x.clone(),
            delta: delta.clone(),
        });
        x.clone_from(&s.outcome.x);
        delta.clone_from(&s.delta);
    }

    let results: Vec<Result<ControllerComparison, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|config| {
                let ics = &initial_conditions;
                scope.spawn(move || {
                    evaluate(config, ics, scenario, params, backend, options, settings)
                        .map_err(|e| annotate(config, e))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("comparison worker panicked"))
            .collect()
    });
    Ok(Comparison {
        initial_conditions,
        controllers: results.into_iter().collect::<Result<_, _>>()?,
    })
}

fn evaluate(
    config: &ControllerConfig,
    ics: &[InitialCondition],
    scenario: &Scenario,
    params: &MicrogridParams,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
    settings: &CompareSettings,
) -> Result<ControllerComparison, HarnessError> {
    let ts = params.sampling_time;
    let mut predicted = Vec::with_capacity(ics.len());
    let mut conventional = Vec::new();
    for ic in ics {
        let window = scenario
            .window(ic.k, config.horizon, ic.x.clone(), ic.delta.clone())
            .expect("initial conditions come from a run with full windows");
        let sol = solve_open_loop(config, &window, params, backend, options)?;
        predicted.push(sol.predicted_cost);
        if let Some(t) = sol.trajectory(Endpoint::Min) {
            let e: f64 = t
                .outcomes
                .iter()
                .map(|o| params.conventional().map(|i| ts * o.p[i]).sum::<f64>())
                .sum();
            conventional.push(e / config.horizon as f64);
        }
    }
    let closed_loop = if settings.closed_loop {
        Some(closed_loop_simulate(
            config,
            scenario,
            &settings.realization,
            params,
            backend,
            options,
            settings.max_steps,
        )?)
    } else {
        None
    };
    Ok(ControllerComparison {
        config: config.clone(),
        predicted,
        mean_predicted_conventional: (!conventional.is_empty())
            .then(|| conventional.iter().sum::<f64>() / conventional.len() as f64),
        closed_loop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::default_solve_options;
    use crate::milp::ReferenceBackend;

    #[test]
    fn zero_uncertainty_predictions_coincide() {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let rows = vec![vec![0.3, -0.8], vec![0.2, -0.6], vec![0.5, -0.9], vec![0.1, -0.7]];
        let s = Scenario {
            horizon: 2,
            w_min: rows.clone(),
            w_max: rows,
            x0: vec![2.0],
            delta0: vec![false],
        };
        let configs: Vec<_> = ControllerVariant::ALL
            .iter()
            .map(|v| ControllerConfig::new(*v, 2))
            .collect();
        let c = compare_controllers(
            &configs,
            &s,
            &p,
            &ReferenceBackend,
            &default_solve_options(),
            &CompareSettings {
                closed_loop: false,
                ..CompareSettings::default()
            },
        )
        .unwrap();
        assert_eq!(c.initial_conditions.len(), 2);
        let reference = &c.controllers[0].predicted;
        for ctl in &c.controllers {
            assert!(ctl.closed_loop.is_none());
            for (a, b) in ctl.predicted.iter().zip(reference) {
                assert!((a.unwrap() - b.unwrap()).abs() < 1e-6, "{}", ctl.config.variant);
            }
        }
    }

    #[test]
    fn mixed_horizons_rejected() {
        let p = MicrogridParams::case_study_reduced(1, 1.0);
        let rows = vec![vec![0.3, -0.8]; 4];
        let s = Scenario {
            horizon: 2,
            w_min: rows.clone(),
            w_max: rows,
            x0: vec![2.0],
            delta0: vec![false],
        };
        let configs = [
            ControllerConfig::new(ControllerVariant::Prescient, 1),
            ControllerConfig::new(ControllerVariant::Mm, 2),
        ];
        let r = compare_controllers(&configs, &s, &p, &ReferenceBackend, &default_solve_options(), &CompareSettings::default());
        assert!(matches!(r, Err(HarnessError::Input(_))));
    }
}

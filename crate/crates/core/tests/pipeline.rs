use satdroop::harness::{closed_loop_simulate, default_solve_options, gen_synthetic_scenario, RealizationRule};
use satdroop::milp::mps::{read_mps, write_mps};
use satdroop::milp::{solve_milp, BackendRegistry, MilpStatus, ReferenceBackend, REFERENCE_BACKEND};
use satdroop::mpc::{build_problem, solve_open_loop, ControllerConfig, ControllerVariant, Endpoint};
use satdroop::oracles::{grid_feasibility, grid_worst_cost, oracle_cost, oracle_rollout, GridSpec};
use satdroop::{MicrogridParams, ScenarioWindow};

fn params() -> MicrogridParams {
    MicrogridParams::case_study_reduced(1, 1.0)
}

fn window() -> ScenarioWindow {
    ScenarioWindow {
        w_min: vec![vec![0.3, -0.9], vec![0.1, -1.2]],
        w_max: vec![vec![0.45, -0.8], vec![0.25, -1.0]],
        x0: vec![1.5],
        delta0: vec![false],
    }
}

#[test]
fn solved_plans_replay_through_the_oracle() {
    let p = params();
    let w = window();
    for variant in ControllerVariant::ALL {
        let config = ControllerConfig::new(variant, 2);
        let sol = solve_open_loop(&config, &w, &p, &ReferenceBackend, &default_solve_options()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal, "{variant}");
        let plan = sol.plan.as_ref().unwrap();
        let plant = config.effective_params(&p).unwrap();
        for e in variant.endpoints() {
            let steps = oracle_rollout(&plant, plan, e.rows(&w), &w.x0).unwrap();
            let t = sol.trajectory(*e).unwrap();
            for (s, o) in steps.iter().zip(&t.outcomes) {
                assert!(s.feasible, "{variant} {e:?}");
                for (a, b) in s.p.iter().zip(&o.p) {
                    assert!((a - b).abs() < 1e-6, "{variant} {e:?}: {a} vs {b}");
                }
            }
            if *e == Endpoint::Min {
                let cost = oracle_cost(&plant, plan, &steps, &w.delta0);
                assert!((cost - sol.predicted_cost.unwrap()).abs() < 1e-6, "{variant}");
            }
        }
    }
}

#[test]
fn robust_plans_hold_across_the_box() {
    let p = params();
    let w = window();
    for variant in [ControllerVariant::SatMm, ControllerVariant::SatResDroopMm] {
        let config = ControllerConfig::new(variant, 2);
        let sol = solve_open_loop(&config, &w, &p, &ReferenceBackend, &default_solve_options()).unwrap();
        let plan = sol.plan.unwrap();
        let plant = config.effective_params(&p).unwrap();
        let grid = GridSpec::new(3).unwrap();
        let f = grid_feasibility(&plan, &w, &grid, &plant).unwrap();
        assert!(f.all_feasible, "{variant}: {:?}", f.first_violation);
        let (worst, _) = grid_worst_cost(&plan, &w, &grid, &plant).unwrap();
        assert!((worst - sol.predicted_cost.unwrap()).abs() < 1e-6, "{variant}");
    }
}

#[test]
fn mps_round_trip_keeps_the_optimum() {
    let p = params();
    let config = ControllerConfig::new(ControllerVariant::SatResDroopMm, 2);
    let inst = build_problem(&config, &window(), &p).unwrap();
    let direct = solve_milp(&inst, &default_solve_options()).unwrap();
    let back = read_mps(&write_mps(&inst, &[]).unwrap()).unwrap();
    let again = solve_milp(&back, &default_solve_options()).unwrap();
    assert_eq!(back.variables.len(), inst.variables.len());
    assert!((direct.objective.unwrap() - again.objective.unwrap()).abs() < 1e-6);
    let registry = BackendRegistry::new();
    let via = registry.solve(REFERENCE_BACKEND, &inst, &default_solve_options()).unwrap();
    assert_eq!(via.objective, direct.objective);
}

#[test]
fn closed_loop_costs_match_the_oracle() {
    let p = params();
    let s = gen_synthetic_scenario(8, 1, &p, 0.1).unwrap();
    let config = ControllerConfig::new(ControllerVariant::SatResDroopMm, 3);
    let rec = closed_loop_simulate(
        &config,
        &s,
        &RealizationRule::Min,
        &p,
        &ReferenceBackend,
        &default_solve_options(),
        Some(6),
    )
    .unwrap();
    assert!(rec.aborted.is_none());
    let plant = config.effective_params(&p).unwrap();
    let plan = satdroop::ControlPlan {
        u: rec.steps.iter().map(|st| st.u.clone()).collect(),
        delta: rec.steps.iter().map(|st| st.delta.clone()).collect(),
    };
    let realization: Vec<_> = rec.steps.iter().map(|st| st.w.clone()).collect();
    let steps = oracle_rollout(&plant, &plan, &realization, &s.x0).unwrap();
    let total = oracle_cost(&plant, &plan, &steps, &s.delta0);
    assert!((total / 6.0 - rec.metrics.per_sample_cost).abs() < 1e-9);
    for (o, st) in steps.iter().zip(&rec.steps) {
        assert!((o.x[0] - st.outcome.x[0]).abs() < 1e-9);
    }
}

use nalgebra::DMatrix;
use proptest::prelude::*;
use spegarch::inversion::{invert_panel, NewtonOptions};
use spegarch::likelihood::{fit_qmle, log_likelihood, FitOptions};
use spegarch::mc::{lattice_weights, run_bias_rmse, McConfig, ModelName, ModelSpec};
use spegarch::process::simulate;
use spegarch::{Execution, InitialConditions, ModelParams, Panel, PanelKind, WeightMatrix};

fn setup(rows: usize, cols: usize, t_len: usize, seed: u64) -> (WeightMatrix, WeightMatrix, spegarch::process::Simulation) {
    let (w1, w2) = lattice_weights(rows, cols).unwrap();
    let n = w1.n();
    let sim = simulate(&ModelParams::model_a(), &w1, &w2, t_len, 50, &InitialConditions::default_for(n), seed).unwrap();
    (w1, w2, sim)
}

#[test]
fn inversion_from_true_presample_is_exact() {
    let (w1, w2, sim) = setup(3, 3, 60, 5);
    let inv = invert_panel(&sim.y, &ModelParams::model_a(), &w1, &w2, &sim.presample, NewtonOptions::default()).unwrap();
    let err = (inv.eps.values() - sim.eps.values()).amax();
    assert!(err < 1e-8, "{err}");
    let lh_err = (inv.log_h - sim.h.values().map(f64::ln)).amax();
    assert!(lh_err < 1e-8, "{lh_err}");
}

#[test]
fn wrong_presample_is_forgotten() {
    let (w1, w2, sim) = setup(4, 4, 80, 6);
    let init = InitialConditions::constant(16, 1e-4);
    let inv = invert_panel(&sim.y, &ModelParams::model_a(), &w1, &w2, &init, NewtonOptions::default()).unwrap();
    let early = (inv.eps.at(0) - sim.eps.at(0)).amax();
    let late = (inv.eps.at(79) - sim.eps.at(79)).amax();
    assert!(late < 1e-8 && late < early, "early {early}, late {late}");
}

#[test]
fn likelihood_invariant_to_node_relabelling() {
    let (w1, w2, sim) = setup(3, 3, 40, 7);
    let p = ModelParams::model_a();
    let perm = [4, 0, 8, 2, 6, 1, 7, 3, 5];
    let y = sim.y.values();
    let yp = Panel::new(DMatrix::from_fn(9, 40, |i, t| y[(perm[i], t)]), PanelKind::Returns).unwrap();
    let init = sim.presample.clone();
    let y0 = &init.y0;
    let e0 = &init.eps0;
    let initp = InitialConditions::new(
        nalgebra::DVector::from_fn(9, |i, _| y0[perm[i]]),
        nalgebra::DVector::from_fn(9, |i, _| e0[perm[i]]),
    )
    .unwrap();
    let a = log_likelihood(&p, &sim.y, &w1, &w2, &init, 5).unwrap();
    let b = log_likelihood(&p, &yp, &w1.permuted(&perm), &w2.permuted(&perm), &initp, 5).unwrap();
    assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
}

#[test]
fn truth_beats_distant_parameters_on_a_long_panel() {
    let (w1, w2, sim) = setup(3, 3, 400, 8);
    let init = sim.presample.clone();
    let truth = log_likelihood(&ModelParams::model_a(), &sim.y, &w1, &w2, &init, 5).unwrap();
    for p in [
        ModelParams::new(0.5, 0.0, 0.35, 0.2, 0.3, 0.4),
        ModelParams::new(0.5, 0.5, 0.35, 0.2, 0.3, -0.4),
        ModelParams::new(1.2, 0.5, 0.35, 0.2, 0.3, 0.4),
        ModelParams::new(0.5, 0.5, 0.35, -0.3, 0.6, 0.4),
    ] {
        assert!(log_likelihood(&p, &sim.y, &w1, &w2, &init, 5).unwrap() < truth);
    }
}

#[test]
fn fit_does_not_lose_to_the_truth() {
    let (w1, w2, sim) = setup(3, 3, 120, 9);
    let init = InitialConditions::default_for(9);
    let opts = FitOptions { n_starts: 10, n_refine: 2, ..FitOptions::default() };
    let fit = fit_qmle(&sim.y, &w1, &w2, &init, &opts).unwrap();
    let truth = log_likelihood(&ModelParams::model_a(), &sim.y, &w1, &w2, &init, opts.burn).unwrap();
    assert!(fit.loglik >= truth - 1e-6, "{} < {truth}", fit.loglik);
    assert_eq!(fit.param_names.len(), 6);
    assert!(fit.aic < fit.bic);
}

#[test]
fn monte_carlo_is_deterministic_across_execution_modes() {
    let mut cfg = McConfig::new(ModelSpec::Named(ModelName::B), (2, 2), 30, 3, 17);
    cfg.fit_options.n_starts = 4;
    cfg.fit_options.n_refine = 1;
    cfg.fit_options.std_errors = false;
    cfg.execution = Execution::Serial;
    let a = run_bias_rmse(&cfg).unwrap();
    cfg.execution = Execution::Parallel;
    let b = run_bias_rmse(&cfg).unwrap();
    assert_eq!(a.table, b.table);
    let est = |o: &spegarch::mc::McOutcome| o.replications.iter().map(|r| r.estimates.clone()).collect::<Vec<_>>();
    assert_eq!(est(&a), est(&b));
}

#[test]
fn panel_csv_round_trip_is_bit_exact() {
    let (_, _, sim) = setup(2, 2, 25, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("y.csv");
    sim.y.to_csv_path(&path).unwrap();
    let back = Panel::from_csv_path(&path, PanelKind::Returns).unwrap();
    assert_eq!(back.values(), sim.y.values());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_a_pure_function_of_the_seed(seed in any::<u64>()) {
        let (w1, w2) = lattice_weights(2, 2).unwrap();
        let init = InitialConditions::default_for(4);
        let a = simulate(&ModelParams::model_b(), &w1, &w2, 15, 10, &init, seed).unwrap();
        let b = simulate(&ModelParams::model_b(), &w1, &w2, 15, 10, &init, seed).unwrap();
        prop_assert_eq!(a.y.values(), b.y.values());
        prop_assert!(a.h.values().iter().all(|v| *v > 0.0 && v.is_finite()));
    }

    #[test]
    fn inversion_recovers_innovations_for_random_stationary_params(
        rho0 in 0.0f64..0.9, rho1 in -0.5f64..0.5, theta in -0.5f64..0.5,
        l0 in -0.4f64..0.4, l1 in -0.5f64..0.5, seed in 0u64..1000,
    ) {
        prop_assume!(l0.abs() + l1.abs() < 0.9);
        let p = ModelParams::new(0.2, rho0, rho1, l0, l1, theta);
        let (w1, w2) = lattice_weights(2, 3).unwrap();
        let sim = simulate(&p, &w1, &w2, 20, 20, &InitialConditions::default_for(6), seed).unwrap();
        let inv = invert_panel(&sim.y, &p, &w1, &w2, &sim.presample, NewtonOptions::default()).unwrap();
        prop_assert!((inv.eps.values() - sim.eps.values()).amax() < 1e-7);
    }
}

//! Acceptance suite. Runs every criterion at its stated size and tolerance and
//! prints one PASS/FAIL line per criterion. Set `ACCEPTANCE_STRICT` to exit
//! non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use spegarch::diagnostics::{ljung_box, morans_i};
use spegarch::likelihood::{log_likelihood, observation_jacobian};
use spegarch::mc::{
    lattice_weights, run_bias_rmse, run_invertibility_study, run_maxd, McConfig, ModelName, ModelSpec, PerturbationGrid,
};
use spegarch::moments::{
    closed_moments_theta_only, general_moments_quadrature, nu_moments, MomentOrder, DEFAULT_QUAD_NODES, LOG_CHI2_MEAN,
    LOG_CHI2_VAR,
};
use spegarch::networks::{standardized_grid, Contiguity};
use spegarch::process::{g_scalar, simulate, Dynamics, NORMAL_ABS_MEAN};
use spegarch::rng::{standard_normal, stream_rng};
use spegarch::{Execution, InitialConditions, ModelParams, Panel, PanelKind, WeightMatrix};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Mean of `xs` with a batch-means standard error (robust to short-range dependence).
fn mean_and_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let size = xs.len() / batches;
    let bm: Vec<f64> = (0..batches).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let bmean = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

fn criterion_1() -> Outcome {
    let p = ModelParams::invertibility_reference();
    let (maxd, failures) = run_maxd(&p, (5, 5), 50, 50, 20_240_601, 50, Execution::Parallel).unwrap();
    let worst = maxd.iter().enumerate().skip(5).map(|(t, v)| (t + 1, *v)).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let above: Vec<String> = maxd.iter().enumerate().skip(5).filter(|(_, v)| **v >= 1e-6).map(|(t, v)| format!("t={}:{v:.2e}", t + 1)).collect();
    outcome(
        failures == 0 && above.is_empty(),
        format!(
            "mean MaxD over 50 reps, worst t>5 is t={} ({:.3e}); at or above 1e-6: [{}]; failures {failures}",
            worst.0,
            worst.1,
            above.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let p = ModelParams::invertibility_reference();
    let study =
        run_invertibility_study(&p, (5, 5), 50, &PerturbationGrid::default(), 50, 20_240_602, 50, Execution::Parallel).unwrap();
    let bad: Vec<String> = study
        .slices
        .iter()
        .filter(|s| !s.centre_is_minimum())
        .map(|s| format!("{}x{} argmin {:?}", s.first, s.second, s.argmin()))
        .collect();
    outcome(
        study.slices.len() == 15 && bad.is_empty() && study.failures == 0,
        format!("{} slices, centre minimal in {}; failures {}; {}", study.slices.len(), 15 - bad.len(), study.failures, bad.join("; ")),
    )
}

/// Row order of the reference table.
const TABLE_ORDER: [&str; 6] = ["rho0", "rho1", "theta", "alpha", "lambda1", "lambda0"];

fn criterion_3() -> Outcome {
    let bias_ref = [-0.011, -0.010, 0.031, 0.045, -0.037, -0.004];
    let rmse_ref = [0.172, 0.089, 0.175, 0.238, 0.169, 0.194];
    let cfg = McConfig::new(ModelSpec::Named(ModelName::A), (4, 4), 50, 100, 20_240_603);
    let out = run_bias_rmse(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, name) in TABLE_ORDER.iter().enumerate() {
        let row = out.table.iter().find(|r| r.parameter == *name).unwrap();
        let ok_bias = (row.bias - bias_ref[k]).abs() <= 0.05;
        let ok_rmse = (row.rmse - rmse_ref[k]).abs() <= 0.3 * rmse_ref[k];
        pass &= ok_bias && ok_rmse;
        parts.push(format!(
            "{name} bias {:+.3} ({}) rmse {:.3} ({})",
            row.bias,
            if ok_bias { "ok" } else { "out" },
            row.rmse,
            if ok_rmse { "ok" } else { "out" }
        ));
    }
    outcome(
        pass,
        format!("{}; failed reps {}, {:.0}s", parts.join(", "), out.failures, out.wall_seconds),
    )
}

fn criterion_4() -> Outcome {
    let rmse_rho1 = |t_len: usize| {
        let cfg = McConfig::new(ModelSpec::Named(ModelName::B), (4, 4), t_len, 100, 20_240_604);
        let out = run_bias_rmse(&cfg).unwrap();
        (out.table.iter().find(|r| r.parameter == "rho1").unwrap().rmse, out.wall_seconds)
    };
    let (short, s1) = rmse_rho1(50);
    let (long, s2) = rmse_rho1(150);
    outcome(long < short, format!("Model B RMSE(rho1): T=50 {short:.4}, T=150 {long:.4} ({:.0}s)", s1 + s2))
}

struct Check {
    worst_z: f64,
    count: usize,
    failed: usize,
}

impl Check {
    fn new() -> Self {
        Check { worst_z: 0.0, count: 0, failed: 0 }
    }

    fn add(&mut self, estimate: f64, se: f64, theory: f64) {
        let z = (estimate - theory).abs() / se;
        self.worst_z = self.worst_z.max(z);
        self.count += 1;
        if z.is_nan() || z >= 3.0 {
            self.failed += 1;
        }
    }
}

fn criterion_5() -> Outcome {
    let t_len = 100_000;
    let batches = 200;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut tested = 0;
    for (rows, cols) in [(2, 2), (3, 3)] {
        let (w1, w2) = lattice_weights(rows, cols).unwrap();
        let n = w1.n();
        for (label, p) in [("A", ModelParams::model_a()), ("B", ModelParams::model_b())] {
            let theory = nu_moments(&p, &w1, &w2).unwrap();
            let sim = simulate(&p, &w1, &w2, t_len + 1, 1000, &InitialConditions::default_for(n), 20_240_605 + n as u64).unwrap();
            let s = Dynamics::new(&p, &w1, &w2).unwrap().s;
            let ly = sim.y.values().map(|v| (v * v).ln());
            let nu = ly.columns(1, t_len) - (&s * ly.columns(0, t_len)) * p.lambda1;
            let mean = DVector::from_fn(n, |i, _| nu.row(i).mean());
            let c = DMatrix::from_fn(n, t_len, |i, t| nu[(i, t)] - mean[i]);

            let mut moments = Check::new();
            let mut lag2 = Check::new();
            for i in 0..n {
                let (m, se) = mean_and_se(&nu.row(i).iter().copied().collect::<Vec<_>>(), batches);
                moments.add(m, se, theory.mean[i]);
                for j in 0..n {
                    if j >= i {
                        let prod: Vec<f64> = (0..t_len).map(|t| c[(i, t)] * c[(j, t)]).collect();
                        let (m, se) = mean_and_se(&prod, batches);
                        moments.add(m, se, theory.cov0[(i, j)]);
                    }
                    let prod: Vec<f64> = (1..t_len).map(|t| c[(i, t)] * c[(j, t - 1)]).collect();
                    let (m, se) = mean_and_se(&prod, batches);
                    moments.add(m, se, theory.cov1[(i, j)]);
                    let prod: Vec<f64> = (2..t_len).map(|t| c[(i, t)] * c[(j, t - 2)]).collect();
                    let (m, se) = mean_and_se(&prod, batches);
                    lag2.add(m, se, 0.0);
                }
            }
            pass &= moments.failed == 0 && lag2.failed == 0;
            lines.push(format!(
                "n={n} model {label}: {}/{} moment entries within 3 SE (max |z| {:.2}), {}/{} lag-2 entries (max |z| {:.2})",
                moments.count - moments.failed,
                moments.count,
                moments.worst_z,
                lag2.count - lag2.failed,
                lag2.count,
                lag2.worst_z
            ));
            tested += moments.count + lag2.count;
        }
    }
    // Under a correct theory each entry still exceeds 3 SE with probability 0.0027.
    lines.push(format!("{tested} entries, {:.2} exceedances expected by chance", tested as f64 * 0.0027));
    outcome(pass, lines.join("; "))
}

fn criterion_6() -> Outcome {
    let (w1, w2) = lattice_weights(2, 2).unwrap();
    let p = ModelParams::model_a().with_xi(0.0);
    let t_len = 400_000;
    let sim = simulate(&p, &w1, &w2, t_len, 1000, &InitialConditions::default_for(4), 20_240_606).unwrap();
    let y = sim.y.values();
    let mut check = Check::new();
    let mut quad_gap: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let cm = closed_moments_theta_only(&p, &w1, &w2, i, j, 1e-14).unwrap();
            if j == i {
                let (m, se) = mean_and_se(&y.row(i).iter().copied().collect::<Vec<_>>(), 200);
                check.add(m, se, cm.mean_i);
                let (m, se) = mean_and_se(&y.row(i).iter().map(|v| v * v).collect::<Vec<_>>(), 200);
                check.add(m, se, cm.second_i);
                let q1 = general_moments_quadrature(&p, &w1, &w2, i, MomentOrder::First, 1e-14, DEFAULT_QUAD_NODES).unwrap();
                let q2 = general_moments_quadrature(&p, &w1, &w2, i, MomentOrder::Second, 1e-14, DEFAULT_QUAD_NODES).unwrap();
                quad_gap = quad_gap.max((q1.value - cm.mean_i).abs()).max((q2.value - cm.second_i).abs());
            } else if j > i {
                let prod: Vec<f64> = (0..t_len).map(|t| y[(i, t)] * y[(j, t)]).collect();
                let (m, se) = mean_and_se(&prod, 200);
                check.add(m, se, cm.cross_ij);
                let q = general_moments_quadrature(&p, &w1, &w2, i, MomentOrder::Cross(j), 1e-14, DEFAULT_QUAD_NODES).unwrap();
                quad_gap = quad_gap.max((q.value - cm.cross_ij).abs());
            }
        }
    }
    outcome(
        check.failed == 0 && quad_gap < 1e-8,
        format!(
            "{}/{} moments within 3 SE of simulation (max |z| {:.2}); max |closed - quadrature| {:.2e}",
            check.count - check.failed,
            check.count,
            check.worst_z,
            quad_gap
        ),
    )
}

fn scalar_egarch_loglik(y: &[f64], p: &ModelParams, y0: f64, eps0: f64, burn: usize) -> f64 {
    let mut log_h = (y0 * y0 / (eps0 * eps0)).ln();
    let mut eps_prev = eps0;
    let mut total = 0.0;
    for (t, &yt) in y.iter().enumerate() {
        log_h = p.alpha + p.rho1 * g_scalar(eps_prev, p.theta, p.xi, NORMAL_ABS_MEAN) + p.lambda1 * log_h;
        let e = yt * (-0.5 * log_h).exp();
        if t >= burn {
            total += -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * e * e - 0.5 * log_h;
        }
        eps_prev = e;
    }
    total
}

fn criterion_7() -> Outcome {
    let w = WeightMatrix::new(DMatrix::zeros(1, 1), false).unwrap();
    let mut rng = stream_rng(20_240_607, 4);
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        use rand::Rng;
        let p = ModelParams::new(
            rng.random_range(-0.5..0.5),
            0.0,
            rng.random_range(-0.3..0.3),
            0.0,
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.9..0.9),
        );
        let t_len = 30 + draw * 5;
        let sim = simulate(&p, &w, &w, t_len, 50, &InitialConditions::default_for(1), 700 + draw as u64).unwrap();
        let y: Vec<f64> = sim.y.values().iter().copied().collect();
        let (y0, eps0) = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let init = InitialConditions::new(DVector::from_element(1, y0), DVector::from_element(1, eps0)).unwrap();
        let panel = Panel::new(DMatrix::from_row_slice(1, t_len, &y), PanelKind::Returns).unwrap();
        let burn = draw % 6;
        let ours = log_likelihood(&p, &panel, &w, &w, &init, burn).unwrap();
        let reference = scalar_egarch_loglik(&y, &p, y0, eps0, burn);
        worst = worst.max((ours - reference).abs());
    }
    outcome(worst < 1e-10, format!("max |difference| over 20 draws {worst:.2e}"))
}

fn criterion_8() -> Outcome {
    use rand::Rng;
    let mut rng = stream_rng(20_240_608, 4);
    let mut worst: f64 = 0.0;
    for k in 0..5 {
        let (rows, cols) = [(2, 2), (3, 3), (2, 3), (4, 4), (3, 3)][k];
        let (w1, w2) = lattice_weights(rows, cols).unwrap();
        let n = w1.n();
        let p = ModelParams::new(
            rng.random_range(0.0..1.0),
            rng.random_range(-0.6..0.8),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.9..0.9),
        );
        let t = rng.random_range(1..30);
        let sim = simulate(&p, &w1, &w2, 30, 20, &InitialConditions::default_for(n), k as u64).unwrap();
        let d = Dynamics::new(&p, &w1, &w2).unwrap();
        let eps_t = sim.eps.at(t);
        let eps_prev = sim.eps.at(t - 1);
        let log_h_prev = sim.h.at(t - 1).map(f64::ln);
        let y_of = |e: &DVector<f64>| {
            let lh = d.log_h_step(e, &eps_prev, &log_h_prev);
            DVector::from_fn(n, |i, _| (0.5 * lh[i]).exp() * e[i])
        };
        let log_h_t = d.log_h_step(&eps_t, &eps_prev, &log_h_prev);
        let closed = observation_jacobian(&d, &eps_t, &log_h_t).determinant();
        let mut fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * eps_t[j].abs().max(1e-3);
            let mut up = eps_t.clone();
            let mut dn = eps_t.clone();
            up[j] += h;
            dn[j] -= h;
            fd.set_column(j, &((y_of(&up) - y_of(&dn)) / (2.0 * h)));
        }
        let numeric = fd.determinant();
        worst = worst.max(((closed - numeric) / numeric).abs());
    }
    outcome(worst < 1e-4, format!("max relative error of det J_t over 5 points {worst:.2e}"))
}

fn criterion_9() -> Outcome {
    let reps = 1000;
    let lb_rejections = Execution::Parallel
        .map(reps, |r| {
            let mut rng = stream_rng(20_240_609 + r as u64, 4);
            let x: Vec<f64> = (0..10_000).map(|_| standard_normal(&mut rng)).collect();
            ljung_box(&x, 10).unwrap().p_value < 0.05
        })
        .into_iter()
        .filter(|&b| b)
        .count();
    let w = standardized_grid(10, 10, Contiguity::Rook).unwrap();
    let moran_rejections = Execution::Parallel
        .map(reps, |r| {
            let mut rng = stream_rng(20_240_610 + r as u64, 4);
            let x: Vec<f64> = (0..100).map(|_| standard_normal(&mut rng)).collect();
            morans_i(&x, &w).unwrap().p_value < 0.05
        })
        .into_iter()
        .filter(|&b| b)
        .count();
    let lb = lb_rejections as f64 / reps as f64;
    let mo = moran_rejections as f64 / reps as f64;
    outcome(
        (lb - 0.05).abs() <= 0.02 && (mo - 0.05).abs() <= 0.02,
        format!("5%-level rejection rates over {reps} i.i.d. replications: Ljung-Box {lb:.3}, Moran's I {mo:.3}"),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = stream_rng(20_240_611, 4);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng).powi(2).ln()).collect();
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let se_mean = (var / nf).sqrt();
    let se_var = ((m4 - var * var) / nf).sqrt();
    let z_mean = (mean - LOG_CHI2_MEAN).abs() / se_mean;
    let z_var = (var - LOG_CHI2_VAR).abs() / se_var;
    let constants_ok = (LOG_CHI2_MEAN + 1.27036).abs() < 5e-6 && (LOG_CHI2_VAR - 4.9348).abs() < 5e-5;
    outcome(
        constants_ok && z_mean < 3.0 && z_var < 3.0,
        format!("mean {mean:.5} vs {LOG_CHI2_MEAN:.5} (z {z_mean:.2}), variance {var:.4} vs {LOG_CHI2_VAR:.4} (z {z_var:.2})"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("round-trip inversion MaxD", criterion_1),
        ("SSD minimised at the truth", criterion_2),
        ("Model A bias/RMSE, n=16 T=50", criterion_3),
        ("Model B RMSE(rho1) falls with T", criterion_4),
        ("nu moments vs simulation", criterion_5),
        ("xi=0 closed-form moments", criterion_6),
        ("univariate likelihood reduction", criterion_7),
        ("Jacobian determinant", criterion_8),
        ("diagnostics size", criterion_9),
        ("log chi-square constants", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let started = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {verdict} [{name}] {} ({:.1}s)", k + 1, o.detail, started.elapsed().as_secs_f64());
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: {failed} criterion/criteria failed");
    // Failures are reported, not fatal, unless strict mode is requested.
    if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

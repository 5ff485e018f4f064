//! Monte Carlo harness: estimator bias/RMSE and inversion accuracy studies.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inversion::{Inverter, NewtonOptions, DEFAULT_INVERSION_BURN};
use crate::likelihood::{fit_qmle, FitOptions};
use crate::networks::{standardized_grid, Contiguity, WeightMatrix};
use crate::params::{InitialConditions, ModelParams};
use crate::process::{simulate, DEFAULT_BURN_IN};
use crate::rng::replication_seed;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelName {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(ModelName),
    Explicit(ModelParams),
}

impl ModelSpec {
    pub fn params(&self) -> ModelParams {
        match self {
            ModelSpec::Named(ModelName::A) => ModelParams::model_a(),
            ModelSpec::Named(ModelName::B) => ModelParams::model_b(),
            ModelSpec::Explicit(p) => *p,
        }
    }
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub model: ModelSpec,
    /// `(rows, cols)` of the lattice; `W1` is Queen and `W2` Rook contiguity.
    pub grid: (usize, usize),
    pub t_len: usize,
    pub replications: usize,
    pub seed: u64,
    /// Simulation burn-in.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub fit_options: FitOptions,
    #[serde(default)]
    pub execution: Execution,
}

impl McConfig {
    pub fn new(model: ModelSpec, grid: (usize, usize), t_len: usize, replications: usize, seed: u64) -> Self {
        McConfig {
            model,
            grid,
            t_len,
            replications,
            seed,
            burn_in: DEFAULT_BURN_IN,
            fit_options: FitOptions::default(),
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Invalid("replications must be at least 1".into()));
        }
        if self.t_len <= self.fit_options.burn {
            return Err(Error::Invalid("t_len must exceed the likelihood burn-in".into()));
        }
        Ok(())
    }
}

/// Queen `W1` and Rook `W2`, both row-standardized.
pub fn lattice_weights(rows: usize, cols: usize) -> Result<(WeightMatrix, WeightMatrix)> {
    Ok((standardized_grid(rows, cols, Contiguity::Queen)?, standardized_grid(rows, cols, Contiguity::Rook)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub replication: usize,
    pub seed: u64,
    pub estimates: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
    pub seconds: f64,
}

impl Replication {
    pub fn is_failure(&self) -> bool {
        self.estimates.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub parameter: String,
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutcome {
    pub table: Vec<BiasRow>,
    pub replications: Vec<Replication>,
    pub failures: usize,
    pub non_converged: usize,
    pub wall_seconds: f64,
}

/// Bias and RMSE per parameter over the rows of `estimates`.
pub fn bias_rmse(names: &[&str], truth: &[f64], estimates: &[Vec<f64>]) -> Vec<BiasRow> {
    let m = estimates.len() as f64;
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let bias = estimates.iter().map(|e| e[k] - truth[k]).sum::<f64>() / m;
            let mse = estimates.iter().map(|e| (e[k] - truth[k]).powi(2)).sum::<f64>() / m;
            BiasRow { parameter: name.to_string(), truth: truth[k], bias, rmse: mse.sqrt() }
        })
        .collect()
}

/// Simulate-then-fit study. Replication `r` uses seed `seed ^ r` for both the
/// simulated panel and the optimizer starts.
pub fn run_bias_rmse(cfg: &McConfig) -> Result<McOutcome> {
    cfg.validate()?;
    let truth = cfg.model.params();
    let (w1, w2) = lattice_weights(cfg.grid.0, cfg.grid.1)?;
    let n = w1.n();
    let init = InitialConditions::default_for(n);
    let started = Instant::now();
    // Parallelism lives at the replication level; each fit runs serially.
    let inner = Execution::Serial;
    let replications = cfg.execution.map(cfg.replications, |r| {
        let seed = replication_seed(cfg.seed, r as u64);
        let t0 = Instant::now();
        let fit = simulate(&truth, &w1, &w2, cfg.t_len, cfg.burn_in, &init, seed).and_then(|sim| {
            let opts = FitOptions { seed, execution: inner, std_errors: false, ..cfg.fit_options };
            fit_qmle(&sim.y, &w1, &w2, &init, &opts)
        });
        let seconds = t0.elapsed().as_secs_f64();
        match fit {
            Ok(res) => Replication {
                replication: r,
                seed,
                estimates: Some(res.params.free_vector()),
                loglik: Some(res.loglik),
                converged: res.converged,
                error: None,
                seconds,
            },
            Err(e) => Replication { replication: r, seed, estimates: None, loglik: None, converged: false, error: Some(e.to_string()), seconds },
        }
    });
    let failures = replications.iter().filter(|r| r.is_failure()).count();
    if failures as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
        return Err(Error::Numerical(format!(
            "{failures} of {} replications failed, above the {:.0}% cap",
            cfg.replications,
            MAX_FAILURE_SHARE * 100.0
        )));
    }
    let estimates: Vec<Vec<f64>> = replications.iter().filter_map(|r| r.estimates.clone()).collect();
    let names = ModelParams::free_names(cfg.fit_options.two_theta);
    let mut truth_vec = truth.free_vector();
    if cfg.fit_options.two_theta && !truth.is_two_theta() {
        truth_vec.push(truth.theta);
    }
    let table = bias_rmse(&names, &truth_vec, &estimates);
    let non_converged = replications.iter().filter(|r| !r.is_failure() && !r.converged).count();
    Ok(McOutcome { table, replications, failures, non_converged, wall_seconds: started.elapsed().as_secs_f64() })
}

pub fn write_table_csv<W: Write>(rows: &[BiasRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "truth", "bias", "rmse"])?;
    for r in rows {
        w.write_record([r.parameter.clone(), r.truth.to_string(), r.bias.to_string(), r.rmse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replications_csv<W: Write>(reps: &[Replication], names: &[&str], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["replication".to_string(), "seed".into(), "converged".into(), "loglik".into(), "seconds".into()];
    header.extend(names.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    for r in reps {
        let mut row = vec![
            r.replication.to_string(),
            r.seed.to_string(),
            r.converged.to_string(),
            r.loglik.map_or(String::new(), |v| v.to_string()),
            r.seconds.to_string(),
        ];
        match &r.estimates {
            Some(e) => row.extend(e.iter().map(|v| v.to_string())),
            None => row.extend(names.iter().map(|_| String::new())),
        }
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Symmetric perturbation grid: parameter `k` takes `truth_k + j * steps[k]`
/// for `j = -(points/2) ..= points/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGrid {
    /// One step per free parameter, in `(alpha, rho0, rho1, lambda0, lambda1, theta)` order.
    pub steps: [f64; 6],
    /// Odd number of points per axis.
    pub points: usize,
}

impl Default for PerturbationGrid {
    fn default() -> Self {
        PerturbationGrid { steps: [0.1, 0.05, 0.05, 0.05, 0.05, 0.05], points: 5 }
    }
}

impl PerturbationGrid {
    pub fn zero(points: usize) -> Self {
        PerturbationGrid { steps: [0.0; 6], points }
    }

    fn offsets(&self) -> Vec<f64> {
        let half = (self.points / 2) as f64;
        (0..self.points).map(|j| j as f64 - half).collect()
    }
}

/// Mean SSD over one parameter pair, others held at the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdSlice {
    pub first: String,
    pub second: String,
    /// Rows index the first parameter, columns the second.
    pub values: DMatrix<f64>,
}

impl SsdSlice {
    /// `(row, col)` of the smallest mean SSD.
    pub fn argmin(&self) -> (usize, usize) {
        let (mut best, mut at) = (f64::INFINITY, (0, 0));
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                if self.values[(i, j)] < best {
                    best = self.values[(i, j)];
                    at = (i, j);
                }
            }
        }
        at
    }

    pub fn centre_is_minimum(&self) -> bool {
        let c = self.values.nrows() / 2;
        let centre = self.values[(c, c)];
        self.values.iter().all(|&v| centre <= v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertibilityStudy {
    /// Mean over replications of `max_i (eps_tilde - eps)^2`, per time point.
    pub maxd: Vec<f64>,
    pub slices: Vec<SsdSlice>,
    pub failures: usize,
}

/// Mean over replications of `max_i (eps_tilde_t - eps_t)^2` with the
/// inversion run at the true parameters; also returns the failure count.
pub fn run_maxd(
    params: &ModelParams,
    grid: (usize, usize),
    t_len: usize,
    replications: usize,
    seed: u64,
    burn_in: usize,
    exec: Execution,
) -> Result<(Vec<f64>, usize)> {
    let s = run_invertibility_study(params, grid, t_len, &PerturbationGrid::zero(1), replications, seed, burn_in, exec)?;
    Ok((s.maxd, s.failures))
}

/// Inversion accuracy at the truth (MaxD per time point) and SSD over the
/// 15 two-parameter slices of `perturbation`.
#[allow(clippy::too_many_arguments)]
pub fn run_invertibility_study(
    params: &ModelParams,
    grid: (usize, usize),
    t_len: usize,
    perturbation: &PerturbationGrid,
    replications: usize,
    seed: u64,
    burn_in: usize,
    exec: Execution,
) -> Result<InvertibilityStudy> {
    if replications == 0 || perturbation.points.is_multiple_of(2) {
        return Err(Error::Invalid("replications must be positive and the grid size odd".into()));
    }
    if t_len <= DEFAULT_INVERSION_BURN {
        return Err(Error::Invalid("t_len must exceed the inversion burn-in".into()));
    }
    let (w1, w2) = lattice_weights(grid.0, grid.1)?;
    let n = w1.n();
    let init = InitialConditions::default_for(n);
    let names = ModelParams::free_names(false);
    let truth = params.free_vector();
    let offsets = perturbation.offsets();
    let pts = perturbation.points;
    let pairs: Vec<(usize, usize)> = (0..6).flat_map(|a| (a + 1..6).map(move |b| (a, b))).collect();

    let per_rep = exec.map(replications, |r| -> Option<(Vec<f64>, Vec<DMatrix<f64>>)> {
        let seed_r = replication_seed(seed, r as u64);
        let sim = simulate(params, &w1, &w2, t_len, burn_in, &init, seed_r).ok()?;
        let errors = |p: &ModelParams| -> Option<DMatrix<f64>> {
            let inv = Inverter::new(p, &w1, &w2, NewtonOptions::default()).ok()?;
            let out = inv.invert_panel(&sim.y, &init).ok()?;
            Some(out.eps.values() - sim.eps.values())
        };
        let ssd = |p: &ModelParams| -> f64 {
            match errors(p) {
                Some(d) => d.columns(DEFAULT_INVERSION_BURN, t_len - DEFAULT_INVERSION_BURN).norm_squared(),
                None => f64::INFINITY,
            }
        };
        let at_truth = errors(params)?;
        let maxd: Vec<f64> = (0..t_len).map(|t| at_truth.column(t).amax().powi(2)).collect();
        let surfaces = pairs
            .iter()
            .map(|&(a, b)| {
                DMatrix::from_fn(pts, pts, |i, j| {
                    let mut v = truth.clone();
                    v[a] += offsets[i] * perturbation.steps[a];
                    v[b] += offsets[j] * perturbation.steps[b];
                    let mut p = ModelParams::from_free_vector(&v);
                    p.xi = params.xi;
                    ssd(&p)
                })
            })
            .collect();
        Some((maxd, surfaces))
    });

    let ok: Vec<_> = per_rep.into_iter().flatten().collect();
    let failures = replications - ok.len();
    if ok.is_empty() {
        return Err(Error::Numerical("every replication failed".into()));
    }
    let m = ok.len() as f64;
    let mut maxd = vec![0.0; t_len];
    let mut sums: Vec<DMatrix<f64>> = pairs.iter().map(|_| DMatrix::zeros(pts, pts)).collect();
    for (md, surfaces) in &ok {
        for (acc, v) in maxd.iter_mut().zip(md) {
            *acc += v / m;
        }
        for (acc, s) in sums.iter_mut().zip(surfaces) {
            *acc += s / m;
        }
    }
    let slices = pairs
        .iter()
        .zip(sums)
        .map(|(&(a, b), values)| SsdSlice { first: names[a].to_string(), second: names[b].to_string(), values })
        .collect();
    Ok(InvertibilityStudy { maxd, slices, failures })
}

//! One function per subcommand. Each takes the effective config (file plus
//! overrides) and returns a JSON summary for stdout.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use spegarch::diagnostics::{panel_diagnostics, DiagnosticsReport, DEFAULT_MAX_LAG};
use spegarch::inversion::{Inverter, NewtonOptions, StepDiagnostics};
use spegarch::likelihood::{fit_qmle, EstimationResult, FitOptions};
use spegarch::mc::{run_bias_rmse, write_replications_csv, write_table_csv, McConfig, ModelSpec};
use spegarch::meanmodel::fit_sdpd;
use spegarch::moments::{
    closed_moments_theta_only, general_moments_quadrature, nu_moments, MomentOrder, DEFAULT_QUAD_NODES,
};
use spegarch::params::ModelParams;
use spegarch::process::{check_stationarity, simulate, DEFAULT_BURN_IN};
use spegarch::{Panel, PanelKind, WeightMatrix};

use crate::config::{config_hash, create_dir, decode, out_dir, require_file, sha256_file, write_json};
use crate::error::{CliError, CliResult};
use crate::spec::{weight_pair, InitSpec, NetworkDef, WeightSource};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_alpha() -> f64 {
    0.05
}

fn default_max_lag() -> usize {
    DEFAULT_MAX_LAG
}

fn default_trunc_tol() -> f64 {
    1e-14
}

fn default_quad_nodes() -> usize {
    DEFAULT_QUAD_NODES
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("{}: {e}", path.display()))
}

pub(crate) fn writer(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_at(path))?))
}

pub(crate) fn write_panel(panel: &Panel, path: &Path) -> CliResult<()> {
    panel.write_csv(writer(path)?).map_err(CliError::from)
}

pub(crate) fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_at(path))?;
    Ok(())
}

pub(crate) fn read_panel(path: &Path, kind: PanelKind, what: &str) -> CliResult<Panel> {
    require_file(path, what)?;
    Ok(Panel::from_csv_path(path, kind)?)
}

/// `{file name: sha256}` for files in `dir`.
pub(crate) fn output_hashes(dir: &Path, files: &[String]) -> CliResult<Map<String, Value>> {
    files.iter().map(|f| Ok((f.clone(), Value::String(sha256_file(&dir.join(f))?)))).collect()
}

fn manifest(command: &str, cfg: &Value, extra: Value, dir: &Path, files: &[String]) -> CliResult<Value> {
    let mut m = json!({
        "command": command,
        "version": VERSION,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "outputs": output_hashes(dir, files)?,
    });
    if let (Some(m), Value::Object(extra)) = (m.as_object_mut(), extra) {
        m.extend(extra);
    }
    Ok(m)
}

fn names(files: &[&str]) -> Vec<String> {
    files.iter().map(|s| s.to_string()).collect()
}

// simulate

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    model: ModelSpec,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    w1: Option<WeightSource>,
    #[serde(default)]
    w2: Option<WeightSource>,
    t_len: usize,
    #[serde(default = "default_burn_in")]
    burn_in: usize,
    seed: u64,
    #[serde(default)]
    init: Option<InitSpec>,
    #[allow(dead_code)]
    out_dir: PathBuf,
}

pub fn run_simulate(v: &Value) -> CliResult<Value> {
    let cfg: SimulateConfig = decode(v)?;
    let dir = out_dir(v)?;
    let p = cfg.model.params();
    let (w1, w2) = weight_pair(cfg.grid, cfg.w1.as_ref(), cfg.w2.as_ref())?;
    let init = InitSpec::build(cfg.init.as_ref(), w1.n())?;
    let report = check_stationarity(&p, &w2)?;
    let sim = simulate(&p, &w1, &w2, cfg.t_len, cfg.burn_in, &init, cfg.seed)?;
    create_dir(&dir)?;
    write_panel(&sim.y, &dir.join("y.csv"))?;
    write_panel(&sim.eps, &dir.join("eps.csv"))?;
    write_panel(&sim.h, &dir.join("h.csv"))?;
    write_json(&dir.join("presample.json"), &InitSpec::from_conditions(&sim.presample))?;
    let files = names(&["y.csv", "eps.csv", "h.csv", "presample.json"]);
    let m = manifest(
        "simulate",
        v,
        json!({"params": p, "seed": cfg.seed, "burn_in": cfg.burn_in, "t_len": cfg.t_len, "n": w1.n(), "stationarity": report}),
        &dir,
        &files,
    )?;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(json!({"out_dir": dir, "n": w1.n(), "t_len": cfg.t_len, "stationarity": report}))
}

// invert

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertConfig {
    returns: PathBuf,
    model: ModelSpec,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    w1: Option<WeightSource>,
    #[serde(default)]
    w2: Option<WeightSource>,
    #[serde(default)]
    init: Option<InitSpec>,
    #[serde(default)]
    newton: NewtonOptions,
    #[allow(dead_code)]
    out_dir: PathBuf,
}

pub fn run_invert(v: &Value) -> CliResult<Value> {
    let cfg: InvertConfig = decode(v)?;
    let dir = out_dir(v)?;
    let y = read_panel(&cfg.returns, PanelKind::Returns, "returns")?;
    let (w1, w2) = weight_pair(cfg.grid, cfg.w1.as_ref(), cfg.w2.as_ref())?;
    let init = InitSpec::build(cfg.init.as_ref(), y.n())?;
    let inv = Inverter::new(&cfg.model.params(), &w1, &w2, cfg.newton)?.invert_panel(&y, &init)?;
    create_dir(&dir)?;
    write_panel(&inv.eps, &dir.join("eps.csv"))?;
    write_rows::<StepDiagnostics>(&inv.diagnostics, &dir.join("steps.csv"))?;
    let max_iter = inv.diagnostics.iter().map(|d| d.iterations).max().unwrap_or(0);
    let max_res = inv.diagnostics.iter().map(|d| d.residual).fold(0.0, f64::max);
    let files = names(&["eps.csv", "steps.csv"]);
    let m = manifest("invert", v, json!({"input_sha256": sha256_file(&cfg.returns)?}), &dir, &files)?;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(json!({"out_dir": dir, "steps": inv.diagnostics.len(), "max_iterations": max_iter, "max_residual": max_res}))
}

// estimate

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    returns: PathBuf,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    w1: Option<WeightSource>,
    #[serde(default)]
    w2: Option<WeightSource>,
    #[serde(default)]
    init: Option<InitSpec>,
    #[serde(default)]
    fit_options: FitOptions,
    #[allow(dead_code)]
    out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
pub(crate) struct EstimateOutput<'a> {
    #[serde(flatten)]
    pub result: &'a EstimationResult,
    pub trace_path: String,
}

pub(crate) fn write_estimate(result: &EstimationResult, dir: &Path, stem: &str) -> CliResult<Vec<String>> {
    let json_name = format!("{stem}.json");
    let trace_name = format!("{stem}_trace.csv");
    write_rows(&result.trace, &dir.join(&trace_name))?;
    write_json(&dir.join(&json_name), &EstimateOutput { result, trace_path: trace_name.clone() })?;
    Ok(vec![json_name, trace_name])
}

pub fn run_estimate(v: &Value) -> CliResult<Value> {
    let cfg: EstimateConfig = decode(v)?;
    let dir = out_dir(v)?;
    let y = read_panel(&cfg.returns, PanelKind::Returns, "returns")?;
    let (w1, w2) = weight_pair(cfg.grid, cfg.w1.as_ref(), cfg.w2.as_ref())?;
    let init = InitSpec::build(cfg.init.as_ref(), y.n())?;
    let result = fit_qmle(&y, &w1, &w2, &init, &cfg.fit_options)?;
    create_dir(&dir)?;
    let files = write_estimate(&result, &dir, "estimate")?;
    let m = manifest(
        "estimate",
        v,
        json!({"seed": cfg.fit_options.seed, "input_sha256": sha256_file(&cfg.returns)?}),
        &dir,
        &files,
    )?;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(json!({"out_dir": dir, "params": result.params, "std_errors": result.std_errors, "loglik": result.loglik, "aic": result.aic, "bic": result.bic, "converged": result.converged}))
}

// moments

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsConfig {
    model: ModelSpec,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    w1: Option<WeightSource>,
    #[serde(default)]
    w2: Option<WeightSource>,
    /// 0-based node for the return moments.
    #[serde(default)]
    node: usize,
    /// Second node for the cross moment.
    #[serde(default)]
    partner: Option<usize>,
    #[serde(default = "default_trunc_tol")]
    trunc_tol: f64,
    #[serde(default = "default_quad_nodes")]
    quad_nodes: usize,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

fn nu_json(p: &ModelParams, w1: &WeightMatrix, w2: &WeightMatrix) -> CliResult<Value> {
    let nu = nu_moments(p, w1, w2)?;
    let rows = |m: &nalgebra::DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
    Ok(json!({"mean": nu.mean.iter().collect::<Vec<_>>(), "cov0": rows(&nu.cov0), "cov1": rows(&nu.cov1)}))
}

pub fn run_moments(v: &Value) -> CliResult<Value> {
    let cfg: MomentsConfig = decode(v)?;
    let p = cfg.model.params();
    let (w1, w2) = weight_pair(cfg.grid, cfg.w1.as_ref(), cfg.w2.as_ref())?;
    let n = w1.n();
    if cfg.node >= n || cfg.partner.is_some_and(|j| j >= n) {
        return Err(CliError::validation(format!("node indices must be below n = {n}")));
    }
    let mut doc = Map::new();
    doc.insert("params".into(), json!(p));
    doc.insert("node".into(), json!(cfg.node));
    doc.insert("partner".into(), json!(cfg.partner));
    doc.insert("nu".into(), nu_json(&p, &w1, &w2)?);
    let q = |order| general_moments_quadrature(&p, &w1, &w2, cfg.node, order, cfg.trunc_tol, cfg.quad_nodes);
    let mut quad = Map::new();
    quad.insert("first".into(), json!(q(MomentOrder::First)?));
    quad.insert("second".into(), json!(q(MomentOrder::Second)?));
    if let Some(j) = cfg.partner {
        quad.insert("cross".into(), json!(q(MomentOrder::Cross(j))?));
    }
    doc.insert("quadrature".into(), Value::Object(quad));
    if p.xi == 0.0 {
        let j = cfg.partner.unwrap_or(cfg.node);
        doc.insert("closed".into(), json!(closed_moments_theta_only(&p, &w1, &w2, cfg.node, j, cfg.trunc_tol)?));
    }
    let doc = Value::Object(doc);
    if let Some(dir) = &cfg.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("moments.json"), &doc)?;
    }
    Ok(doc)
}

// meanfilter

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeanFilterConfig {
    returns: PathBuf,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    w1: Option<WeightSource>,
    #[serde(default)]
    w2: Option<WeightSource>,
    #[allow(dead_code)]
    out_dir: PathBuf,
}

pub fn run_meanfilter(v: &Value) -> CliResult<Value> {
    let cfg: MeanFilterConfig = decode(v)?;
    let dir = out_dir(v)?;
    let y = read_panel(&cfg.returns, PanelKind::Returns, "returns")?;
    let (w1, w2) = weight_pair(cfg.grid, cfg.w1.as_ref(), cfg.w2.as_ref())?;
    let fit = fit_sdpd(&y, &w1, &w2)?;
    create_dir(&dir)?;
    if let Some(r) = &fit.residuals {
        write_panel(r, &dir.join("residuals.csv"))?;
    }
    write_json(&dir.join("meanfilter.json"), &fit)?;
    let files = names(&["residuals.csv", "meanfilter.json"]);
    let m = manifest("meanfilter", v, json!({"input_sha256": sha256_file(&cfg.returns)?}), &dir, &files)?;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(json!({"out_dir": dir, "rho": fit.rho, "gamma": fit.gamma, "lambda": fit.lambda, "sigma2": fit.sigma2}))
}

// diagnose

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnoseConfig {
    residuals: PathBuf,
    #[serde(default)]
    grid: Option<[usize; 2]>,
    #[serde(default)]
    w: Option<WeightSource>,
    #[serde(default = "default_max_lag")]
    max_lag: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    /// Leading time points to drop (e.g. a likelihood burn-in).
    #[serde(default)]
    skip: usize,
    #[allow(dead_code)]
    out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct PValueRow<'a> {
    family: &'a str,
    index: usize,
    p_value: f64,
}

pub(crate) fn write_diagnostics(report: &DiagnosticsReport, dir: &Path, stem: &str) -> CliResult<Vec<String>> {
    let mut rows = Vec::new();
    for (family, ps) in [
        ("ljung_box_raw", &report.ljung_box_raw),
        ("ljung_box_squared", &report.ljung_box_squared),
        ("moran_raw", &report.moran_raw),
        ("moran_squared", &report.moran_squared),
    ] {
        rows.extend(ps.iter().enumerate().map(|(k, &p_value)| PValueRow { family, index: k + 1, p_value }));
    }
    let csv_name = format!("{stem}_pvalues.csv");
    let json_name = format!("{stem}_summary.json");
    write_rows(&rows, &dir.join(&csv_name))?;
    write_json(
        &dir.join(&json_name),
        &json!({"alpha": report.alpha, "max_lag": report.max_lag, "significant_fractions": report.fractions}),
    )?;
    Ok(vec![csv_name, json_name])
}

pub(crate) fn drop_leading(panel: &Panel, skip: usize) -> CliResult<Panel> {
    if skip >= panel.t_len() {
        return Err(CliError::validation(format!("skip {skip} leaves no time points out of {}", panel.t_len())));
    }
    Ok(Panel::new(panel.values().columns(skip, panel.t_len() - skip).into_owned(), panel.kind())?)
}

pub fn run_diagnose(v: &Value) -> CliResult<Value> {
    let cfg: DiagnoseConfig = decode(v)?;
    let dir = out_dir(v)?;
    let r = read_panel(&cfg.residuals, PanelKind::Residuals, "residuals")?;
    let w = match (cfg.grid, &cfg.w) {
        (Some(_), Some(_)) => return Err(CliError::validation("give either grid or w, not both")),
        (Some([rows, cols]), None) => {
            spegarch::networks::standardized_grid(rows, cols, spegarch::networks::Contiguity::Rook)?
        }
        (None, Some(w)) => w.load()?,
        (None, None) => return Err(CliError::validation("no weights: set grid or w")),
    };
    let report = panel_diagnostics(&drop_leading(&r, cfg.skip)?, &w, cfg.max_lag, cfg.alpha)?;
    create_dir(&dir)?;
    let files = write_diagnostics(&report, &dir, "diagnostics")?;
    let m = manifest("diagnose", v, json!({"input_sha256": sha256_file(&cfg.residuals)?}), &dir, &files)?;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(json!({"out_dir": dir, "significant_fractions": report.fractions}))
}

// network

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkConfig {
    network: NetworkDef,
    #[serde(default)]
    returns: Option<PathBuf>,
    #[allow(dead_code)]
    out_dir: PathBuf,
}

pub fn run_network(v: &Value) -> CliResult<Value> {
    let cfg: NetworkConfig = decode(v)?;
    let dir = out_dir(v)?;
    let returns = match (&cfg.returns, cfg.network.needs_returns()) {
        (Some(p), true) => Some(read_panel(p, PanelKind::Returns, "returns")?),
        (None, true) => return Err(CliError::validation("a k-NN network needs `returns`")),
        _ => None,
    };
    let (w, d) = cfg.network.build(returns.as_ref())?;
    create_dir(&dir)?;
    w.write_csv(writer(&dir.join("weights.csv"))?)?;
    w.write_edge_list(writer(&dir.join("edges.csv"))?)?;
    let mut files = names(&["weights.csv", "edges.csv"]);
    if let Some(d) = d {
        d.write_csv(writer(&dir.join("distance.csv"))?)?;
        files.push("distance.csv".into());
    }
    let m = manifest("network", v, json!({}), &dir, &files)?;
    write_json(&dir.join("manifest.json"), &m)?;
    let edges: usize = (0..w.n()).map(|i| w.degree(i)).sum();
    Ok(json!({"out_dir": dir, "n": w.n(), "edges": edges, "row_standardized": w.is_row_standardized()}))
}

// mc

#[derive(Debug, Serialize)]
struct TimingSummary {
    min: f64,
    mean: f64,
    max: f64,
}

pub fn run_mc(v: &Value) -> CliResult<Value> {
    let dir = out_dir(v)?;
    let mut stripped = v.clone();
    if let Some(m) = stripped.as_object_mut() {
        m.remove("out_dir");
    }
    let cfg: McConfig = decode(&stripped)?;
    cfg.validate()?;
    let out = run_bias_rmse(&cfg)?;
    create_dir(&dir)?;
    write_table_csv(&out.table, writer(&dir.join("table.csv"))?)?;
    let param_names = ModelParams::free_names(cfg.fit_options.two_theta);
    write_replications_csv(&out.replications, &param_names, writer(&dir.join("replications.csv"))?)?;
    let secs: Vec<f64> = out.replications.iter().map(|r| r.seconds).collect();
    let timing = TimingSummary {
        min: secs.iter().copied().fold(f64::INFINITY, f64::min),
        mean: secs.iter().sum::<f64>() / secs.len() as f64,
        max: secs.iter().copied().fold(0.0, f64::max),
    };
    let files = names(&["table.csv", "replications.csv"]);
    let m = manifest(
        "mc",
        v,
        json!({
            "seed": cfg.seed,
            "replication_seeds": out.replications.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "wall_seconds": out.wall_seconds,
            "seconds_per_replication": timing,
            "failures": out.failures,
            "non_converged": out.non_converged,
        }),
        &dir,
        &files,
    )?;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(json!({"out_dir": dir, "table": out.table, "failures": out.failures, "non_converged": out.non_converged, "wall_seconds": out.wall_seconds}))
}

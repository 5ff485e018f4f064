//! End-to-end run: ingest, mean filter, one volatility fit per network,
//! residual diagnostics and an information-criterion comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spegarch::diagnostics::{panel_diagnostics, DEFAULT_MAX_LAG};
use spegarch::inversion::Inverter;
use spegarch::likelihood::{fit_qmle, FitOptions};
use spegarch::meanmodel::fit_sdpd;
use spegarch::{Panel, PanelKind, WeightMatrix};

use crate::commands::{drop_leading, output_hashes, write_diagnostics, write_estimate, write_panel, write_rows, VERSION};
use crate::config::{config_hash, create_dir, decode, require_file, sha256_file, write_json};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_returns, ZeroPolicy};
use crate::spec::{InitSpec, NetworkDef};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedNetwork {
    pub name: String,
    pub network: NetworkDef,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanStage {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Network used for both mean-model weights; defaults to the first one.
    #[serde(default)]
    pub network: Option<String>,
}

impl Default for MeanStage {
    fn default() -> Self {
        MeanStage { enabled: true, network: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsStage {
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for DiagnosticsStage {
    fn default() -> Self {
        DiagnosticsStage { max_lag: DEFAULT_MAX_LAG, alpha: 0.05 }
    }
}

fn yes() -> bool {
    true
}

fn default_max_lag() -> usize {
    DEFAULT_MAX_LAG
}

fn default_alpha() -> f64 {
    0.05
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub returns: PathBuf,
    pub out_dir: PathBuf,
    /// Seed of the zero-replacement stream.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub zero_policy: ZeroPolicy,
    #[serde(default)]
    pub mean_filter: MeanStage,
    pub networks: Vec<NamedNetwork>,
    #[serde(default)]
    pub fit_options: FitOptions,
    #[serde(default)]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub diagnostics: DiagnosticsStage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub network: String,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub min_aic: bool,
    pub min_bic: bool,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub comparison: Vec<ComparisonRow>,
    pub manifest: Value,
}

/// Checks everything that can be checked without computing: names, files, options.
pub fn validate(cfg: &PipelineConfig) -> CliResult<()> {
    require_file(&cfg.returns, "returns")?;
    if cfg.networks.is_empty() {
        return Err(CliError::validation("at least one network is required"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for net in &cfg.networks {
        let ok = !net.name.is_empty() && net.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !ok {
            return Err(CliError::validation(format!("network name `{}` must be non-empty [A-Za-z0-9_-]", net.name)));
        }
        if !seen.insert(net.name.as_str()) {
            return Err(CliError::validation(format!("duplicate network name `{}`", net.name)));
        }
        if let NetworkDef::File { path } = &net.network {
            require_file(path, &format!("network `{}` weight", net.name))?;
        }
    }
    if let Some(name) = &cfg.mean_filter.network {
        if !seen.contains(name.as_str()) {
            return Err(CliError::validation(format!("mean_filter.network `{name}` is not a defined network")));
        }
    }
    if cfg.fit_options.n_starts == 0 || cfg.fit_options.n_refine == 0 {
        return Err(CliError::validation("fit_options.n_starts and n_refine must be positive"));
    }
    if !(cfg.diagnostics.alpha > 0.0 && cfg.diagnostics.alpha < 1.0) {
        return Err(CliError::validation("diagnostics.alpha must lie in (0, 1)"));
    }
    Ok(())
}

struct Run<'a> {
    dir: &'a Path,
    files: Vec<String>,
    stages: Vec<String>,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Vec<String>) -> CliResult<T>) -> CliResult<T> {
        let out = f(&mut self.files).map_err(|e| e.at_stage(name))?;
        self.stages.push(name.to_string());
        Ok(out)
    }
}

/// Runs the pipeline from an effective config. On failure the files already
/// written stay in place and `error.json` names the failing stage.
pub fn pipeline_run(v: &Value) -> CliResult<PipelineOutcome> {
    let cfg: PipelineConfig = decode(v)?;
    validate(&cfg)?;
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    let _ = std::fs::remove_file(dir.join("error.json"));
    let mut run = Run { dir: &dir, files: Vec::new(), stages: Vec::new() };
    match execute(&cfg, v, &mut run) {
        Ok(out) => Ok(out),
        Err(e) => {
            write_json(
                &dir.join("error.json"),
                &json!({"stage": e.stage, "message": e.message, "completed_stages": run.stages, "files": run.files}),
            )?;
            Err(e)
        }
    }
}

fn execute(cfg: &PipelineConfig, v: &Value, run: &mut Run) -> CliResult<PipelineOutcome> {
    let dir = run.dir.to_path_buf();
    let ingested = run.stage("ingest", |files| {
        let ing = ingest_returns(&cfg.returns, cfg.zero_policy, cfg.seed)?;
        write_panel(&ing.panel, &dir.join("returns_clean.csv"))?;
        write_rows(&ing.replacements, &dir.join("zero_replacements.csv"))?;
        files.extend(["returns_clean.csv".to_string(), "zero_replacements.csv".to_string()]);
        Ok(ing)
    })?;
    let returns = &ingested.panel;

    let networks: Vec<(String, WeightMatrix)> = run.stage("networks", |files| {
        create_dir(&dir.join("networks"))?;
        let mut out = Vec::new();
        for net in &cfg.networks {
            let (w, d) = net.network.build(Some(returns)).map_err(|e| CliError { message: format!("network `{}`: {}", net.name, e.message), ..e })?;
            if w.n() != returns.n() {
                return Err(CliError::validation(format!("network `{}` has {} nodes, returns have {}", net.name, w.n(), returns.n())));
            }
            let name = format!("networks/{}.csv", net.name);
            w.write_csv(crate::commands::writer(&dir.join(&name))?)?;
            files.push(name);
            if let Some(d) = d {
                let name = format!("networks/{}_distance.csv", net.name);
                d.write_csv(crate::commands::writer(&dir.join(&name))?)?;
                files.push(name);
            }
            out.push((net.name.clone(), w));
        }
        Ok(out)
    })?;

    let volatility_input: Panel = if cfg.mean_filter.enabled {
        run.stage("meanfilter", |files| {
            let name = cfg.mean_filter.network.as_deref().unwrap_or(&cfg.networks[0].name);
            let w = &networks.iter().find(|(n, _)| n == name).expect("validated").1;
            let fit = fit_sdpd(returns, w, w)?;
            let resid = fit.residuals.clone().expect("fit returns residuals");
            write_panel(&resid, &dir.join("meanfilter_residuals.csv"))?;
            write_json(&dir.join("meanfilter.json"), &json!({"network": name, "fit": fit}))?;
            files.extend(["meanfilter_residuals.csv".to_string(), "meanfilter.json".to_string()]);
            Ok(resid)
        })?
    } else {
        returns.clone()
    };
    if volatility_input.values().iter().any(|&x| x == 0.0) {
        return Err(CliError::validation("volatility input contains exact zeros").at_stage("meanfilter"));
    }

    let init = InitSpec::build(cfg.init.as_ref(), volatility_input.n())?;
    let mut rows = Vec::new();
    create_dir(&dir.join("estimates"))?;
    create_dir(&dir.join("diagnostics"))?;
    for (name, w) in &networks {
        let result = run.stage(&format!("estimate:{name}"), |files| {
            let r = fit_qmle(&volatility_input, w, w, &init, &cfg.fit_options)?;
            files.extend(write_estimate(&r, &dir.join("estimates"), name)?.into_iter().map(|f| format!("estimates/{f}")));
            Ok(r)
        })?;
        run.stage(&format!("diagnose:{name}"), |files| {
            let inv = Inverter::new(&result.params, w, w, cfg.fit_options.newton)?.invert_panel(&volatility_input, &init)?;
            let std_resid = drop_leading(&inv.eps.with_kind(PanelKind::Residuals), cfg.fit_options.burn)?;
            let report = panel_diagnostics(&std_resid, w, cfg.diagnostics.max_lag, cfg.diagnostics.alpha)?;
            let sub = dir.join("diagnostics");
            write_panel(&std_resid, &sub.join(format!("{name}_std_residuals.csv")))?;
            files.push(format!("diagnostics/{name}_std_residuals.csv"));
            files.extend(write_diagnostics(&report, &sub, name)?.into_iter().map(|f| format!("diagnostics/{f}")));
            Ok(())
        })?;
        rows.push(ComparisonRow {
            network: name.clone(),
            loglik: result.loglik,
            n_params: result.param_names.len(),
            aic: result.aic,
            bic: result.bic,
            min_aic: false,
            min_bic: false,
            converged: result.converged,
        });
    }

    let comparison = run.stage("compare", |files| {
        flag_minima(&mut rows);
        write_rows(&rows, &dir.join("comparison.csv"))?;
        files.push("comparison.csv".into());
        Ok(rows)
    })?;

    let mut inputs = BTreeMap::new();
    inputs.insert("returns".to_string(), sha256_file(&cfg.returns)?);
    for net in &cfg.networks {
        if let NetworkDef::File { path } = &net.network {
            inputs.insert(format!("network:{}", net.name), sha256_file(path)?);
        }
    }
    let manifest = json!({
        "command": "pipeline",
        "version": VERSION,
        "config": strip_out_dir(v),
        "config_sha256": config_hash(v),
        "seeds": {"zero_replacement": cfg.seed, "fit": cfg.fit_options.seed},
        "inputs": inputs,
        "zero_replacements": ingested.replacements.len(),
        "stages": run.stages,
        "outputs": output_hashes(&dir, &run.files)?,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(PipelineOutcome { out_dir: dir, comparison, manifest })
}

fn strip_out_dir(v: &Value) -> Value {
    let mut c = v.clone();
    if let Some(m) = c.as_object_mut() {
        m.remove("out_dir");
    }
    c
}

/// Marks the smallest AIC and BIC (first on ties).
pub fn flag_minima(rows: &mut [ComparisonRow]) {
    let argmin = |key: fn(&ComparisonRow) -> f64, rows: &[ComparisonRow]| {
        (0..rows.len()).min_by(|&a, &b| key(&rows[a]).total_cmp(&key(&rows[b])))
    };
    if let Some(k) = argmin(|r| r.aic, rows) {
        rows[k].min_aic = true;
    }
    if let Some(k) = argmin(|r| r.bic, rows) {
        rows[k].min_bic = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, aic: f64, bic: f64) -> ComparisonRow {
        ComparisonRow { network: name.into(), loglik: 0.0, n_params: 6, aic, bic, min_aic: false, min_bic: false, converged: true }
    }

    #[test]
    fn exactly_one_minimum_is_flagged() {
        let mut rows = vec![row("a", 10.0, 30.0), row("b", 5.0, 31.0), row("c", 5.0, 29.0)];
        flag_minima(&mut rows);
        assert_eq!(rows.iter().filter(|r| r.min_aic).count(), 1);
        assert!(rows[1].min_aic && rows[2].min_bic);
    }
}

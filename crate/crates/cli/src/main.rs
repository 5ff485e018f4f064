use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use spegarch::exec::set_thread_limit;
use spegarch_cli::commands;
use spegarch_cli::config::{self, parse_assignment};
use spegarch_cli::{pipeline_run, CliError, CliResult};

/// Spatiotemporal log-volatility models: simulation, inversion, estimation,
/// moments, mean filtering, diagnostics and Monte Carlo studies.
#[derive(Parser)]
#[command(name = "spegarch", version)]
struct Cli {
    /// Cap on worker threads for Monte Carlo and multi-start estimation.
    #[arg(long, global = true, env = "ST_EGARCH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config for this run; relative paths inside it are relative to the file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Override any config field, e.g. `--set fit_options.n_starts=10`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel and write y, eps and h.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Named parameter set (A or B).
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_len: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Recover innovations from returns at given parameters.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Quasi-maximum-likelihood estimation.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_starts: Option<usize>,
    },
    /// Print stationary moments as JSON.
    Moments {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        node: Option<usize>,
        #[arg(long)]
        partner: Option<usize>,
    },
    /// Fit the spatial dynamic panel mean model and write residuals.
    Meanfilter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: Option<PathBuf>,
    },
    /// Ljung-Box and Moran's I tests on a residual panel.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        residuals: Option<PathBuf>,
        #[arg(long)]
        max_lag: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Build a weight matrix from a lattice or from data.
    Network {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: Option<PathBuf>,
    },
    /// Monte Carlo bias/RMSE study.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        t_len: Option<usize>,
    },
    /// Ingest, mean filter, estimate per network, diagnose and compare.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn path_value(p: PathBuf) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

/// Collects `(key, value)` overrides; explicit flags win over `--set`.
struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn new(common: &Common) -> CliResult<Self> {
        let mut out = Vec::new();
        for s in &common.set {
            out.push(parse_assignment(s)?);
        }
        if let Some(o) = &common.out {
            out.push(("out_dir".into(), path_value(o.clone())));
        }
        Ok(Overrides(out))
    }

    fn opt<T: Into<Value>>(mut self, key: &str, v: Option<T>) -> Self {
        if let Some(v) = v {
            self.0.push((key.into(), v.into()));
        }
        self
    }

    fn path(self, key: &str, v: Option<PathBuf>) -> Self {
        self.opt(key, v.map(path_value))
    }
}

fn effective(common: &Common, overrides: Overrides) -> CliResult<Value> {
    let mut v = config::load(common.config.as_deref())?;
    config::apply(&mut v, overrides.0)?;
    Ok(v)
}

fn run(cli: Cli) -> CliResult<Value> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        set_thread_limit(t);
    }
    match cli.command {
        Command::Simulate { common, model, seed, t_len, burn_in } => {
            let o = Overrides::new(&common)?.opt("model", model).opt("seed", seed).opt("t_len", t_len).opt("burn_in", burn_in);
            commands::run_simulate(&effective(&common, o)?)
        }
        Command::Invert { common, returns, model } => {
            let o = Overrides::new(&common)?.path("returns", returns).opt("model", model);
            commands::run_invert(&effective(&common, o)?)
        }
        Command::Estimate { common, returns, seed, n_starts } => {
            let o = Overrides::new(&common)?
                .path("returns", returns)
                .opt("fit_options.seed", seed)
                .opt("fit_options.n_starts", n_starts);
            commands::run_estimate(&effective(&common, o)?)
        }
        Command::Moments { common, model, node, partner } => {
            let o = Overrides::new(&common)?.opt("model", model).opt("node", node).opt("partner", partner);
            commands::run_moments(&effective(&common, o)?)
        }
        Command::Meanfilter { common, returns } => {
            let o = Overrides::new(&common)?.path("returns", returns);
            commands::run_meanfilter(&effective(&common, o)?)
        }
        Command::Diagnose { common, residuals, max_lag, alpha } => {
            let o = Overrides::new(&common)?.path("residuals", residuals).opt("max_lag", max_lag).opt("alpha", alpha);
            commands::run_diagnose(&effective(&common, o)?)
        }
        Command::Network { common, returns } => {
            let o = Overrides::new(&common)?.path("returns", returns);
            commands::run_network(&effective(&common, o)?)
        }
        Command::Mc { common, seed, replications, t_len } => {
            let o = Overrides::new(&common)?.opt("seed", seed).opt("replications", replications).opt("t_len", t_len);
            commands::run_mc(&effective(&common, o)?)
        }
        Command::Pipeline { common, returns, seed } => {
            let o = Overrides::new(&common)?.path("returns", returns).opt("seed", seed);
            let out = pipeline_run(&effective(&common, o)?)?;
            Ok(json!({"out_dir": out.out_dir, "comparison": out.comparison, "config_sha256": out.manifest["config_sha256"]}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

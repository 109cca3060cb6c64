//! `nvreso`: configuration-driven runner for the resonator/NV-ensemble
//! simulations, plus standalone fit, budget and tuning-loop commands.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! data (nothing written), 3 numerical non-convergence (outputs written and
//! flagged partial; suppressed by `--best-effort`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod fitdata;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nvreso_core::fitting::{FitModel, FitSettings};

use config::{ExperimentConfig, ExperimentKind, Loaded, TuneLoopBlock};
use run::{Failure, Product};

#[derive(Parser)]
#[command(
    name = "nvreso",
    version,
    about = "NV ensemble / dielectric resonator simulations and fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit 0 even if a fit did not converge.
        #[arg(long)]
        best_effort: bool,
    },
    /// Fit a model to a CSV file and print the result as JSON.
    Fit {
        data: PathBuf,
        /// sinusoid | hahn | lorentzian | sqrtp | s11
        #[arg(long)]
        model: FitModel,
        /// sqrtp only: force the line through the origin.
        #[arg(long)]
        zero_intercept: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Residual-evaluation budget.
        #[arg(long)]
        budget: Option<usize>,
        /// Also write fit.json and metadata.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        best_effort: bool,
    },
    /// Microwave loss chain and B1 conversion; measured chain by default.
    Budget {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop thermal frequency lock against the calibration plant.
    TuneLoop {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        best_effort: bool,
    },
}

fn fail(e: Failure) -> ExitCode {
    match e {
        Failure::Input(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Failure::Runtime(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path, seed: Option<u64>, expect: Option<ExperimentKind>) -> Result<Loaded, Failure> {
    let mut loaded = Loaded::read(path)?;
    if let Some(s) = seed {
        loaded.config.seed = s;
    }
    if let Some(kind) = expect {
        if loaded.config.experiment != kind {
            return Err(loaded
                .error_at(
                    "experiment",
                    format!("expected experiment \"{kind}\", found \"{}\"", loaded.config.experiment),
                )
                .into());
        }
    }
    Ok(loaded)
}

/// Writes outputs when a directory is known and maps convergence to the
/// exit status.
fn finish(
    product: &Product,
    out: Option<PathBuf>,
    kind: ExperimentKind,
    seed: u64,
    echo: &impl serde::Serialize,
    best_effort: bool,
) -> ExitCode {
    if let Some(dir) = out {
        if let Err(e) = run::write_outputs(&dir, product, kind, seed, echo) {
            eprintln!("error: writing {}: {e}", dir.display());
            return ExitCode::from(1);
        }
    }
    if product.converged || best_effort {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: numerical non-convergence; outputs are flagged partial");
        ExitCode::from(3)
    }
}

fn run_config(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, best_effort: bool) -> ExitCode {
    let loaded = match load(&config, seed, None) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let dir = match out.or_else(|| loaded.config.output_dir.as_ref().map(|d| loaded.resolve(d))) {
        Some(d) => d,
        None => {
            return fail(
                loaded
                    .error_at("experiment", "no output directory: set output_dir or pass --out")
                    .into(),
            )
        }
    };
    match run::execute(&loaded) {
        Ok(p) => finish(
            &p,
            Some(dir),
            loaded.config.experiment,
            loaded.config.seed,
            &loaded.config,
            best_effort,
        ),
        Err(e) => fail(e),
    }
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            best_effort,
        } => run_config(config, out, seed, best_effort),
        Command::Fit {
            data,
            model,
            zero_intercept,
            seed,
            budget,
            out,
            best_effort,
        } => {
            let mut settings = FitSettings {
                seed,
                ..Default::default()
            };
            if let Some(b) = budget {
                settings.budget = b;
            }
            let result = match fitdata::fit_file(&data, model, zero_intercept, &settings) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            print(&serde_json::to_value(&result).expect("serializable"));
            let echo = serde_json::json!({
                "data": data,
                "model": model,
                "zero_intercept": zero_intercept,
                "seed": seed,
                "budget": settings.budget,
            });
            let mut product = Product {
                files: Vec::new(),
                converged: result.converged,
                nonconverged: Vec::new(),
                summary: serde_json::Value::Null,
            };
            let mut bytes = serde_json::to_vec_pretty(&result).expect("serializable");
            bytes.push(b'\n');
            product.files.push(("fit.json".into(), bytes));
            finish(&product, out, ExperimentKind::Fit, seed, &echo, best_effort)
        }
        Command::Budget { config, out } => {
            let loaded = match config.map(|c| load(&c, None, Some(ExperimentKind::Budget))).transpose() {
                Ok(l) => l,
                Err(e) => return fail(e),
            };
            let block = loaded
                .as_ref()
                .and_then(|l| l.config.budget.clone())
                .unwrap_or_default();
            let product = match run::budget(&block, loaded.as_ref()) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            print(&product.summary);
            let echo = echo_for(loaded.as_ref(), ExperimentKind::Budget, |c| {
                c.budget = Some(block.clone())
            });
            finish(&product, out, ExperimentKind::Budget, 0, &echo, false)
        }
        Command::TuneLoop {
            config,
            out,
            best_effort,
        } => {
            let loaded = match config
                .map(|c| load(&c, None, Some(ExperimentKind::TuneLoop)))
                .transpose()
            {
                Ok(l) => l,
                Err(e) => return fail(e),
            };
            let block: TuneLoopBlock = loaded
                .as_ref()
                .and_then(|l| l.config.tune_loop.clone())
                .unwrap_or_default();
            let product = match run::tune_loop(&block, loaded.as_ref()) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            print(&product.summary);
            let echo = echo_for(loaded.as_ref(), ExperimentKind::TuneLoop, |c| {
                c.tune_loop = Some(block.clone())
            });
            finish(&product, out, ExperimentKind::TuneLoop, 0, &echo, best_effort)
        }
    }
}

/// Full config echo for the standalone subcommands, defaults filled in.
fn echo_for(
    loaded: Option<&Loaded>,
    kind: ExperimentKind,
    fill: impl FnOnce(&mut ExperimentConfig),
) -> ExperimentConfig {
    let mut c = match loaded {
        Some(l) => l.config.clone(),
        None => serde_json::from_value(serde_json::json!({ "experiment": kind })).expect("minimal config"),
    };
    fill(&mut c);
    c
}

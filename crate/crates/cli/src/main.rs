use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use stfield::eof::TruncationRule;
use stfield::model::MlpConfig;
use stfield_cli::commands::{self, ReportOutcome};
use stfield_cli::config::{resolve_output, RunConfig};

#[derive(Parser)]
#[command(name = "stfield", version, about = "Interpolate spatio-temporal fields from station time series")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and STFIELD_OUTPUT_ROOT).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also train the single-output baseline.
    #[arg(long, global = true)]
    baseline: bool,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    Simulate,
    /// Full pipeline: data, decomposition, training, maps, diagnostics.
    Run,
    /// Regenerate figures and a summary from an existing run directory.
    Report {
        /// Run directory (defaults to --output).
        dir: Option<PathBuf>,
    },
    /// Decompose one or more datasets into temporal bases.
    Decompose {
        /// Stations/measurements file pairs, concatenated in order.
        #[arg(long, num_args = 2, value_names = ["STATIONS", "MEASUREMENTS"], required = true)]
        input: Vec<PathBuf>,
        /// Keep this many components.
        #[arg(long, conflicts_with = "threshold")]
        count: Option<usize>,
        /// Keep components up to this cumulative explained variance.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train against a saved basis.
    Train {
        #[arg(long, num_args = 2, value_names = ["STATIONS", "MEASUREMENTS"])]
        train: Vec<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["STATIONS", "MEASUREMENTS"])]
        val: Vec<PathBuf>,
        #[arg(long)]
        basis: PathBuf,
    },
    /// Predict on a grid and/or at station covariates.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Station covariates (`station_id,x,y,...`).
        #[arg(long)]
        stations: Option<PathBuf>,
        /// Time index of a field map; repeatable.
        #[arg(long = "snapshot", default_values_t = [0usize])]
        snapshots: Vec<usize>,
    },
    /// Empirical space-time semivariogram of data or residuals.
    Variogram {
        #[command(flatten)]
        data: DatasetArgs,
        /// Predictions in measurement format; the residual surface is computed.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<Option<RunConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.baseline |= cli.baseline;
    Ok(Some(config))
}

fn output(cli: &Cli, config: Option<&RunConfig>, name: &str) -> PathBuf {
    let stem = cli
        .config
        .as_deref()
        .and_then(Path::file_stem)
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    resolve_output(cli.output.as_deref(), config.and_then(|c| c.output.as_deref()), stem)
}

fn pair(v: &[PathBuf]) -> (PathBuf, PathBuf) {
    (v[0].clone(), v[1].clone())
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    let need_config = || config.clone().context("this command needs --config");
    match &cli.command {
        Command::Simulate => {
            let c = need_config()?;
            let dir = output(&cli, Some(&c), "simulate");
            commands::cmd_simulate(&c, &dir)?;
            if !cli.quiet {
                println!("{}", dir.display());
            }
        }
        Command::Run => {
            let c = need_config()?;
            let dir = output(&cli, Some(&c), "run");
            let summary = commands::cmd_run(&c, &dir)?;
            if !cli.quiet {
                for r in &summary.metrics {
                    println!("{:<24} K={:<3} test MAE {:.6}", r.model, r.k_used, r.test_mae);
                }
                for s in &summary.diagnostics.surfaces {
                    println!("{:<24} flatness {:?}", s.name, s.flatness_ratio);
                }
                println!("{}", dir.display());
            }
        }
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| output(&cli, config.as_ref(), "run"));
            match commands::cmd_report(&dir)? {
                ReportOutcome::Complete => {}
                ReportOutcome::Partial(missing) => {
                    for p in missing {
                        eprintln!("missing or modified: {}", p.display());
                    }
                    return Ok(ExitCode::from(2));
                }
            }
        }
        Command::Decompose { input, count, threshold } => {
            let rule = match (count, threshold) {
                (Some(k), _) => TruncationRule::Count(*k),
                (None, Some(t)) => TruncationRule::VarianceThreshold(*t),
                (None, None) => config.as_ref().map_or(TruncationRule::VarianceThreshold(0.95), |c| c.truncation),
            };
            let pairs: Vec<_> = input.chunks(2).map(pair).collect();
            commands::cmd_decompose(&pairs, rule, &output(&cli, config.as_ref(), "decompose"))?;
        }
        Command::Train { train, val, basis } => {
            anyhow::ensure!(train.len() == 2 && val.len() == 2, "--train and --val each take a stations and a measurements file");
            let mut mc = config.as_ref().map_or_else(MlpConfig::default, |c| c.model.clone());
            if let Some(seed) = cli.seed {
                mc.seed = seed;
            }
            let baseline = cli.baseline || config.as_ref().is_some_and(|c| c.baseline);
            commands::cmd_train(pair(train), pair(val), basis, &mc, baseline, &output(&cli, config.as_ref(), "train"))?;
        }
        Command::Predict { model, grid, stations, snapshots } => {
            commands::cmd_predict(model, grid.as_deref(), stations.as_deref(), snapshots, &output(&cli, config.as_ref(), "predict"))?;
        }
        Command::Variogram { data, predictions } => {
            let vc = config.as_ref().map(|c| c.variogram.clone()).unwrap_or_default();
            let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
            commands::cmd_variogram(
                &data.stations,
                &data.measurements,
                predictions.as_deref(),
                &vc,
                seed,
                &output(&cli, config.as_ref(), "variogram"),
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

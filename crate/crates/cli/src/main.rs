use std::fs::{self, File};
use std::io::BufReader;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ifassist_core::experiment::{
    aggregate, read_trials, run_sweep, summarize, write_sweep, SweepConfig, SUMMARY_FILE,
};
use ifassist_core::user_model::{
    estimate_distortion, estimate_internal_mapping, read_calibration_jsonl, response_accuracy,
    DEFAULT_PROFICIENCY_THRESHOLD, DEFAULT_SMOOTHING,
};
use ifassist_core::{
    AssistanceMode, CalibrationSample, ControlMapping, ExperimentError, NoiseLevel, UserModelTables,
};
use ifassist_service::{SessionManager, Store, SystemClock};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "ifassist",
    version,
    about = "Interface-aware assistance experiments and session server"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated sweep and write per-trial and per-cell results.
    Sweep(SweepArgs),
    /// Aggregate a sweep directory and check the assistance ordering.
    Summarize {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
    },
    /// Fit user-model tables from calibration logs.
    CalibrateFit(FitArgs),
    /// Serve the session API.
    Serve(ServeArgs),
    /// Replay a persisted session and compare it with its log.
    Replay {
        #[arg(long, env = "IFASSIST_DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        #[arg(long)]
        session: String,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    rho_user: Option<f64>,
    #[arg(long)]
    rho_assumed: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    n_turns: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lambda_i: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda_m: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    assistance: Option<Vec<AssistanceMode>>,
    #[arg(long)]
    record_traces: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    phase1: Option<PathBuf>,
    #[arg(long)]
    phase2: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
    alpha: f64,
    /// JSON control mapping; the default mapping otherwise.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "IFASSIST_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, env = "IFASSIST_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "IFASSIST_PORT", default_value_t = 8080)]
    port: u16,
}

fn parse_mode(s: &str) -> Result<AssistanceMode, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown assistance mode `{s}`"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<ExperimentError>()
                .is_some_and(ExperimentError::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Summarize { input } => summarize_dir(&input),
        Command::CalibrateFit(args) => calibrate_fit(args),
        Command::Serve(args) => serve(args),
        Command::Replay { data_dir, session } => {
            let manager =
                SessionManager::open(Store::open(&data_dir)?, Arc::new(SystemClock::new()))?;
            let report = manager.replay_session(&session)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            anyhow::ensure!(
                report.identical,
                "replay diverges at line {:?}",
                report.first_mismatch
            );
            Ok(())
        }
    }
}

fn noise_levels(values: Vec<f64>) -> Result<Vec<NoiseLevel>, ExperimentError> {
    values
        .into_iter()
        .map(|v| NoiseLevel::new(v).map_err(|e| ExperimentError::Config(e.to_string())))
        .collect()
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SweepConfig::from_json_file(path)?,
        None => SweepConfig::default(),
    };
    if let Some(v) = args.trials {
        cfg.trials_per_cell = v;
    }
    if let Some(v) = args.seed {
        cfg.base_seed = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.rho_user {
        cfg.rho_user = v;
    }
    if let Some(v) = args.rho_assumed {
        cfg.rho_assumed = v;
    }
    if let Some(v) = args.n_turns {
        cfg.n_turns = v;
    }
    if let Some(v) = args.lambda_i {
        cfg.lambda_i = noise_levels(v)?;
    }
    if let Some(v) = args.lambda_m {
        cfg.lambda_m = noise_levels(v)?;
    }
    if let Some(v) = args.assistance {
        cfg.assistance = v;
    }
    cfg.record_traces |= args.record_traces;
    cfg.validate()?;
    let out = run_sweep(&cfg)?;
    write_sweep(&out, &args.out)?;
    println!(
        "wrote {} trials in {} cells to {}",
        out.trials.len(),
        out.cells.len(),
        args.out.display()
    );
    Ok(())
}

fn summarize_dir(dir: &Path) -> anyhow::Result<()> {
    let trials =
        read_trials(dir).with_context(|| format!("reading trials from {}", dir.display()))?;
    anyhow::ensure!(!trials.is_empty(), "no trials in {}", dir.display());
    let cells = aggregate(&trials);
    let report = summarize(&cells);
    let summary = json!({ "cells": cells, "report": report });
    fs::write(
        dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    print!("{}", report.render());
    Ok(())
}

fn read_samples(path: &Path) -> anyhow::Result<Vec<CalibrationSample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_calibration_jsonl(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
}

fn calibrate_fit(args: FitArgs) -> anyhow::Result<()> {
    anyhow::ensure!(
        args.phase1.is_some() || args.phase2.is_some(),
        "give at least one of --phase1 and --phase2"
    );
    let mapping: ControlMapping = match &args.mapping {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
        None => ControlMapping::default(),
    };
    let mut tables = UserModelTables::noise_free(&mapping);
    let mut accuracy = serde_json::Map::new();
    if let Some(p) = &args.phase1 {
        let samples = read_samples(p)?;
        tables.internal_mapping = estimate_internal_mapping(&samples, args.alpha)?;
        accuracy.insert(
            "phase1".into(),
            json!(response_accuracy(&samples, &mapping)),
        );
    }
    if let Some(p) = &args.phase2 {
        let samples = read_samples(p)?;
        tables.distortion = estimate_distortion(&samples, args.alpha)?;
        accuracy.insert(
            "phase2".into(),
            json!(response_accuracy(&samples, &mapping)),
        );
    }
    fs::write(&args.out, serde_json::to_string_pretty(&tables)? + "\n")?;
    for (phase, acc) in &accuracy {
        let acc = acc.as_f64().unwrap_or(0.0);
        let flag = if acc < DEFAULT_PROFICIENCY_THRESHOLD {
            " (below proficiency threshold)"
        } else {
            ""
        };
        println!("{phase} accuracy {:.1}%{flag}", acc * 100.0);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let store = Store::open(&args.data_dir)?;
    let manager = Arc::new(SessionManager::open(store, Arc::new(SystemClock::new()))?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(ifassist_service::serve(
        manager,
        SocketAddr::new(args.host, args.port),
    ))?;
    Ok(())
}

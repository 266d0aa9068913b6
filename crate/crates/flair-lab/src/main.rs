use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flair_lab::experiment::{run_experiment, RunMode};
use flair_lab::{emit_artifacts, ExperimentConfig, HarnessError};

/// Desk-scale laboratory for variational posterior sampling with
/// flow-matching priors.
#[derive(Parser)]
#[command(name = "flair-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output directory (overrides the config's `out_dir`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed: replaces the run seeds with seed..seed+k.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, printing a summary.
    Validate { config: PathBuf },
    /// Measure the field's flow-matching error table and write calibration.csv.
    Calibrate(RunArgs),
    /// Run the configured solver over the run seeds and emit artifacts.
    Solve(RunArgs),
    /// Run all 8 {HDC, DTA, CRW} ablation variants and emit artifacts.
    Sweep(RunArgs),
}

fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("FLAIR_LAB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // ignore failure when a pool already exists
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid FLAIR_LAB_THREADS={v}"),
        }
    }
}

fn load(config: &PathBuf, args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(base) = args.seed {
        let k = cfg.run_seeds().len() as u64;
        cfg.seeds = Some((base..base + k).collect());
    }
    Ok(cfg)
}

fn outdir(cfg: &ExperimentConfig, args: &RunArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_validate(config: &PathBuf) -> Result<(), HarnessError> {
    let cfg = ExperimentConfig::load(config)?;
    println!(
        "ok: signal dim {}, variable dim {}, operator {:?} ({} -> {} measurements), field {:?}, {} run seed(s)",
        cfg.shape.len(),
        cfg.variable_dim(),
        cfg.operator,
        cfg.shape.len(),
        cfg.build_operator().map(|op| op.output_dim()).unwrap_or(0),
        cfg.field,
        cfg.run_seeds().len(),
    );
    Ok(())
}

fn cmd_calibrate(args: &RunArgs) -> Result<(), HarnessError> {
    let mut cfg = load(&args.config, args)?;
    // force a table even when the solver would not use one
    if cfg.solver.reg_weighting != "calibrated" {
        cfg.solver.reg_weighting = "calibrated".into();
    }
    let dir = outdir(&cfg, args);
    let built = flair_lab::experiment::build(cfg)?;
    let table = built
        .calibration
        .as_ref()
        .expect("calibrated weighting builds a table");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("calibration.csv");
    std::fs::write(&path, table.to_csv())?;
    if !args.quiet {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_run(args: &RunArgs, mode: RunMode) -> Result<(), HarnessError> {
    let cfg = load(&args.config, args)?;
    let dir = outdir(&cfg, args);
    let record = run_experiment(cfg, mode)?;
    let manifest = emit_artifacts(&record, &dir)?;
    if !args.quiet {
        println!(
            "{} file(s) under {}; {} variant(s), {} failure(s), {} ms",
            manifest.files.len(),
            dir.display(),
            record.variants.len(),
            manifest.failures.len(),
            record.wall_ms
        );
        for v in &record.variants {
            let mean_mse = if v.rows.is_empty() {
                f64::NAN
            } else {
                v.rows.iter().map(|r| r.mse).sum::<f64>() / v.rows.len() as f64
            };
            println!("  {}: {} run(s), mean mse {:.6}", v.label, v.rows.len(), mean_mse);
        }
    }
    if !record.failures.is_empty() {
        return Err(HarnessError::Runtime(format!(
            "{} variant(s) failed: {:?}",
            record.failures.len(),
            record.failures
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { config } => cmd_validate(config),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Solve(args) => cmd_run(args, RunMode::Solve),
        Command::Sweep(args) => cmd_run(args, RunMode::Sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mipriv::audit::{evaluate, export, EvalReport};
use mipriv::mi::EstimatorKind;
use mipriv::trainer::{
    latest_checkpoint, load_checkpoint, resume_training, run_training, TrainConfig,
    CHECKPOINT_STATE, PRESETS,
};
use mipriv::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mipriv",
    version,
    about = "Train and audit MI-constrained policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics and checkpoints.
    Train(TrainArgs),
    /// Roll out a checkpoint and report return and MI estimates.
    Eval(EvalArgs),
    /// Dump rollouts of a checkpoint to a trajectory CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Preset name or path to a TOML config.
    #[arg(long)]
    config: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch budget.
    #[arg(long)]
    epochs: Option<usize>,
    /// Run batch work on a single worker thread.
    #[arg(long)]
    deterministic: bool,
    /// Continue the run in --out from its latest checkpoint.
    #[arg(long, conflicts_with_all = ["config", "seed", "epochs"])]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory, or a run directory (its latest checkpoint is used).
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Comma-separated: empirical, discriminator, kde, exact.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "empirical,discriminator,kde,exact"
    )]
    estimators: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint directory, or a run directory (its latest checkpoint is used).
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
}

fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(CHECKPOINT_STATE).exists() {
        Ok(path.to_path_buf())
    } else {
        latest_checkpoint(path)
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let trainer = if args.resume {
        resume_training(&args.out)?
    } else {
        let name = args.config.ok_or_else(|| {
            Error::config(
                "config",
                format!(
                    "pass --config with a file or one of: {}",
                    PRESETS.join(", ")
                ),
            )
        })?;
        let mut cfg = TrainConfig::load(&name)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = args.epochs {
            cfg.epochs = epochs;
        }
        cfg.deterministic |= args.deterministic;
        cfg.validate()?;
        run_training(&cfg, &args.out)?
    };
    println!(
        "trained {} epochs on `{}`; outputs in {}",
        trainer.epoch,
        trainer.env.spec().name,
        args.out.display()
    );
    Ok(())
}

fn parse_estimators(names: &[String]) -> Result<Vec<EstimatorKind>> {
    names
        .iter()
        .map(|n| {
            EstimatorKind::parse(n.trim())
                .ok_or_else(|| Error::config("estimators", format!("unknown estimator `{n}`")))
        })
        .collect()
}

fn fmt_nats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_report(r: &EvalReport) {
    println!("env {}  episodes {}  seed {}", r.env, r.episodes, r.seed);
    println!("return {:.4} ± {:.4}", r.mean_return, r.return_stderr);
    if let Some(e) = &r.exact {
        println!("exact expected return {:.4}", e.expected_return);
        println!(
            "exact          avg {:.4}  per-t [{}]",
            e.episode_average(),
            fmt_nats(&e.per_timestep_nats)
        );
        if let Some(tr) = e.trajectory_nats {
            println!("exact I(τ_a,τ_x;τ_u) {tr:.4}");
        }
    }
    for m in &r.estimates {
        println!(
            "{:<14} avg {:.4}  per-t [{}]",
            m.estimator.name(),
            m.mean_per_timestep(),
            fmt_nats(&m.per_timestep_nats)
        );
    }
    for s in &r.skipped {
        println!("{:<14} skipped: {}", s.estimator.name(), s.reason);
    }
}

fn with_flag<T: Send>(deterministic: bool, f: impl FnOnce() -> T + Send) -> T {
    if deterministic {
        mipriv::par::pinned(f)
    } else {
        f()
    }
}

fn eval(args: EvalArgs) -> Result<()> {
    let estimators = parse_estimators(&args.estimators)?;
    let trainer = load_checkpoint(&resolve_checkpoint(&args.checkpoint)?)?;
    let report = with_flag(args.deterministic, || {
        evaluate(&trainer, args.episodes, args.seed, &estimators)
    })?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?
        );
    } else {
        print_report(&report);
    }
    Ok(())
}

fn export_cmd(args: ExportArgs) -> Result<()> {
    let trainer = load_checkpoint(&resolve_checkpoint(&args.checkpoint)?)?;
    let rows = with_flag(args.deterministic, || {
        export(&trainer, args.episodes, args.seed, &args.out)
    })?;
    println!("wrote {rows} rows to {}", args.out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

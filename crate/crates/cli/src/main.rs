use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gibbs_ustat::io::{write_chain_diagnostics, write_configurations};
use gibbs_ustat_cli::checks::run_checks;
use gibbs_ustat_cli::{load_config, partition_rows, run_clt, run_experiment, run_sampler, to_csv, with_workers, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "gibbs-ustat", version, about = "Moments of U-statistics of Gibbs point processes")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output file; defaults to the config's `out`, then stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the birth-death-move sampler and emit configurations.
    Sample {
        /// Also write per-step chain diagnostics as CSV.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Estimate every configured target by each available method.
    Estimate {
        /// Fill the wall_time_s column (makes output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Central-limit diagnostics of the rescaled model statistics.
    Clt,
    /// Family cardinality and coefficient table for a tuple of orders.
    Partitions {
        #[arg(long, value_delimiter = ',', required = true)]
        orders: Vec<usize>,
    },
    /// Run the exact invariant suites.
    Check,
}

fn config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let path = cli.config.as_ref().ok_or("this subcommand needs --config PATH")?;
    let mut cfg = load_config(path).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(target: Option<&Path>, text: &str) -> Result<(), String> {
    match target {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<bool, String> {
    let out_for = |cfg: Option<&ExperimentConfig>| cli.out.clone().or_else(|| cfg.and_then(|c| c.out.clone()));
    match &cli.command {
        Command::Sample { trace } => {
            let cfg = config(cli)?;
            let (model, out) = run_sampler(&cfg).map_err(|e| e.to_string())?;
            emit(out_for(Some(&cfg)).as_deref(), &write_configurations(model.kind.particle_kind(), &out.states))?;
            if let Some(t) = trace {
                emit(Some(t), &write_chain_diagnostics(&out.trace))?;
            }
            Ok(true)
        }
        Command::Estimate { timing } => {
            let cfg = config(cli)?;
            let rows = run_experiment(&cfg, RunOptions { timing: *timing }).map_err(|e| e.to_string())?;
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} [{}]: {}", r.target, r.method, r.error.as_deref().unwrap_or_default());
            }
            emit(out_for(Some(&cfg)).as_deref(), &to_csv(&rows))?;
            Ok(rows.iter().all(|r| r.error.is_none()))
        }
        Command::Clt => {
            let cfg = config(cli)?;
            let rows = run_clt(&cfg).map_err(|e| e.to_string())?;
            emit(out_for(Some(&cfg)).as_deref(), &to_csv(&rows))?;
            Ok(true)
        }
        Command::Partitions { orders } => {
            let rows = partition_rows(orders).map_err(|e| e.to_string())?;
            emit(out_for(None).as_deref(), &to_csv(&rows))?;
            Ok(true)
        }
        Command::Check => {
            let seed = match (&cli.config, cli.seed) {
                (_, Some(s)) => s,
                (Some(_), None) => config(cli)?.seed,
                (None, None) => 0,
            };
            let rows = run_checks(seed);
            for r in rows.iter().filter(|r| !r.passed) {
                eprintln!("FAILED {}: {}", r.check, r.detail);
            }
            emit(out_for(None).as_deref(), &to_csv(&rows))?;
            Ok(rows.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_workers(cli.workers, || run(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

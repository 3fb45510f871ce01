use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scdmhe::harness::{
    export_csv, export_trial, linear_oracle_checks, parse_estimators, run_monte_carlo, run_trial, summarize,
    BenchmarkConfig, SummaryTable,
};
use scdmhe::Error;

/// Quadrotor rangefinder-saturation benchmark for SCD-MHE and its baselines.
#[derive(Parser, Debug)]
#[command(name = "scdmhe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo run; writes summary, per-trial RMSE, trajectories and diagnostics.
    Run(Common),
    /// Single trial with full trajectory export.
    Trial {
        #[command(flatten)]
        common: Common,
        /// Trial index (selects the seed stream).
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Invariant suite on the linear-Gaussian oracle.
    Check {
        #[command(flatten)]
        common: Common,
        /// Allowed deviation from the reference Kalman filter.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file (`section.key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated subset of ekf,ukf,nmhe,scdmhe.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Run trials sequentially.
    #[arg(long)]
    serial: bool,
    /// Skip wall-clock timing; timing columns are written as `nan`.
    #[arg(long)]
    no_timing: bool,
}

impl Common {
    fn config(&self, base: BenchmarkConfig) -> Result<BenchmarkConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => BenchmarkConfig::load(path).map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })?,
            None => base,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(list) = &self.estimators {
            cfg.estimators = parse_estimators(list)?;
        }
        if let Some(h) = self.horizon {
            cfg.mhe.horizon = h;
        }
        if self.serial {
            cfg.parallel = false;
        }
        if self.no_timing {
            cfg.timing = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(table: &SummaryTable) {
    println!("{:<8} {:>12} {:>14} {:>12}", "", "RMSE z [m]", "RMSE zdot [m/s]", "ms/step");
    for row in &table.rows {
        println!(
            "{:<8} {:>12.4} {:>14.4} {:>12.4}",
            row.kind.name(),
            row.rmse[0],
            row.rmse[1],
            row.mean_step_ms
        );
    }
    if !table.failed.is_empty() {
        println!("{} of {} trials failed:", table.failed.len(), table.n_trials);
        for (i, why) in &table.failed {
            println!("  trial {i}: {why}");
        }
    }
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config(BenchmarkConfig::default())?;
            let result = run_monte_carlo(&cfg)?;
            export_csv(&cfg, &result, &common.out)?;
            print_summary(&result.summary);
            println!("wrote {}", common.out.display());
            Ok(true)
        }
        Command::Trial { common, index } => {
            let cfg = common.config(BenchmarkConfig::default())?;
            let trial = run_trial(&cfg, index)?;
            export_trial(&cfg, &trial, &common.out)?;
            let mut one = cfg.clone();
            one.trials = 1;
            print_summary(&summarize(&one, std::slice::from_ref(&trial)));
            println!("wrote {}", common.out.display());
            Ok(!trial.failed())
        }
        Command::Check { common, tolerance } => {
            let cfg = common.config(BenchmarkConfig::linear_oracle())?;
            let outcomes = linear_oracle_checks(&cfg, tolerance)?;
            let mut all = true;
            for o in &outcomes {
                println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                all &= o.passed;
            }
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::Config(_) | Error::InvalidArgument(_))) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

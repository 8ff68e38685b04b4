use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rlscale_core::experiment::{
    cmd_check, cmd_eval, cmd_fit, cmd_run, cmd_sweep, ExperimentConfig, SweepAxis,
};
use rlscale_core::lawfit::{FitOptions, ZeroLoss};
use rlscale_core::{Error, XAxis, YAxis};

/// GRPO scaling experiments on synthetic verifiable tasks.
#[derive(Debug, Parser)]
#[command(name = "rlscale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run from a config file.
    Run {
        #[command(flatten)]
        common: RunArgs,
    },
    /// Train one run per (value, replicate) along an axis.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// model_size, data_budget, reuse_tau or group_size.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        /// Defaults to `experiment.replicates` from the config.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Fit ln y = -k ln x + E per (model size, variant) group.
    Fit {
        /// Directory searched recursively for runs.
        runs: PathBuf,
        /// Output directory; defaults to the runs directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "x-axis", default_value = "flops")]
        x_axis: XAxis,
        #[arg(long, default_value = "loss")]
        y: YAxis,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Compare loss-vs-compute and loss-vs-data fits per group.
    Check {
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Evaluate a checkpoint on a JSON-lines task set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Response token budget; defaults to the longest reference response.
        #[arg(long)]
        max_len: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.experiment.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Fraction of each run's earliest evaluation points to skip.
    #[arg(long = "burn-in", default_value_t = 0.0)]
    burn_in: f64,
    /// Clamp zero losses to this floor instead of dropping them; `auto` uses 1/(2 R_max).
    #[arg(long)]
    loss_floor: Option<String>,
}

impl FitArgs {
    fn options(&self) -> Result<FitOptions, Error> {
        let zero_loss = match self.loss_floor.as_deref() {
            None => ZeroLoss::Exclude,
            Some("auto") => ZeroLoss::Floor(None),
            Some(v) => ZeroLoss::Floor(Some(v.parse().map_err(|_| {
                Error::Config(format!("--loss-floor expects a number or `auto`, got `{v}`"))
            })?)),
        };
        let options = FitOptions {
            burn_in: self.burn_in,
            zero_loss,
        };
        options.validate()?;
        Ok(options)
    }
}

/// Writes a line to stdout, propagating errors such as a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)?
    };
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<Error>().map_or(2, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.downcast_ref::<std::io::Error>()
        .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let s = cmd_run(&cfg)?;
            say!(
                "run {}: {} steps, N={}, C={:.4e}, D={}, L {:.4} -> {:.4}",
                s.run_id, s.steps, s.n_nonembed, s.cumulative_flops, s.unique_samples, s.initial_loss, s.final_loss
            );
            say!("{}", s.dir.display());
        }
        Command::Sweep {
            common,
            axis,
            values,
            replicates,
        } => {
            let cfg = common.load()?;
            let replicates = replicates.unwrap_or(cfg.experiment.replicates);
            let sweep = cmd_sweep(&cfg, axis, &values, replicates)?;
            for r in &sweep.runs {
                match (&r.final_loss, &r.error) {
                    (_, Some(e)) => say!("{} FAILED: {e}", r.run_id),
                    (Some(l), None) => say!("{} N={} final L {l:.4}", r.run_id, r.n_nonembed),
                    (None, None) => say!("{}", r.run_id),
                }
            }
            let failures = sweep.failures();
            say!("{} runs, {failures} failed", sweep.runs.len());
            if failures > 0 {
                anyhow::bail!(Error::Data(format!("{failures} sweep runs failed")));
            }
        }
        Command::Fit {
            runs,
            out,
            x_axis,
            y,
            fit,
        } => {
            let out = out.unwrap_or_else(|| runs.clone());
            let summary = cmd_fit(&runs, &out, x_axis, y, &fit.options()?)
                .with_context(|| format!("fitting runs under {}", runs.display()))?;
            if summary.dropped_partial_lines > 0 {
                eprintln!(
                    "warning: dropped {} partial trailing lines",
                    summary.dropped_partial_lines
                );
            }
            for row in &summary.rows {
                say!(
                    "n={} {}: k={:.4} E={:.4} r2={:.4} points={} excluded={}",
                    row.model_n, row.variant, row.k, row.e, row.r2, row.n_points, row.excluded
                );
            }
            for (key, e) in &summary.errors {
                eprintln!("warning: group {key}: {e}");
            }
            say!("{}", summary.table.display());
        }
        Command::Check { runs, out, fit } => {
            let out = out.unwrap_or_else(|| runs.clone());
            let rows = cmd_check(&runs, &out, &fit.options()?)?;
            if rows.is_empty() {
                eprintln!("warning: no runs under {}", runs.display());
            }
            for row in &rows {
                match &row.report {
                    Ok(r) => say!(
                        "{}: k_gap={:.3e} intercept_residual={:.3e} phi={:.4} dispersion={:.3e}{}",
                        row.key,
                        r.k_gap,
                        r.intercept_residual,
                        r.phi,
                        r.phi_dispersion,
                        if r.exact { " exact" } else { "" }
                    ),
                    Err(e) => eprintln!("warning: group {}: {e}", row.key),
                }
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            temperature,
            seed,
            max_len,
        } => {
            let r = cmd_eval(&checkpoint, &dataset, temperature, seed, max_len)?;
            say!("L={} R={} R_max={}", r.loss(), r.correct, r.total);
        }
    }
    Ok(())
}

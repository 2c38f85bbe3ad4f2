//! Configuration, file formats and subcommand logic behind the `gramswitch`
//! binary.

pub mod config;
pub mod output;
pub mod report;
pub mod verify;

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};

use gramswitch_core::supervisor::{run_closed_loop, RunFailure, RunOutput};
use gramswitch_core::tuning::{tune, TuningReport};

use config::RunConfig;
use output::RunSummary;

/// Runs the configured scenario.
pub fn simulate(cfg: &RunConfig) -> (Result<RunOutput, RunFailure>, std::time::Duration) {
    let start = Instant::now();
    let res = run_closed_loop(
        &cfg.system,
        &cfg.feedback,
        &cfg.lyapunov,
        &cfg.params,
        &cfg.initial,
        cfg.horizon,
        &cfg.integrator,
    );
    (res, start.elapsed())
}

/// Runs and writes `trace.csv`, `switches.csv` and `summary.txt` into
/// `dir`. A failed run still writes its partial trace before returning the
/// diagnostic.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let (res, wall) = simulate(cfg);
    match res {
        Ok(out) => {
            let summary = RunSummary::new(cfg, &out, wall);
            output::write_run(dir, cfg, &out, &summary, None)?;
            Ok(summary)
        }
        Err(fail) => {
            let msg = fail.error.to_string();
            let summary = RunSummary::new(cfg, &fail.partial, wall);
            output::write_run(dir, cfg, &fail.partial, &summary, Some(&msg))?;
            anyhow::bail!(
                "{}: {msg} (partial trace written to {})",
                cfg.source.display(),
                dir.display()
            )
        }
    }
}

pub fn tuning_report(cfg: &RunConfig) -> Result<TuningReport> {
    let (sets, opts) = cfg
        .tuning
        .as_ref()
        .context("the configuration has no [tuning] section")?;
    Ok(tune(
        &cfg.system,
        &cfg.feedback,
        &cfg.lyapunov,
        sets,
        &cfg.params,
        opts,
    )?)
}

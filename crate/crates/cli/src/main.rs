use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use gramswitch::config::RunConfig;
use gramswitch::verify::{run_check, Check, Outcome};
use gramswitch::{report, run_to_dir, simulate, tuning_report};

#[derive(Parser)]
#[command(
    name = "gramswitch",
    version,
    about = "Switched observer-based stabilization with Gramian monitoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file; repeat to run a batch concurrently.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Output directory (one sub-directory per config in a batch).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integration step override.
    #[arg(long)]
    step: Option<f64>,
    /// Horizon override.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write trace.csv, switches.csv and summary.txt.
    Run(Common),
    /// Simulate and run the cross-checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Checks to run; all of them by default.
        #[arg(long, value_enum)]
        check: Vec<Check>,
    },
    /// Print the tuning constants and the verdict on the configured gains.
    Tune(Common),
}

fn load(common: &Common, path: &Path) -> Result<RunConfig> {
    let out = match (&common.out, common.config.len()) {
        (Some(o), 1) => Some(o.clone()),
        (Some(o), _) => Some(o.join(path.file_stem().unwrap_or_default())),
        (None, _) => None,
    };
    RunConfig::load(path)?.with_overrides(common.step, common.horizon, out)
}

fn cmd_run(common: &Common) -> Result<bool> {
    let results: Vec<Result<String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = common
            .config
            .iter()
            .map(|p| {
                scope.spawn(move || -> Result<String> {
                    let cfg = load(common, p)?;
                    for w in &cfg.warnings {
                        eprintln!("warning: {}: {w}", p.display());
                    }
                    let summary = run_to_dir(&cfg, &cfg.outputs)?;
                    Ok(format!(
                        "{} -> {}\n{}",
                        p.display(),
                        cfg.outputs.display(),
                        summary.to_text()
                    ))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let total = results.len();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(text) => print!("{text}"),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        anyhow::bail!("{failed} of {total} runs failed");
    }
    Ok(true)
}

fn cmd_verify(common: &Common, checks: &[Check]) -> Result<bool> {
    let checks = if checks.is_empty() {
        Check::ALL.to_vec()
    } else {
        checks.to_vec()
    };
    let mut ok = true;
    let mut failed_runs = 0;
    for p in &common.config {
        let cfg = load(common, p)?;
        let (res, _) = simulate(&cfg);
        let out = match res {
            Ok(out) => out,
            Err(fail) => {
                eprintln!("error: {}: {}", p.display(), fail.error);
                failed_runs += 1;
                continue;
            }
        };
        println!("{}", p.display());
        for &c in &checks {
            let rep = run_check(c, &cfg, &out);
            if rep.outcome == Outcome::Fail {
                ok = false;
            }
            println!("  {rep}");
        }
    }
    if failed_runs > 0 {
        anyhow::bail!("{failed_runs} of {} runs failed", common.config.len());
    }
    Ok(ok)
}

fn cmd_tune(common: &Common) -> Result<bool> {
    for p in &common.config {
        let cfg = load(common, p)?;
        for w in &cfg.warnings {
            eprintln!("warning: {}: {w}", p.display());
        }
        let rep = tuning_report(&cfg)?;
        println!("{}", p.display());
        print!("{}", report::render(&rep));
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Verify { common, check } => cmd_verify(common, check),
        Command::Tune(c) => cmd_tune(c),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! CSV traces and run summaries.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};

use gramswitch_core::linalg::solve_lyapunov;
use gramswitch_core::supervisor::{RunOutput, SwitchLog, TraceRecord};

use crate::config::RunConfig;

/// Full round-trip precision.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names of `trace.csv` for an `n`-dimensional state.
pub fn trace_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "mode", "u", "theta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=n).map(|i| format!("xhat_{i}")));
    h.extend(
        [
            "eps_norm",
            "x_norm_sq",
            "V_x",
            "V_xhat",
            "S_min_eig",
            "S_max_eig",
            "g",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

pub const SWITCHES_HEADER: [&str; 4] = ["k", "t_k", "new_mode", "trigger"];

fn trace_row(r: &TraceRecord) -> Vec<String> {
    let mut row = vec![
        num(r.t),
        r.mode.as_str().to_string(),
        num(r.u),
        num(r.theta),
    ];
    row.extend(r.x.iter().map(|&v| num(v)));
    row.extend(r.xhat.iter().map(|&v| num(v)));
    let x_norm_sq: f64 = r.x.iter().map(|v| v * v).sum();
    row.push(num(r.eps_norm));
    row.push(num(x_norm_sq));
    row.push(num(r.v_x));
    row.push(num(r.v_xhat));
    row.push(num(r.s_min));
    row.push(num(r.s_max));
    row.push(r.g.map(num).unwrap_or_default());
    row
}

pub fn write_trace(path: &Path, n: usize, trace: &[TraceRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(trace_header(n))?;
    for r in trace {
        w.write_record(trace_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_switches(path: &Path, log: &SwitchLog) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SWITCHES_HEADER)?;
    for (k, ev) in log.rows().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            num(ev.t),
            ev.new_mode.as_str().to_string(),
            ev.trigger.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub switch_count: usize,
    pub final_mode: String,
    pub final_x_norm: f64,
    pub final_eps_norm: f64,
    pub s_infty_error: f64,
    pub wall_time: f64,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, out: &RunOutput, wall: Duration) -> Self {
        let last = out.trace.last();
        let s_inf = solve_lyapunov(&cfg.system.a(0.0), cfg.system.c(), cfg.params.beta).ok();
        let s_infty_error = match (last, s_inf) {
            (Some(r), Some(s)) => (&r.s - &s).frobenius_norm(),
            _ => f64::NAN,
        };
        Self {
            switch_count: out.log.switch_count(),
            final_mode: out.log.final_mode().as_str().to_string(),
            final_x_norm: last.map_or(f64::NAN, |r| r.x.iter().map(|v| v * v).sum::<f64>().sqrt()),
            final_eps_norm: last.map_or(f64::NAN, |r| r.eps_norm),
            s_infty_error,
            wall_time: wall.as_secs_f64(),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "switch_count = {}\nfinal_mode = {}\nfinal_x_norm = {}\nfinal_eps_norm = {}\ns_infty_error = {}\nwall_time = {:.3}\n",
            self.switch_count,
            self.final_mode,
            num(self.final_x_norm),
            num(self.final_eps_norm),
            num(self.s_infty_error),
            self.wall_time
        )
    }
}

/// Writes the three run artifacts into `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    out: &RunOutput,
    summary: &RunSummary,
    failure: Option<&str>,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_trace(&dir.join("trace.csv"), cfg.system.dim(), &out.trace)?;
    write_switches(&dir.join("switches.csv"), &out.log)?;
    let mut f = fs::File::create(dir.join("summary.txt"))?;
    f.write_all(summary.to_text().as_bytes())?;
    for w in &out.warnings {
        writeln!(f, "warning = {w}")?;
    }
    if let Some(msg) = failure {
        writeln!(f, "error = {msg}")?;
    }
    Ok(())
}

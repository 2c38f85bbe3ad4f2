//! Executable cross-checks on a completed run.

use std::fmt;

use clap::ValueEnum;

use gramswitch_core::gramian::gramian_oracle;
use gramswitch_core::linalg::smallest_eigenvalue;
use gramswitch_core::observer::{
    error_bound_check, frobenius_sup, lyapunov_decay_excess, trace_bound_check,
    variation_of_constants, ErrorSample,
};
use gramswitch_core::supervisor::{control_and_gain, ModeTag, RunOutput, TraceRecord};

use crate::config::RunConfig;

pub const GRAMIAN_TOL: f64 = 1e-6;
pub const VOC_TOL: f64 = 1e-5;
pub const ERROR_BOUND_TOL: f64 = 1e-9;
/// Quadrature step of the Gramian oracle.
pub const ORACLE_QUAD_STEP: f64 = 2.5e-5;
pub const ORACLE_PROBES: usize = 50;
/// Longest stretch compared against the closed-form gain.
pub const VOC_SPAN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Check {
    GramianOracle,
    VariationOfConstants,
    ErrorBound,
    TraceBound,
}

impl Check {
    pub const ALL: [Check; 4] = [
        Check::GramianOracle,
        Check::VariationOfConstants,
        Check::ErrorBound,
        Check::TraceBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::GramianOracle => "gramian_oracle",
            Check::VariationOfConstants => "variation_of_constants",
            Check::ErrorBound => "error_bound",
            Check::TraceBound => "trace_bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Inapplicable,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inapplicable => "bound inapplicable",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub check: Check,
    pub outcome: Outcome,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (worst = {:.3e}, tolerance = {:.1e}) {}",
            self.check.name(),
            self.outcome,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

fn verdict(worst: f64, tol: f64) -> Outcome {
    if worst <= tol {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

/// Records with `lo <= t <= hi`.
fn records_in(trace: &[TraceRecord], lo: f64, hi: f64) -> &[TraceRecord] {
    let a = trace.partition_point(|r| r.t < lo);
    let b = trace.partition_point(|r| r.t <= hi);
    &trace[a..b.max(a)]
}

pub fn check_gramian_oracle(
    cfg: &RunConfig,
    out: &RunOutput,
    probes: usize,
    quad_step: f64,
) -> CheckReport {
    let with_g: Vec<&TraceRecord> = out.trace.iter().filter(|r| r.gram.is_some()).collect();
    let shift = cfg.params.shift();
    let window = cfg.params.window;
    let mut worst: f64 = 0.0;
    let mut used = 0;
    if !with_g.is_empty() {
        let count = probes.min(with_g.len());
        for k in 0..count {
            let idx = if count == 1 {
                0
            } else {
                k * (with_g.len() - 1) / (count - 1)
            };
            let r = with_g[idx];
            let g_ode = r.gram.as_ref().expect("filtered");
            let g_or = gramian_oracle(
                &cfg.system,
                &out.history,
                r.t - window,
                r.t,
                shift,
                quad_step,
            );
            let rel =
                (g_ode - &g_or).frobenius_norm() / g_or.frobenius_norm().max(f64::MIN_POSITIVE);
            let e_or = smallest_eigenvalue(&g_or).unwrap_or(f64::NAN);
            let e_ode = r.g.unwrap_or(f64::NAN);
            let eig = (e_ode - e_or).abs() / (1.0 + e_or.abs());
            worst = worst.max(rel).max(eig);
            if !(rel.is_finite() && eig.is_finite()) {
                worst = f64::INFINITY;
            }
            used += 1;
        }
    }
    CheckReport {
        check: Check::GramianOracle,
        outcome: if used == 0 {
            Outcome::Inapplicable
        } else {
            verdict(worst, GRAMIAN_TOL)
        },
        worst,
        tolerance: GRAMIAN_TOL,
        detail: format!("[{used} probe times, relative Frobenius and eigenvalue error]"),
    }
}

/// Compares the closed-form gain to the integrated one on the first
/// `span` of every mode.
pub fn check_variation_of_constants(
    cfg: &RunConfig,
    out: &RunOutput,
    span: f64,
    quad_step: f64,
) -> CheckReport {
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for (tag, start, end) in out.log.intervals() {
        let recs = records_in(&out.trace, start, (start + span).min(end));
        let (Some(first), Some(last)) = (recs.first(), recs.last()) else {
            continue;
        };
        if last.t <= first.t {
            continue;
        }
        let (_, theta) = control_and_gain(tag, &first.xhat, &cfg.feedback, &cfg.params);
        let voc = variation_of_constants(
            &cfg.system,
            &out.history,
            &first.s,
            theta,
            first.t,
            last.t,
            quad_step,
        );
        let rel = (&voc - &last.s).frobenius_norm() / last.s.frobenius_norm();
        worst = worst.max(if rel.is_finite() { rel } else { f64::INFINITY });
        used += 1;
    }
    CheckReport {
        check: Check::VariationOfConstants,
        outcome: if used == 0 {
            Outcome::Inapplicable
        } else {
            verdict(worst, VOC_TOL)
        },
        worst,
        tolerance: VOC_TOL,
        detail: format!("[{used} mode stretches of at most {span}]"),
    }
}

fn mode_samples(recs: &[TraceRecord]) -> Vec<ErrorSample> {
    recs.iter()
        .map(|r| ErrorSample::new(r.t, &r.x, &r.xhat, r.s.clone()))
        .collect()
}

pub fn check_error_bound(cfg: &RunConfig, out: &RunOutput) -> CheckReport {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_decay = f64::NEG_INFINITY;
    let mut used = 0;
    for (tag, start, end) in out.log.intervals() {
        let recs = records_in(&out.trace, start, end);
        if recs.is_empty() {
            continue;
        }
        let theta = match tag {
            ModeTag::Observation => cfg.params.alpha,
            ModeTag::Stabilization => cfg.params.beta,
        };
        let samples = mode_samples(recs);
        worst = worst.max(error_bound_check(&samples, theta));
        worst_decay = worst_decay.max(lyapunov_decay_excess(&samples, theta));
        used += 1;
    }
    let combined = worst.max(worst_decay);
    CheckReport {
        check: Check::ErrorBound,
        outcome: if used == 0 {
            Outcome::Inapplicable
        } else {
            verdict(combined, ERROR_BOUND_TOL)
        },
        worst: combined,
        tolerance: ERROR_BOUND_TOL,
        detail: format!("[{used} modes; bound slack {worst:.3e}, decay excess {worst_decay:.3e}]"),
    }
}

pub fn check_trace_bound(cfg: &RunConfig, out: &RunOutput) -> CheckReport {
    let mut applicable = 0;
    let mut skipped = 0;
    let mut failed = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    for (tag, start, end) in out.log.intervals() {
        let recs = records_in(&out.trace, start, end);
        if recs.is_empty() {
            continue;
        }
        let theta = match tag {
            ModeTag::Observation => cfg.params.alpha,
            ModeTag::Stabilization => cfg.params.beta,
        };
        // inputs applied inside the mode; the end record already carries the next mode's input
        let inside =
            &recs[..recs.len() - usize::from(recs.len() > 1 && recs[recs.len() - 1].mode != tag)];
        let a_f = frobenius_sup(&cfg.system, inside.iter().map(|r| r.u));
        let gains: Vec<_> = recs.iter().map(|r| r.s.clone()).collect();
        match trace_bound_check(&gains, cfg.system.c(), theta, a_f) {
            Ok(ok) => {
                applicable += 1;
                if !ok {
                    failed += 1;
                }
                let c2 = cfg.system.c().frobenius_norm().powi(2);
                let cap = gains[0].trace().max(c2 / (theta - 2.0 * a_f));
                let peak = gains
                    .iter()
                    .map(|s| s.trace())
                    .fold(f64::NEG_INFINITY, f64::max);
                worst_margin = worst_margin.max(peak / cap - 1.0);
            }
            Err(_) => skipped += 1,
        }
    }
    let outcome = if applicable == 0 {
        Outcome::Inapplicable
    } else if failed > 0 {
        Outcome::Fail
    } else {
        Outcome::Pass
    };
    CheckReport {
        check: Check::TraceBound,
        outcome,
        worst: worst_margin,
        tolerance: 0.0,
        detail: format!(
            "[{applicable} modes checked, {skipped} with theta <= 2 a_F, {failed} violations]"
        ),
    }
}

pub fn run_check(check: Check, cfg: &RunConfig, out: &RunOutput) -> CheckReport {
    match check {
        Check::GramianOracle => check_gramian_oracle(cfg, out, ORACLE_PROBES, ORACLE_QUAD_STEP),
        Check::VariationOfConstants => {
            check_variation_of_constants(cfg, out, VOC_SPAN, cfg.integrator.step)
        }
        Check::ErrorBound => check_error_bound(cfg, out),
        Check::TraceBound => check_trace_bound(cfg, out),
    }
}

//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use gramswitch_core::gramian::GammaConvention;
use gramswitch_core::integrator::IntegratorConfig;
use gramswitch_core::linalg::{is_positive_definite, Matrix, SymMatrix};
use gramswitch_core::model::{
    oscillator_with_saturation, Feedback, LyapunovFn, SystemDef, DEFAULT_U_BAR,
};
use gramswitch_core::supervisor::{InitialState, SwitchParams};
use gramswitch_core::tuning::{CompactSets, MonteCarlo, TuningOptions};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub feedback: Option<FeedbackSection>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSection>,
    pub switching: SwitchingSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    pub initial: InitialSection,
    pub run: RunSection,
    #[serde(default)]
    pub tuning: Option<TuningSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    pub a0: Option<Vec<Vec<f64>>>,
    pub a1: Option<Vec<Vec<f64>>>,
    pub b1: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    pub k: Vec<f64>,
    #[serde(default = "default_u_bar")]
    pub u_bar: f64,
}

fn default_u_bar() -> f64 {
    DEFAULT_U_BAR
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSection {
    pub t_obs: f64,
    pub t_stab: f64,
    pub window: f64,
    pub g_min: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub gamma_convention: Convention,
    #[serde(default)]
    pub allow_uncertified_window: bool,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Forgetting,
    Shift,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_event_tol")]
    pub event_tol: f64,
}

fn default_step() -> f64 {
    IntegratorConfig::default().step
}

fn default_event_tol() -> f64 {
    IntegratorConfig::default().event_tol
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            step: default_step(),
            event_tol: default_event_tol(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub s0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub r0: f64,
    pub xhat_radius: f64,
    pub s_trace_max: f64,
    pub theta_floor: Option<f64>,
    #[serde(default)]
    pub monte_carlo: bool,
    pub seed: Option<u64>,
}

/// A validated configuration, ready to run.
pub struct RunConfig {
    pub source: PathBuf,
    pub system: SystemDef,
    pub feedback: Feedback,
    pub lyapunov: LyapunovFn,
    pub params: SwitchParams,
    pub integrator: IntegratorConfig,
    pub initial: InitialState,
    pub horizon: f64,
    pub outputs: PathBuf,
    pub tuning: Option<(CompactSets, TuningOptions)>,
    pub warnings: Vec<String>,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&refs)
        .with_context(|| format!("{field}: rows must be non-empty and of equal length"))
}

fn sym_matrix(field: &str, rows: &[Vec<f64>]) -> Result<SymMatrix> {
    let m = matrix(field, rows)?;
    if !m.is_square() {
        bail!("{field}: must be square");
    }
    let s = SymMatrix::from_matrix(&m);
    if (&s.clone().into_matrix() - &m).frobenius_norm() > 1e-12 * (1.0 + m.frobenius_norm()) {
        bail!("{field}: must be symmetric");
    }
    Ok(s)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let raw: RawConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::from_raw(raw, path.to_path_buf())
    }

    pub fn from_raw(raw: RawConfig, source: PathBuf) -> Result<Self> {
        let sw = &raw.switching;
        let u_bar = raw.feedback.as_ref().map_or(DEFAULT_U_BAR, |f| f.u_bar);
        let (system, default_fb, default_v) = match raw.system.name.as_str() {
            "oscillator" => {
                let (s, f, v) = oscillator_with_saturation(u_bar);
                (s, Some(f), Some(v))
            }
            "bilinear" => {
                let req = |name: &str, v: &Option<Vec<Vec<f64>>>| -> Result<Matrix> {
                    match v {
                        Some(rows) => matrix(&format!("system.{name}"), rows),
                        None => bail!("system.{name}: required for a bilinear system"),
                    }
                };
                let a0 = req("a0", &raw.system.a0)?;
                let a1 = req("a1", &raw.system.a1)?;
                let b1 = raw
                    .system
                    .b1
                    .clone()
                    .context("system.b1: required for a bilinear system")?;
                let c = raw
                    .system
                    .c
                    .clone()
                    .context("system.c: required for a bilinear system")?;
                let s = SystemDef::bilinear(a0, a1, b1, Matrix::row(&c))
                    .map_err(|e| anyhow::anyhow!("system: {e}"))?;
                (s, None, None)
            }
            other => bail!(
                "system.name: unknown system {other:?} (expected \"oscillator\" or \"bilinear\")"
            ),
        };
        let n = system.dim();

        let feedback = match (&raw.feedback, default_fb) {
            (Some(f), _) => {
                if f.k.len() != n {
                    bail!("feedback.k: expected {n} gains, found {}", f.k.len());
                }
                Feedback::linear(f.k.clone(), f.u_bar)
                    .map_err(|e| anyhow::anyhow!("feedback: {e}"))?
            }
            (None, Some(f)) => f,
            (None, None) => bail!("feedback: required for a bilinear system"),
        };
        let lyapunov = match (&raw.lyapunov, default_v) {
            (Some(l), _) => {
                let p = sym_matrix("lyapunov.p", &l.p)?;
                if p.dim() != n {
                    bail!("lyapunov.p: expected a {n}x{n} matrix");
                }
                LyapunovFn::quadratic(p).map_err(|e| anyhow::anyhow!("lyapunov.p: {e}"))?
            }
            (None, Some(v)) => v,
            (None, None) => LyapunovFn::quadratic(SymMatrix::identity(n))
                .expect("identity is positive definite"),
        };

        let params = SwitchParams {
            t_obs: sw.t_obs,
            t_stab: sw.t_stab,
            window: sw.window,
            g_min: sw.g_min,
            alpha: sw.alpha,
            beta: sw.beta,
            gamma: sw.gamma,
            gamma_convention: match sw.gamma_convention {
                Convention::Forgetting => GammaConvention::Forgetting,
                Convention::Shift => GammaConvention::Shift,
            },
            allow_uncertified_window: sw.allow_uncertified_window,
        };
        let warnings = params
            .validate()
            .map_err(|e| anyhow::anyhow!("switching: {e}"))?;

        let integrator = IntegratorConfig {
            step: raw.integrator.step,
            event_tol: raw.integrator.event_tol,
            ..Default::default()
        };
        integrator
            .validate(params.window)
            .map_err(|e| anyhow::anyhow!("integrator: {e}"))?;

        let init = &raw.initial;
        if init.x0.len() != n {
            bail!("initial.x0: expected {n} entries, found {}", init.x0.len());
        }
        if init.xhat0.len() != n {
            bail!(
                "initial.xhat0: expected {n} entries, found {}",
                init.xhat0.len()
            );
        }
        let s0 = match &init.s0 {
            Some(rows) => sym_matrix("initial.s0", rows)?,
            None => SymMatrix::identity(n),
        };
        if s0.dim() != n {
            bail!("initial.s0: expected a {n}x{n} matrix");
        }
        if !is_positive_definite(&s0, 0.0) {
            bail!("initial.s0: must be positive definite");
        }
        if !(raw.run.horizon >= 0.0 && raw.run.horizon.is_finite()) {
            bail!("run.horizon: must be a nonnegative number");
        }

        let tuning = raw.tuning.as_ref().map(|t| {
            (
                CompactSets {
                    r0: t.r0,
                    xhat_radius: t.xhat_radius,
                    s_trace_max: t.s_trace_max,
                },
                TuningOptions {
                    theta_floor: t.theta_floor,
                    monte_carlo: t.monte_carlo.then(|| MonteCarlo {
                        seed: t.seed.unwrap_or(7),
                        ..Default::default()
                    }),
                    input_grid: None,
                },
            )
        });

        Ok(Self {
            source,
            system,
            feedback,
            lyapunov,
            params,
            integrator,
            initial: InitialState {
                x0: init.x0.clone(),
                xhat0: init.xhat0.clone(),
                s0,
            },
            horizon: raw.run.horizon,
            outputs: raw.run.outputs.clone(),
            tuning,
            warnings,
        })
    }

    /// Applies command-line overrides and re-checks the step.
    pub fn with_overrides(
        mut self,
        step: Option<f64>,
        horizon: Option<f64>,
        out: Option<PathBuf>,
    ) -> Result<Self> {
        if let Some(h) = step {
            self.integrator.step = h;
            self.integrator
                .validate(self.params.window)
                .map_err(|e| anyhow::anyhow!("--step: {e}"))?;
        }
        if let Some(t) = horizon {
            if !(t >= 0.0 && t.is_finite()) {
                bail!("--horizon: must be a nonnegative number");
            }
            self.horizon = t;
        }
        if let Some(o) = out {
            self.outputs = o;
        }
        Ok(self)
    }
}

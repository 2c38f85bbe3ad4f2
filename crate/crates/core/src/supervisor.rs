//! Mode supervisor and closed-loop driver.
//!
//! Observation modes last exactly `t_obs` and apply `(u, θ) = (0, α)`.
//! Stabilization modes apply `(λ(x̂), β)`, last at least `t_stab`, and end at
//! the first time the smallest window-Gramian eigenvalue drops to `g_min`.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::gramian::{step_gramian, GammaConvention, GramianError, GramianState, Phase};
use crate::integrator::{
    locate_first_event, try_rk_step, HistoryBuffer, IntegratorConfig, IntegratorError,
};
use crate::linalg::{
    norm, smallest_eigenvalue, sub_vec, symmetric_eigenvalues, LinalgError, SymMatrix,
};
use crate::model::{Feedback, LyapunovFn, SystemDef};
use crate::observer::{observer_rhs, ObserverError, GAIN_COLLAPSE_EIG};

/// Sub-brackets scanned before bisecting a Gramian event.
const EVENT_SCAN: usize = 16;
/// States larger than this are treated as a blow-up.
const DIVERGENCE_LIMIT: f64 = 1e100;

#[derive(Clone, Debug, PartialEq)]
pub enum SupervisorError {
    InvalidParams(String),
    GainCollapse { t: f64, min_eig: f64 },
    BlowUp { t: f64 },
    Integrator(IntegratorError),
    Gramian(GramianError),
    Linalg(LinalgError),
}

impl fmt::Display for SupervisorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidParams(why) => write!(f, "invalid parameters: {why}"),
            Self::GainCollapse { t, min_eig } => {
                write!(
                    f,
                    "gain collapse at t = {t} (smallest eigenvalue of S is {min_eig:e})"
                )
            }
            Self::BlowUp { t } => write!(f, "blow-up at t = {t}"),
            Self::Integrator(e) => write!(f, "{e}"),
            Self::Gramian(e) => write!(f, "{e}"),
            Self::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SupervisorError {}

impl From<IntegratorError> for SupervisorError {
    fn from(e: IntegratorError) -> Self {
        match e {
            IntegratorError::BlowUp { t } => Self::BlowUp { t },
            e => Self::Integrator(e),
        }
    }
}

impl From<GramianError> for SupervisorError {
    fn from(e: GramianError) -> Self {
        match e {
            GramianError::Integrator(e) => e.into(),
            e => Self::Gramian(e),
        }
    }
}

impl From<LinalgError> for SupervisorError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchParams {
    pub t_obs: f64,
    pub t_stab: f64,
    /// Gramian window `T`.
    pub window: f64,
    pub g_min: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_convention: GammaConvention,
    /// Accept `T >= min(t_obs, t_stab)/3` with a warning instead of an error.
    pub allow_uncertified_window: bool,
}

impl SwitchParams {
    /// The parameter set of the oscillator experiment.
    pub fn reference() -> Self {
        Self {
            t_obs: 2.0,
            t_stab: 3.0,
            window: 1.0,
            g_min: 5e-4,
            alpha: 1.0,
            beta: 1.0,
            gamma: 10.0,
            gamma_convention: GammaConvention::Forgetting,
            allow_uncertified_window: true,
        }
    }

    /// Shift applied to `A` in the monitored Gramian.
    pub fn shift(&self) -> f64 {
        self.gamma_convention.shift(self.gamma)
    }

    /// Checks the parameter invariants. Returns warnings that were
    /// overridden by `allow_uncertified_window`.
    pub fn validate(&self) -> Result<Vec<String>, SupervisorError> {
        let bad = |why: &str| Err(SupervisorError::InvalidParams(why.into()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.t_obs) {
            return bad("t_obs must be positive");
        }
        if !positive(self.t_stab) {
            return bad("t_stab must be positive");
        }
        if !positive(self.window) {
            return bad("window T must be positive");
        }
        if !positive(self.g_min) {
            return bad("g_min must be positive");
        }
        if !positive(self.alpha) {
            return bad("alpha must be positive");
        }
        if !positive(self.beta) {
            return bad("beta must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be nonnegative");
        }
        if self.window >= self.t_stab {
            return bad("window T must be shorter than t_stab");
        }
        let mut warnings = Vec::new();
        if self.window * 3.0 >= self.t_obs.min(self.t_stab) {
            if self.allow_uncertified_window {
                warnings.push("T outside certified range (T >= min(t_obs, t_stab)/3)".into());
            } else {
                return bad("T outside certified range (T >= min(t_obs, t_stab)/3)");
            }
        }
        Ok(warnings)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeTag {
    Observation,
    Stabilization,
}

impl ModeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Observation => "observation",
            Self::Stabilization => "stabilization",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Self::Observation => Self::Stabilization,
            Self::Stabilization => Self::Observation,
        }
    }
}

impl fmt::Display for ModeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub tag: ModeTag,
    pub started_at: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trigger {
    Timer,
    GramEigenvalue,
    NoneFinal,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Timer => "timer",
            Self::GramEigenvalue => "gram_eigenvalue",
            Self::NoneFinal => "none_final",
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub new_mode: ModeTag,
    pub trigger: Trigger,
}

/// Realized switching times. The run always starts in observation at 0;
/// `closing` marks the mode in force at the end of the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchLog {
    pub switches: Vec<SwitchEvent>,
    pub closing: SwitchEvent,
}

impl SwitchLog {
    pub fn switch_count(&self) -> usize {
        self.switches.len()
    }

    pub fn final_mode(&self) -> ModeTag {
        self.closing.new_mode
    }

    /// Switches followed by the closing row.
    pub fn rows(&self) -> impl Iterator<Item = &SwitchEvent> {
        self.switches.iter().chain(core::iter::once(&self.closing))
    }

    /// Start and end of every mode `(tag, t_start, t_end)`.
    pub fn intervals(&self) -> Vec<(ModeTag, f64, f64)> {
        let mut out = Vec::new();
        let mut start = (ModeTag::Observation, 0.0);
        for ev in &self.switches {
            out.push((start.0, start.1, ev.t));
            start = (ev.new_mode, ev.t);
        }
        out.push((start.0, start.1, self.closing.t));
        out
    }
}

/// Decision of the mode law at a given time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    Stay,
    SwitchNow,
    SwitchAt(f64),
}

/// `(u, θ)` for the given mode.
pub fn control_and_gain(
    mode: ModeTag,
    xhat: &[f64],
    fb: &Feedback,
    p: &SwitchParams,
) -> (f64, f64) {
    match mode {
        ModeTag::Observation => (0.0, p.alpha),
        ModeTag::Stabilization => (fb.eval(xhat), p.beta),
    }
}

/// The mode law, closed threshold: `g <= g_min` after the dwell switches.
pub fn next_transition(mode: &Mode, t: f64, g_now: Option<f64>, p: &SwitchParams) -> Decision {
    match mode.tag {
        ModeTag::Observation => {
            let end = mode.started_at + p.t_obs;
            if t >= end {
                Decision::SwitchNow
            } else {
                Decision::SwitchAt(end)
            }
        }
        ModeTag::Stabilization => {
            if t < mode.started_at + p.t_stab {
                return Decision::Stay;
            }
            match g_now {
                Some(g) if g <= p.g_min => Decision::SwitchNow,
                _ => Decision::Stay,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub mode: ModeTag,
    pub u: f64,
    pub theta: f64,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub eps_norm: f64,
    pub s: SymMatrix,
    pub s_min: f64,
    pub s_max: f64,
    /// Smallest eigenvalue of the monitored Gramian, from `t = T` on.
    pub g: Option<f64>,
    pub gram: Option<SymMatrix>,
    pub v_x: f64,
    pub v_xhat: f64,
}

impl TraceRecord {
    pub fn eps(&self) -> Vec<f64> {
        sub_vec(&self.xhat, &self.x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub s0: SymMatrix,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub log: SwitchLog,
    /// Every realized input sample, with jumps at switch times.
    pub history: HistoryBuffer,
    pub warnings: Vec<String>,
}

/// A failed run: the diagnostic and everything simulated up to it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: SupervisorError,
    pub partial: Box<RunOutput>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl core::error::Error for RunFailure {}

struct PlantState {
    x: Vec<f64>,
    xhat: Vec<f64>,
    s: SymMatrix,
}

struct Loop<'a> {
    sys: &'a SystemDef,
    fb: &'a Feedback,
    v: &'a LyapunovFn,
    p: &'a SwitchParams,
}

impl Loop<'_> {
    fn plant_step(
        &self,
        mode: ModeTag,
        theta: f64,
        st: &PlantState,
        t: f64,
        dt: f64,
    ) -> Result<PlantState, SupervisorError> {
        let n = self.sys.dim();
        let mut packed = st.x.clone();
        packed.extend_from_slice(&st.xhat);
        packed.extend_from_slice(st.s.as_slice());
        let next = try_rk_step::<SupervisorError, _>(
            |ts, v| {
                let (x, rest) = v.split_at(n);
                let (xhat, s) = rest.split_at(n);
                let s = SymMatrix::from_row_major(n, s.to_vec())?;
                let (u, _) = control_and_gain(mode, xhat, self.fb, self.p);
                let dx = self.sys.vector_field(u, x);
                let (dxhat, ds) =
                    observer_rhs(self.sys, u, theta, x, xhat, &s).map_err(|e| match e {
                        ObserverError::GainCollapse { min_eig } => {
                            SupervisorError::GainCollapse { t: ts, min_eig }
                        }
                        ObserverError::Linalg(e) => e.into(),
                        e => SupervisorError::InvalidParams(alloc::format!("{e}")),
                    })?;
                let mut out = dx;
                out.extend(dxhat);
                out.extend_from_slice(ds.as_slice());
                Ok(out)
            },
            t,
            &packed,
            dt,
        )?;
        if next.iter().any(|v| v.abs() > DIVERGENCE_LIMIT) {
            return Err(SupervisorError::BlowUp { t: t + dt });
        }
        let s = SymMatrix::from_row_major(n, next[2 * n..].to_vec())?;
        let min_eig = smallest_eigenvalue(&s)?;
        if !(min_eig >= GAIN_COLLAPSE_EIG) {
            return Err(SupervisorError::GainCollapse { t: t + dt, min_eig });
        }
        Ok(PlantState {
            x: next[..n].to_vec(),
            xhat: next[n..2 * n].to_vec(),
            s,
        })
    }

    fn record(
        &self,
        t: f64,
        mode: ModeTag,
        st: &PlantState,
        gram: &GramianState,
    ) -> Result<TraceRecord, SupervisorError> {
        let (u, theta) = control_and_gain(mode, &st.xhat, self.fb, self.p);
        let eig = symmetric_eigenvalues(&st.s)?;
        let (g, g_mat) = match gram.phase {
            Phase::Sliding => (Some(smallest_eigenvalue(&gram.g)?), Some(gram.g.clone())),
            Phase::Startup => (None, None),
        };
        Ok(TraceRecord {
            t,
            mode,
            u,
            theta,
            eps_norm: norm(&sub_vec(&st.xhat, &st.x)),
            x: st.x.clone(),
            xhat: st.xhat.clone(),
            s: st.s.clone(),
            s_min: eig[0],
            s_max: eig[eig.len() - 1],
            g,
            gram: g_mat,
            v_x: self.v.value(&st.x),
            v_xhat: self.v.value(&st.xhat),
        })
    }
}

fn check_inputs(sys: &SystemDef, init: &InitialState, horizon: f64) -> Result<(), SupervisorError> {
    let n = sys.dim();
    if init.x0.len() != n || init.xhat0.len() != n || init.s0.dim() != n {
        return Err(SupervisorError::InvalidParams(
            "initial state dimensions do not match the system".into(),
        ));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SupervisorError::InvalidParams(
            "horizon must be nonnegative".into(),
        ));
    }
    if !crate::linalg::is_positive_definite(&init.s0, 0.0) {
        return Err(SupervisorError::InvalidParams(
            "S0 must be positive definite".into(),
        ));
    }
    Ok(())
}

/// Simulates the switched closed loop on `[0, horizon]`.
pub fn run_closed_loop(
    sys: &SystemDef,
    fb: &Feedback,
    v: &LyapunovFn,
    p: &SwitchParams,
    init: &InitialState,
    horizon: f64,
    integ: &IntegratorConfig,
) -> Result<RunOutput, RunFailure> {
    let empty = |error: SupervisorError| RunFailure {
        error,
        partial: Box::new(RunOutput {
            trace: Vec::new(),
            log: SwitchLog {
                switches: Vec::new(),
                closing: SwitchEvent {
                    t: 0.0,
                    new_mode: ModeTag::Observation,
                    trigger: Trigger::NoneFinal,
                },
            },
            history: HistoryBuffer::unbounded(p.window),
            warnings: Vec::new(),
        }),
    };
    let warnings = p.validate().map_err(empty)?;
    integ.validate(p.window).map_err(|e| empty(e.into()))?;
    check_inputs(sys, init, horizon).map_err(empty)?;

    let lp = Loop { sys, fb, v, p };
    let mut out = RunOutput {
        trace: Vec::new(),
        log: SwitchLog {
            switches: Vec::new(),
            closing: SwitchEvent {
                t: 0.0,
                new_mode: ModeTag::Observation,
                trigger: Trigger::NoneFinal,
            },
        },
        history: HistoryBuffer::unbounded(p.window),
        warnings,
    };
    let result = drive(&lp, init, horizon, integ, &mut out);
    match result {
        Ok(()) => Ok(out),
        Err(error) => Err(RunFailure {
            error,
            partial: Box::new(out),
        }),
    }
}

fn drive(
    lp: &Loop<'_>,
    init: &InitialState,
    horizon: f64,
    integ: &IntegratorConfig,
    out: &mut RunOutput,
) -> Result<(), SupervisorError> {
    let p = lp.p;
    let h = integ.step;
    let snap = 1e-9 * h;
    let n = lp.sys.dim();
    let mut t = 0.0;
    let mut mode = Mode {
        tag: ModeTag::Observation,
        started_at: 0.0,
    };
    let mut st = PlantState {
        x: init.x0.clone(),
        xhat: init.xhat0.clone(),
        s: init.s0.clone(),
    };
    let mut gram = GramianState::new(n, p.shift());
    let (u0, _) = control_and_gain(mode.tag, &st.xhat, lp.fb, p);
    out.history.push(0.0, u0)?;
    out.trace.push(lp.record(t, mode.tag, &st, &gram)?);
    out.log.closing = SwitchEvent {
        t: 0.0,
        new_mode: mode.tag,
        trigger: Trigger::NoneFinal,
    };

    while t < horizon - snap {
        let mode_end = match mode.tag {
            ModeTag::Observation => mode.started_at + p.t_obs,
            ModeTag::Stabilization => mode.started_at + p.t_stab,
        };
        let dwell_end = mode.started_at + p.t_stab;
        let mut bp = horizon;
        let candidates = [p.window, mode_end]
            .into_iter()
            .chain(out.log.switches.iter().map(|e| e.t + p.window));
        for c in candidates {
            if c > t + snap && c < bp {
                bp = c;
            }
        }
        let (dt, t_new) = if bp - t <= h * (1.0 + 1e-6) {
            (bp - t, bp)
        } else {
            (h, t + h)
        };

        let (_, theta) = control_and_gain(mode.tag, &st.xhat, lp.fb, p);
        let u_a = out.history.value_at(t)?;
        let mut next = lp.plant_step(mode.tag, theta, &st, t, dt)?;
        let (mut u_b, _) = control_and_gain(mode.tag, &next.xhat, lp.fb, p);
        let mut next_gram = step_gramian(lp.sys, &gram, &out.history, p.window, t, dt, u_a, u_b)?;
        let mut t_next = t_new;
        let mut pending: Option<Trigger> = None;

        let monitoring = mode.tag == ModeTag::Stabilization && t >= dwell_end - snap;
        if monitoring
            && next_gram.phase == Phase::Sliding
            && smallest_eigenvalue(&next_gram.g)? <= p.g_min
        {
            let hist = &out.history;
            let probe = |tau: f64| -> Result<(PlantState, GramianState, f64), SupervisorError> {
                let ps = lp.plant_step(mode.tag, theta, &st, t, tau - t)?;
                let (u_tau, _) = control_and_gain(mode.tag, &ps.xhat, lp.fb, p);
                let gs = step_gramian(lp.sys, &gram, hist, p.window, t, tau - t, u_a, u_tau)?;
                Ok((ps, gs, u_tau))
            };
            let g_at = |tau: f64| -> Result<f64, SupervisorError> {
                let (_, gs, _) = probe(tau)?;
                Ok(smallest_eigenvalue(&gs.g)?)
            };
            let t_star = locate_first_event(g_at, t, t_new, p.g_min, integ.event_tol, EVENT_SCAN)?;
            let (ps, gs, u_tau) = probe(t_star)?;
            next = ps;
            next_gram = gs;
            u_b = u_tau;
            t_next = t_star;
            pending = Some(Trigger::GramEigenvalue);
        }

        out.history.push(t_next, u_b)?;
        t = t_next;
        st = next;
        gram = next_gram;

        if pending.is_none() {
            let g_now = match gram.phase {
                Phase::Sliding => Some(smallest_eigenvalue(&gram.g)?),
                Phase::Startup => None,
            };
            // the dwell end is a breakpoint, so the timer test is exact
            let at_dwell_end = (t - dwell_end).abs() <= snap;
            let decision = match mode.tag {
                ModeTag::Observation if (t - mode_end).abs() <= snap => Decision::SwitchNow,
                ModeTag::Observation => Decision::Stay,
                ModeTag::Stabilization if at_dwell_end => {
                    next_transition(&mode, dwell_end, g_now, p)
                }
                ModeTag::Stabilization => Decision::Stay,
            };
            if decision == Decision::SwitchNow {
                pending = Some(match mode.tag {
                    ModeTag::Observation => Trigger::Timer,
                    ModeTag::Stabilization => Trigger::GramEigenvalue,
                });
            }
        }

        if let Some(trigger) = pending {
            let new_tag = mode.tag.other();
            mode = Mode {
                tag: new_tag,
                started_at: t,
            };
            let (u_new, _) = control_and_gain(new_tag, &st.xhat, lp.fb, p);
            out.history.jump(u_new);
            out.log.switches.push(SwitchEvent {
                t,
                new_mode: new_tag,
                trigger,
            });
        }
        out.trace.push(lp.record(t, mode.tag, &st, &gram)?);
        out.log.closing = SwitchEvent {
            t,
            new_mode: mode.tag,
            trigger: Trigger::NoneFinal,
        };
    }
    Ok(())
}

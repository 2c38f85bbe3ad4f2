//! Fixed-step Runge–Kutta propagation, the input history behind the delayed
//! terms of the sliding Gramian, and bisection-based event localization.

use alloc::vec::Vec;
use core::convert::Infallible;
use core::fmt;

/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Default time accuracy of localized switching events.
pub const DEFAULT_EVENT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum IntegratorError {
    /// A stage derivative was not finite.
    BlowUp {
        t: f64,
    },
    /// The bracket handed to the event locator does not straddle the threshold.
    NoCrossing,
    /// A delayed input was requested outside the stored history.
    HistoryUnderrun {
        t: f64,
    },
    /// History samples must be pushed in increasing time order.
    OutOfOrder {
        t: f64,
        last: f64,
    },
    InvalidConfig(&'static str),
}

impl fmt::Display for IntegratorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BlowUp { t } => write!(f, "blow-up at t = {t}"),
            Self::NoCrossing => write!(f, "no crossing"),
            Self::HistoryUnderrun { t } => write!(f, "history underrun at t = {t}"),
            Self::OutOfOrder { t, last } => {
                write!(f, "history sample at t = {t} does not follow t = {last}")
            }
            Self::InvalidConfig(why) => write!(f, "invalid integrator configuration: {why}"),
        }
    }
}

impl core::error::Error for IntegratorError {}

impl From<Infallible> for IntegratorError {
    fn from(e: Infallible) -> Self {
        match e {}
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub step: f64,
    pub event_tol: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            event_tol: DEFAULT_EVENT_TOL,
            scheme: Scheme::Rk4,
        }
    }
}

impl IntegratorConfig {
    /// Checks `h > 0`, `event_tol > 0` and `h <= window / 4`.
    pub fn validate(&self, window: f64) -> Result<(), IntegratorError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(IntegratorError::InvalidConfig("step must be positive"));
        }
        if !(self.event_tol > 0.0 && self.event_tol.is_finite()) {
            return Err(IntegratorError::InvalidConfig("event_tol must be positive"));
        }
        if self.step > window / 4.0 {
            return Err(IntegratorError::InvalidConfig(
                "step must not exceed a quarter of the Gramian window",
            ));
        }
        Ok(())
    }
}

/// One classical RK4 step of a fallible right-hand side.
pub fn try_rk_step<E, F>(mut rhs: F, t: f64, state: &[f64], h: f64) -> Result<Vec<f64>, E>
where
    E: From<IntegratorError>,
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
{
    let check = |d: Vec<f64>, at: f64| -> Result<Vec<f64>, E> {
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(IntegratorError::BlowUp { t: at }.into())
        }
    };
    let axpy =
        |k: &[f64], c: f64| -> Vec<f64> { state.iter().zip(k).map(|(s, k)| s + c * k).collect() };
    let k1 = check(rhs(t, state)?, t)?;
    let k2 = check(rhs(t + 0.5 * h, &axpy(&k1, 0.5 * h))?, t)?;
    let k3 = check(rhs(t + 0.5 * h, &axpy(&k2, 0.5 * h))?, t)?;
    let k4 = check(rhs(t + h, &axpy(&k3, h))?, t)?;
    let next: Vec<f64> = state
        .iter()
        .enumerate()
        .map(|(i, s)| s + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(IntegratorError::BlowUp { t }.into())
    }
}

/// One classical RK4 step.
pub fn rk_step<F>(mut rhs: F, t: f64, state: &[f64], h: f64) -> Result<Vec<f64>, IntegratorError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    try_rk_step::<IntegratorError, _>(|t, s| Ok(rhs(t, s)), t, state, h)
}

/// A time-ordered record of the realized input.
///
/// Each sample carries a left and a right value so that the jump of `u` at a
/// mode switch is represented exactly. Between samples the input is linear
/// from the right value of the earlier sample to the left value of the later
/// one.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer {
    window: f64,
    samples: Vec<InputSample>,
    retain_all: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputSample {
    pub t: f64,
    pub left: f64,
    pub right: f64,
}

impl HistoryBuffer {
    /// Buffer that keeps at least `window` of history behind the newest
    /// sample.
    pub fn new(window: f64) -> Self {
        Self {
            window,
            samples: Vec::new(),
            retain_all: false,
        }
    }

    /// Buffer that never discards samples.
    pub fn unbounded(window: f64) -> Self {
        Self {
            window,
            samples: Vec::new(),
            retain_all: true,
        }
    }

    pub fn from_samples(window: f64, samples: &[(f64, f64)]) -> Result<Self, IntegratorError> {
        let mut h = Self::unbounded(window);
        for &(t, u) in samples {
            h.push(t, u)?;
        }
        Ok(h)
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn samples(&self) -> &[InputSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Appends a continuous sample at `t`, strictly after the newest one.
    pub fn push(&mut self, t: f64, u: f64) -> Result<(), IntegratorError> {
        if let Some(last) = self.samples.last() {
            if !(t > last.t) {
                return Err(IntegratorError::OutOfOrder { t, last: last.t });
            }
        }
        self.samples.push(InputSample {
            t,
            left: u,
            right: u,
        });
        if !self.retain_all {
            self.prune();
        }
        Ok(())
    }

    /// Replaces the right value of the newest sample: the input jumps there.
    pub fn jump(&mut self, u: f64) {
        if let Some(last) = self.samples.last_mut() {
            last.right = u;
        }
    }

    fn prune(&mut self) {
        let Some(last) = self.samples.last() else {
            return;
        };
        let horizon = last.t - self.window;
        // keep one sample at or before the window start
        let keep_from = self
            .samples
            .partition_point(|s| s.t <= horizon)
            .saturating_sub(1);
        if keep_from > 64 {
            self.samples.drain(..keep_from);
        }
    }

    fn clamp_query(&self, t: f64) -> Result<f64, IntegratorError> {
        let (Some(first), Some(last)) = (self.first_time(), self.last_time()) else {
            return Err(IntegratorError::HistoryUnderrun { t });
        };
        let slack = 1e-12 * (1.0 + last.abs());
        if t < first - slack || t > last + slack {
            return Err(IntegratorError::HistoryUnderrun { t });
        }
        Ok(t.clamp(first, last))
    }

    /// Right-continuous piecewise-linear value at `t`.
    pub fn value_at(&self, t: f64) -> Result<f64, IntegratorError> {
        let t = self.clamp_query(t)?;
        let i = self.samples.partition_point(|s| s.t <= t);
        // samples[i-1].t <= t < samples[i].t
        let lo = &self.samples[i - 1];
        if lo.t == t || i == self.samples.len() {
            return Ok(lo.right);
        }
        let hi = &self.samples[i];
        Ok(lerp(lo.t, lo.right, hi.t, hi.left, t))
    }

    /// Value at `t` on the linear piece that covers `[lo, hi]`. At a knot this
    /// picks the one-sided limit belonging to that piece.
    pub fn value_on_piece(&self, t: f64, lo: f64, hi: f64) -> Result<f64, IntegratorError> {
        let t = self.clamp_query(t)?;
        let mid = self.clamp_query(0.5 * (lo + hi))?;
        let n = self.samples.len();
        if n == 1 {
            return Ok(self.samples[0].right);
        }
        let i = self.samples.partition_point(|s| s.t <= mid).clamp(1, n - 1);
        let a = &self.samples[i - 1];
        let b = &self.samples[i];
        Ok(lerp(a.t, a.right, b.t, b.left, t))
    }

    /// Sample times strictly inside `(a, b)`.
    pub fn knots_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let start = self.samples.partition_point(|s| s.t <= a);
        self.samples[start..]
            .iter()
            .map(|s| s.t)
            .take_while(move |&t| t < b)
    }
}

fn lerp(t0: f64, u0: f64, t1: f64, u1: f64, t: f64) -> f64 {
    if t1 == t0 {
        return u1;
    }
    let w = (t - t0) / (t1 - t0);
    u0 + w * (u1 - u0)
}

/// Piecewise-linear lookup in the history, exact at sample times.
pub fn interpolate_input(hist: &HistoryBuffer, t_query: f64) -> Result<f64, IntegratorError> {
    hist.value_at(t_query)
}

/// An input signal `t ↦ u(t)` that may have kinks or jumps at known times.
pub trait InputSignal {
    /// Value at `t` on the smooth piece that covers `[lo, hi]`.
    fn value_on(&self, t: f64, lo: f64, hi: f64) -> f64;

    /// Times strictly inside `(t0, t1)` where the signal is not smooth.
    fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// Constant input.
#[derive(Clone, Copy, Debug)]
pub struct ConstantInput(pub f64);

impl InputSignal for ConstantInput {
    fn value_on(&self, _t: f64, _lo: f64, _hi: f64) -> f64 {
        self.0
    }
}

/// Smooth input given by a closure.
pub struct SmoothInput<F>(pub F);

impl<F: Fn(f64) -> f64> InputSignal for SmoothInput<F> {
    fn value_on(&self, t: f64, _lo: f64, _hi: f64) -> f64 {
        (self.0)(t)
    }
}

impl InputSignal for HistoryBuffer {
    fn value_on(&self, t: f64, lo: f64, hi: f64) -> f64 {
        // callers stay inside the recorded span; fall back to the clamped
        // edge value rather than panicking
        self.value_on_piece(t, lo, hi).unwrap_or_else(|_| {
            let s = if t <= self.first_time().unwrap_or(t) {
                self.samples.first()
            } else {
                self.samples.last()
            };
            s.map_or(0.0, |s| s.right)
        })
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.knots_between(t0, t1).collect()
    }
}

/// Splits `[t0, t1]` at the given interior breakpoints and then into
/// sub-steps no longer than `max_step`.
pub(crate) fn piecewise_grid(t0: f64, t1: f64, breaks: &[f64], max_step: f64) -> Vec<(f64, f64)> {
    let mut edges = Vec::with_capacity(breaks.len() + 2);
    edges.push(t0);
    for &b in breaks {
        if b > *edges.last().unwrap() && b < t1 {
            edges.push(b);
        }
    }
    edges.push(t1);
    let mut out = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let k = libm::ceil(len / max_step - 1e-9).max(1.0) as usize;
        for j in 0..k {
            let s = a + len * (j as f64) / (k as f64);
            let e = if j + 1 == k {
                b
            } else {
                a + len * ((j + 1) as f64) / (k as f64)
            };
            out.push((s, e));
        }
    }
    out
}

/// Bisection for the time at which `g` falls to `threshold`.
///
/// Requires `g(t_lo) > threshold >= g(t_hi)`; returns a time within `tol` of
/// the crossing at which `g <= threshold` (closed-threshold semantics).
pub fn locate_event<E, G>(
    mut g: G,
    t_lo: f64,
    t_hi: f64,
    threshold: f64,
    tol: f64,
) -> Result<f64, E>
where
    E: From<IntegratorError>,
    G: FnMut(f64) -> Result<f64, E>,
{
    let (mut lo, mut hi) = (t_lo, t_hi);
    if !(g(lo)? > threshold && g(hi)? <= threshold) {
        return Err(IntegratorError::NoCrossing.into());
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Like [`locate_event`], but scans `scan` equal sub-brackets first so the
/// earliest crossing inside `[t_lo, t_hi]` is the one refined.
pub fn locate_first_event<E, G>(
    mut g: G,
    t_lo: f64,
    t_hi: f64,
    threshold: f64,
    tol: f64,
    scan: usize,
) -> Result<f64, E>
where
    E: From<IntegratorError>,
    G: FnMut(f64) -> Result<f64, E>,
{
    let scan = scan.max(1);
    let mut prev = t_lo;
    if !(g(prev)? > threshold) {
        return Err(IntegratorError::NoCrossing.into());
    }
    for k in 1..=scan {
        let t = if k == scan {
            t_hi
        } else {
            t_lo + (t_hi - t_lo) * (k as f64) / (scan as f64)
        };
        if g(t)? <= threshold {
            return locate_event(&mut g, prev, t, threshold, tol);
        }
        prev = t;
    }
    Err(IntegratorError::NoCrossing.into())
}

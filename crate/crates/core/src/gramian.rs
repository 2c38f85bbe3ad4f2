//! Sliding-window observability Gramian `G_u(t−T, t)`.
//!
//! On `[0, T]` the window grows from `Φ = Id`, `G = 0`; afterwards the
//! coupled `Φ`/`G` equations slide it, reading the delayed input from the
//! history. An optional shift `σ` replaces `A(·)` by `A(·) + σ Id`, which
//! weights the integrand by `e^{−2σ(t−s)}`.

use alloc::vec::Vec;
use core::fmt;

use crate::integrator::{piecewise_grid, rk_step, HistoryBuffer, InputSignal, IntegratorError};
use crate::linalg::{smallest_eigenvalue, LinalgError, Matrix, SymMatrix};
use crate::model::SystemDef;

#[derive(Clone, Debug, PartialEq)]
pub enum GramianError {
    /// `g(t)` queried while the window is still growing.
    Undefined,
    Integrator(IntegratorError),
    Linalg(LinalgError),
}

impl fmt::Display for GramianError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Undefined => write!(f, "g undefined before T"),
            Self::Integrator(e) => write!(f, "{e}"),
            Self::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GramianError {}

impl From<IntegratorError> for GramianError {
    fn from(e: IntegratorError) -> Self {
        Self::Integrator(e)
    }
}

impl From<LinalgError> for GramianError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

/// How the configured `gamma` turns into the matrix shift `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GammaConvention {
    /// `gamma` is the forgetting rate of the integrand, `e^{−γ(t−s)}`;
    /// `σ = γ/2`.
    #[default]
    Forgetting,
    /// `gamma` is added to `A` directly, `σ = γ`.
    Shift,
}

impl GammaConvention {
    pub fn shift(self, gamma: f64) -> f64 {
        match self {
            Self::Forgetting => 0.5 * gamma,
            Self::Shift => gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Startup,
    Sliding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramianState {
    pub phi: Matrix,
    pub g: SymMatrix,
    pub shift: f64,
    pub phase: Phase,
}

impl GramianState {
    /// `Φ = Id`, `G = 0` at the start of the growing window.
    pub fn new(n: usize, shift: f64) -> Self {
        Self {
            phi: Matrix::identity(n),
            g: SymMatrix::zeros(n),
            shift,
            phase: Phase::Startup,
        }
    }

    fn pack(&self) -> Vec<f64> {
        let mut v = self.phi.as_slice().to_vec();
        v.extend_from_slice(self.g.as_slice());
        v
    }

    fn unpack(&self, v: &[f64]) -> Self {
        let n = self.phi.rows();
        let nn = n * n;
        Self {
            phi: Matrix::from_row_major(n, n, v[..nn].to_vec()).expect("packed shape"),
            g: SymMatrix::from_matrix(
                &Matrix::from_row_major(n, n, v[nn..].to_vec()).expect("packed shape"),
            ),
            shift: self.shift,
            phase: self.phase,
        }
    }
}

fn shifted_gram_terms(a: &Matrix, c: &Matrix, g: &SymMatrix) -> Matrix {
    // −A'G − GA + C'C
    let ga = g.as_matrix() * a;
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(
                i,
                j,
                -ga.get(j, i) - ga.get(i, j) + c.get(0, i) * c.get(0, j),
            );
        }
    }
    out
}

/// Sliding-window right-hand sides
/// `dΦ = −Φ(A+σ) + (A_d+σ)Φ` and `dG = −(A+σ)'G − G(A+σ) + C'C − Φ'C'CΦ`.
pub fn gramian_rhs(
    a_now: &Matrix,
    a_delayed: &Matrix,
    c: &Matrix,
    state: &GramianState,
) -> (Matrix, SymMatrix) {
    let a = a_now.shifted(state.shift);
    let ad = a_delayed.shifted(state.shift);
    let dphi = &(&ad * &state.phi) - &(&state.phi * &a);
    let mut dg = shifted_gram_terms(&a, c, &state.g);
    let tail = SymMatrix::gram_of(c).congruence(&state.phi);
    dg = &dg - tail.as_matrix();
    (dphi, SymMatrix::from_matrix(&dg))
}

/// Growing-window right-hand sides on `[0, T]`:
/// `dΦ = −Φ(A+σ)` and `dG = −(A+σ)'G − G(A+σ) + C'C`.
pub fn startup_rhs(a_now: &Matrix, c: &Matrix, state: &GramianState) -> (Matrix, SymMatrix) {
    let a = a_now.shifted(state.shift);
    let dphi = (&state.phi * &a).scale(-1.0);
    let dg = shifted_gram_terms(&a, c, &state.g);
    (dphi, SymMatrix::from_matrix(&dg))
}

/// `g(t)`, the smallest eigenvalue of the window Gramian.
pub fn smallest_gram_eigenvalue(state: &GramianState) -> Result<f64, GramianError> {
    match state.phase {
        Phase::Startup => Err(GramianError::Undefined),
        Phase::Sliding => Ok(smallest_eigenvalue(&state.g)?),
    }
}

/// Advances the window Gramian from `t` to `t + dt`.
///
/// The leading-edge input is linear from `u_a` to `u_b` over the step; the
/// trailing edge reads `hist` at `s − T`, and the step is split wherever the
/// trailing edge crosses a history sample so jumps are honoured exactly.
/// The state switches to the sliding phase once `t + dt` reaches `window`.
#[allow(clippy::too_many_arguments)]
pub fn step_gramian(
    sys: &SystemDef,
    state: &GramianState,
    hist: &HistoryBuffer,
    window: f64,
    t: f64,
    dt: f64,
    u_a: f64,
    u_b: f64,
) -> Result<GramianState, GramianError> {
    let t_end = t + dt;
    let lead = |s: f64| {
        if dt > 0.0 {
            u_a + (u_b - u_a) * (s - t) / dt
        } else {
            u_a
        }
    };
    let snap = 1e-12 * (1.0 + window);
    let sliding = state.phase == Phase::Sliding || t >= window - snap;
    if !sliding && t_end > window + snap {
        let u_w = lead(window);
        let head = step_gramian(sys, state, hist, window, t, window - t, u_a, u_w)?;
        return step_gramian(sys, &head, hist, window, window, t_end - window, u_w, u_b);
    }
    let c = sys.c();
    let mut cur = state.clone();
    if sliding {
        cur.phase = Phase::Sliding;
        let lo = t - window;
        let hi = t_end - window;
        let mut edges = Vec::new();
        edges.push(lo);
        for k in hist.knots_between(lo + snap, hi - snap) {
            edges.push(k);
        }
        edges.push(hi);
        for w in edges.windows(2) {
            let (d0, d1) = (w[0], w[1]);
            // history values on this piece; the same piece covers the whole sub-step
            let ua0 = hist.value_on_piece(d0, d0, d1)?;
            let ua1 = hist.value_on_piece(d1, d0, d1)?;
            let delayed = |s: f64| {
                let len = d1 - d0;
                if len > 0.0 {
                    ua0 + (ua1 - ua0) * (s - window - d0) / len
                } else {
                    ua0
                }
            };
            let s0 = d0 + window;
            let h = d1 - d0;
            let base = cur.clone();
            let packed = rk_step(
                |s, v| {
                    let st = base.unpack(v);
                    let (dp, dg) = gramian_rhs(&sys.a(lead(s)), &sys.a(delayed(s)), c, &st);
                    let mut out = dp.into_vec();
                    out.extend_from_slice(dg.as_slice());
                    out
                },
                s0,
                &cur.pack(),
                h,
            )?;
            cur = base.unpack(&packed);
        }
    } else {
        let base = cur.clone();
        let packed = rk_step(
            |s, v| {
                let st = base.unpack(v);
                let (dp, dg) = startup_rhs(&sys.a(lead(s)), c, &st);
                let mut out = dp.into_vec();
                out.extend_from_slice(dg.as_slice());
                out
            },
            t,
            &cur.pack(),
            dt,
        )?;
        cur = base.unpack(&packed);
        if t_end >= window - snap {
            cur.phase = Phase::Sliding;
        }
    }
    Ok(cur)
}

/// Re-propagates the window Gramian over a recorded history, stepping from
/// sample to sample. Returns `(t, state)` at every sample time.
pub fn replay_gramian(
    sys: &SystemDef,
    hist: &HistoryBuffer,
    window: f64,
    shift: f64,
) -> Result<Vec<(f64, GramianState)>, GramianError> {
    let samples = hist.samples();
    let mut state = GramianState::new(sys.dim(), shift);
    let mut out = Vec::with_capacity(samples.len());
    if let Some(first) = samples.first() {
        out.push((first.t, state.clone()));
    }
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        state = step_gramian(sys, &state, hist, window, a.t, b.t - a.t, a.right, b.left)?;
        out.push((b.t, state.clone()));
    }
    Ok(out)
}

/// `(∫ e^{−decay(t1−s)} Φ'C'CΦ ds, Φ(t1, t0))` with `Φ(t1, s)` obtained by
/// integrating `∂_s Φ = (A(u(s)) + σ Id)Φ` backward from `Φ(t1, t1) = Id`.
/// The trapezoid rule runs piecewise between the input's breakpoints.
pub(crate) fn backward_weighted_gramian(
    sys: &SystemDef,
    u: &dyn InputSignal,
    t0: f64,
    t1: f64,
    shift: f64,
    decay: f64,
    quad_step: f64,
) -> (SymMatrix, Matrix) {
    let n = sys.dim();
    let cc = SymMatrix::gram_of(sys.c());
    let mut acc = SymMatrix::zeros(n);
    let mut phi = Matrix::identity(n);
    if !(t1 > t0) {
        return (acc, phi);
    }
    let breaks = u.breakpoints(t0, t1);
    let grid = piecewise_grid(t0, t1, &breaks, quad_step);
    let integrand = |phi: &Matrix, s: f64| cc.congruence(phi).scale(libm::exp(-decay * (t1 - s)));
    // walk the grid from the right end
    for &(lo, hi) in grid.iter().rev() {
        let f_hi = integrand(&phi, hi);
        let next = rk_step(
            |s, v| {
                let p = Matrix::from_row_major(n, n, v.to_vec()).expect("packed shape");
                (&sys.a(u.value_on(s, lo, hi)).shifted(shift) * &p).into_vec()
            },
            hi,
            phi.as_slice(),
            lo - hi,
        );
        phi = match next {
            Ok(v) => Matrix::from_row_major(n, n, v).expect("packed shape"),
            Err(_) => {
                Matrix::from_row_major(n, n, alloc::vec![f64::NAN; n * n]).expect("packed shape")
            }
        };
        let f_lo = integrand(&phi, lo);
        acc = &acc + &(&f_hi + &f_lo).scale(0.5 * (hi - lo));
    }
    (acc, phi)
}

/// Brute-force `G_u(t0, t1) = ∫ Φ(t1,s)'C'CΦ(t1,s) ds` under shift `σ`.
pub fn gramian_oracle(
    sys: &SystemDef,
    u: &dyn InputSignal,
    t0: f64,
    t1: f64,
    shift: f64,
    quad_step: f64,
) -> SymMatrix {
    backward_weighted_gramian(sys, u, t0, t1, shift, 0.0, quad_step).0
}

/// The oscillator's unit-window Gramian for `u ≡ 0`, in closed form.
pub fn oscillator_unit_gramian() -> SymMatrix {
    // ∫₀¹ (sin²τ, sinτcosτ; ·, cos²τ) dτ
    let (s2, c2) = (libm::sin(2.0), libm::cos(2.0));
    let a = 0.5 - s2 / 4.0;
    let b = (1.0 - c2) / 4.0;
    let d = 0.5 + s2 / 4.0;
    SymMatrix::from_rows(&[&[a, b], &[b, d]]).expect("static matrix")
}

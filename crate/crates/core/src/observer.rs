//! Kalman-like observer with a Riccati-free dynamic gain.
//!
//! The estimate follows `x̂' = A(u)x̂ + B(u) − S⁻¹C'(Cx̂ − y)` and the gain
//! follows `S' = −A(u)'S − SA(u) − θS + C'C`. The error `ε = x̂ − x` is
//! derived from the two states, never integrated on its own.

use alloc::vec::Vec;
use core::fmt;

use crate::gramian::backward_weighted_gramian;
use crate::integrator::InputSignal;
use crate::linalg::{smallest_eigenvalue, sub_vec, Cholesky, LinalgError, Matrix, SymMatrix};
use crate::model::SystemDef;

/// Below this smallest eigenvalue the gain is treated as singular.
pub const GAIN_COLLAPSE_EIG: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub enum ObserverError {
    GainCollapse { min_eig: f64 },
    BoundInapplicable { theta: f64, a_f: f64 },
    Linalg(LinalgError),
}

impl fmt::Display for ObserverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GainCollapse { min_eig } => {
                write!(f, "gain collapse (smallest eigenvalue of S is {min_eig:e})")
            }
            Self::BoundInapplicable { theta, a_f } => {
                write!(
                    f,
                    "bound inapplicable: theta = {theta} <= 2 a_F = {}",
                    2.0 * a_f
                )
            }
            Self::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ObserverError {}

impl From<LinalgError> for ObserverError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverState {
    pub xhat: Vec<f64>,
    pub s: SymMatrix,
}

/// Right-hand sides `(dx̂, dS)` of the observer.
pub fn observer_rhs(
    sys: &SystemDef,
    u: f64,
    theta: f64,
    x: &[f64],
    xhat: &[f64],
    s: &SymMatrix,
) -> Result<(Vec<f64>, SymMatrix), ObserverError> {
    let a = sys.a(u);
    let c = sys.c();
    let min_eig = smallest_eigenvalue(s)?;
    if !(min_eig >= GAIN_COLLAPSE_EIG) {
        return Err(ObserverError::GainCollapse { min_eig });
    }
    let chol = Cholesky::factor(s).map_err(|_| ObserverError::GainCollapse { min_eig })?;
    let innovation = sys.output(xhat) - sys.output(x);
    let ct: Vec<f64> = c.as_slice().to_vec();
    let z = chol.solve(&ct);
    let mut dxhat = a.mul_vec(xhat);
    for (i, (d, b)) in dxhat.iter_mut().zip(sys.b(u)).enumerate() {
        *d += b - z[i] * innovation;
    }
    Ok((dxhat, gain_rhs(&a, c, theta, s)))
}

/// `−A'S − SA − θS + C'C`.
pub fn gain_rhs(a: &Matrix, c: &Matrix, theta: f64, s: &SymMatrix) -> SymMatrix {
    let sa = s.as_matrix() * a;
    let n = s.dim();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = -sa.get(j, i) - sa.get(i, j) - theta * s.get(i, j) + c.get(0, i) * c.get(0, j);
            out.set(i, j, v);
        }
    }
    SymMatrix::from_matrix(&out)
}

/// Closed-form gain:
/// `e^{−θ(t−t0)}Φ'S0Φ + ∫ e^{−θ(t−s)}Φ(t,s)'C'CΦ(t,s) ds`, with `Φ(t,s)`
/// mapping the state at `t` back to `s` and the integral summed by the
/// trapezoid rule at `quad_step`.
pub fn variation_of_constants(
    sys: &SystemDef,
    u: &dyn InputSignal,
    s0: &SymMatrix,
    theta: f64,
    t0: f64,
    t: f64,
    quad_step: f64,
) -> SymMatrix {
    let (integral, phi) = backward_weighted_gramian(sys, u, t0, t, 0.0, theta, quad_step);
    let head = s0.congruence(&phi).scale(libm::exp(-theta * (t - t0)));
    &head + &integral
}

/// One sample of a constant-θ mode, as consumed by the bound checks.
#[derive(Clone, Debug)]
pub struct ErrorSample {
    pub t: f64,
    pub eps: Vec<f64>,
    pub s: SymMatrix,
}

impl ErrorSample {
    pub fn new(t: f64, x: &[f64], xhat: &[f64], s: SymMatrix) -> Self {
        Self {
            t,
            eps: sub_vec(xhat, x),
            s,
        }
    }
}

fn eig_extremes(s: &SymMatrix) -> (f64, f64) {
    let e = s.eigenvalues().unwrap_or_default();
    match (e.first(), e.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (f64::NAN, f64::NAN),
    }
}

/// Largest violation of
/// `|ε(t)| ≤ e^{−θ(t−t0)/2}·sqrt(S_max(t0)/S_min(t))·|ε(t0)|`
/// over a mode whose first sample is `t0`. Non-positive means the bound holds.
pub fn error_bound_check(samples: &[ErrorSample], theta: f64) -> f64 {
    let Some(first) = samples.first() else {
        return f64::NEG_INFINITY;
    };
    let (_, smax0) = eig_extremes(&first.s);
    let e0 = crate::linalg::norm(&first.eps);
    samples
        .iter()
        .map(|r| {
            let (smin, _) = eig_extremes(&r.s);
            let bound = libm::exp(-0.5 * theta * (r.t - first.t)) * libm::sqrt(smax0 / smin) * e0;
            crate::linalg::norm(&r.eps) - bound
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest excess of `ε'Sε(t)` over `e^{−θ(t−t0)} ε'Sε(t0)`, normalized by
/// `max(1, ε'Sε(t0))`. Non-positive means the decay holds.
pub fn lyapunov_decay_excess(samples: &[ErrorSample], theta: f64) -> f64 {
    let Some(first) = samples.first() else {
        return f64::NEG_INFINITY;
    };
    let w0 = first.s.quadratic_form(&first.eps);
    samples
        .iter()
        .map(|r| {
            (r.s.quadratic_form(&r.eps) - libm::exp(-theta * (r.t - first.t)) * w0) / w0.max(1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sup_u |A(u)|_F` over the given inputs.
pub fn frobenius_sup(sys: &SystemDef, inputs: impl IntoIterator<Item = f64>) -> f64 {
    inputs
        .into_iter()
        .map(|u| sys.a(u).frobenius_norm())
        .fold(0.0, f64::max)
}

/// Checks `tr S(t) ≤ max(tr S(t0), |C|²/(θ − 2a_F))` along the gains of a
/// constant-θ stretch.
pub fn trace_bound_check(
    gains: &[SymMatrix],
    c: &Matrix,
    theta: f64,
    a_f: f64,
) -> Result<bool, ObserverError> {
    if !(theta > 2.0 * a_f) {
        return Err(ObserverError::BoundInapplicable { theta, a_f });
    }
    let Some(first) = gains.first() else {
        return Ok(true);
    };
    let c2 = c.frobenius_norm() * c.frobenius_norm();
    let cap = first.trace().max(c2 / (theta - 2.0 * a_f));
    Ok(gains.iter().all(|s| s.trace() <= cap * (1.0 + 1e-12)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{rk_step, ConstantInput};
    use crate::linalg::solve_lyapunov;
    use crate::model::oscillator_example;
    use alloc::string::ToString;
    use alloc::vec;

    fn close(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
        (a - b).frobenius_norm() <= tol * (1.0 + b.frobenius_norm())
    }

    #[test]
    fn zero_innovation() {
        let (sys, _, _) = oscillator_example();
        let x = [1.0, -2.0];
        let (dxhat, _) = observer_rhs(&sys, 0.3, 1.0, &x, &x, &SymMatrix::identity(2)).unwrap();
        let expect = sys.vector_field(0.3, &x);
        assert!(dxhat
            .iter()
            .zip(&expect)
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn stationary_gain() {
        let (sys, _, _) = oscillator_example();
        let s_inf = SymMatrix::from_rows(&[&[0.4, 0.2], &[0.2, 0.6]]).unwrap();
        let solved = solve_lyapunov(&sys.a(0.0), sys.c(), 1.0).unwrap();
        assert!(close(&solved, &s_inf, 1e-12));
        let (_, ds) = observer_rhs(&sys, 0.0, 1.0, &[0.0, 0.0], &[0.0, 0.0], &s_inf).unwrap();
        assert!(ds.frobenius_norm() < 1e-14);
    }

    #[test]
    fn identity_gain_derivative() {
        let (sys, _, _) = oscillator_example();
        let (_, ds) = observer_rhs(
            &sys,
            0.0,
            1.0,
            &[0.0, 0.0],
            &[0.0, 0.0],
            &SymMatrix::identity(2),
        )
        .unwrap();
        let expect = SymMatrix::from_rows(&[&[-1.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert!(close(&ds, &expect, 1e-15));
    }

    #[test]
    fn collapse_is_reported() {
        let (sys, _, _) = oscillator_example();
        let s = SymMatrix::diagonal(&[1.0, 1e-16]);
        let err = observer_rhs(&sys, 0.0, 1.0, &[0.0, 0.0], &[0.0, 0.0], &s).unwrap_err();
        assert!(err.to_string().starts_with("gain collapse"));
    }

    #[test]
    fn voc_empty_interval() {
        let (sys, _, _) = oscillator_example();
        let s0 = SymMatrix::from_rows(&[&[2.0, 0.1], &[0.1, 1.0]]).unwrap();
        let s = variation_of_constants(&sys, &ConstantInput(0.0), &s0, 1.0, 3.0, 3.0, 1e-3);
        assert!(close(&s, &s0, 1e-15));
    }

    #[test]
    fn voc_gives_unit_gramian() {
        let (sys, _, _) = oscillator_example();
        let g = variation_of_constants(
            &sys,
            &ConstantInput(0.0),
            &SymMatrix::zeros(2),
            0.0,
            0.0,
            1.0,
            1e-3,
        );
        let expect =
            SymMatrix::from_rows(&[&[0.272_675_64, 0.354_036_71], &[0.354_036_71, 0.727_324_36]])
                .unwrap();
        assert!(close(&g, &expect, 1e-6));
    }

    #[test]
    fn voc_matches_ode() {
        let (sys, _, _) = oscillator_example();
        let h = 1e-3;
        let mut s = SymMatrix::identity(2).into_matrix().into_vec();
        for k in 0..500 {
            s = rk_step(
                |_, v| {
                    let sm = SymMatrix::from_row_major(2, v.to_vec()).unwrap();
                    gain_rhs(&sys.a(0.0), sys.c(), 1.0, &sm)
                        .into_matrix()
                        .into_vec()
                },
                k as f64 * h,
                &s,
                h,
            )
            .unwrap();
        }
        let ode = SymMatrix::from_row_major(2, s).unwrap();
        let voc = variation_of_constants(
            &sys,
            &ConstantInput(0.0),
            &SymMatrix::identity(2),
            1.0,
            0.0,
            0.5,
            1e-4,
        );
        assert!(close(&voc, &ode, 1e-6));
    }

    #[test]
    fn error_bound_with_zero_error() {
        let samples: Vec<_> = (0..10)
            .map(|k| {
                ErrorSample::new(
                    k as f64 * 0.1,
                    &[1.0, 1.0],
                    &[1.0, 1.0],
                    SymMatrix::identity(2),
                )
            })
            .collect();
        assert!(error_bound_check(&samples, 1.0) <= 0.0);
        assert!(lyapunov_decay_excess(&samples, 1.0) <= 0.0);
    }

    #[test]
    fn trace_bound_cases() {
        let (sys, _, _) = oscillator_example();
        let a_f = frobenius_sup(&sys, [0.0]);
        assert!((a_f - libm::sqrt(2.0)).abs() < 1e-15);
        let s_inf = SymMatrix::from_rows(&[&[0.4, 0.2], &[0.2, 0.6]]).unwrap();
        assert!(trace_bound_check(&vec![s_inf.clone(); 5], sys.c(), 3.0, a_f).unwrap());
        let err = trace_bound_check(&[s_inf], sys.c(), 1.0, a_f).unwrap_err();
        assert!(err.to_string().starts_with("bound inapplicable"));
    }
}

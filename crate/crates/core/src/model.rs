//! Plant family `ẋ = A(u)x + B(u)`, `y = Cx`, the bounded state feedback and
//! the Lyapunov function certifying it.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{dot, LinalgError, Matrix, SymMatrix};

/// Saturation level used by the built-in example when none is given.
pub const DEFAULT_U_BAR: f64 = 100.0;

pub type MatrixFn = Box<dyn Fn(f64) -> Matrix + Send + Sync>;
pub type ScalarFieldFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    /// `C` must have exactly one row of length `n`.
    BadOutputMap {
        rows: usize,
        cols: usize,
    },
    /// `A(u)` or `B(u)` has the wrong shape at some input.
    BadShape {
        u: f64,
    },
    /// `A(u)` or `B(u)` produced a non-finite entry at some input.
    NonFinite {
        u: f64,
    },
    /// Saturation bound must be positive and finite.
    BadSaturation,
    /// The Lyapunov function failed a sampled sanity check.
    BadLyapunov(&'static str),
    Linalg(LinalgError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadOutputMap { rows, cols } => {
                write!(f, "output map must be a single row, got {rows}x{cols}")
            }
            Self::BadShape { u } => write!(f, "A(u)/B(u) has the wrong shape at u = {u}"),
            Self::NonFinite { u } => write!(f, "A(u)/B(u) is not finite at u = {u}"),
            Self::BadSaturation => write!(f, "saturation bound u_bar must be positive and finite"),
            Self::BadLyapunov(why) => write!(f, "invalid Lyapunov function: {why}"),
            Self::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<LinalgError> for ModelError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

/// A SISO state-affine plant.
pub struct SystemDef {
    n: usize,
    a: MatrixFn,
    b: MatrixFn,
    c: Matrix,
    lipschitz_note: String,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("n", &self.n)
            .field("c", &self.c)
            .field("lipschitz_note", &self.lipschitz_note)
            .finish_non_exhaustive()
    }
}

impl SystemDef {
    /// Wraps the maps `u ↦ A(u)`, `u ↦ B(u)` and the row `C`.
    ///
    /// `A` and `B` are spot-checked for shape and finiteness on a grid of
    /// inputs in `[-100, 100]`.
    pub fn new(
        n: usize,
        a: MatrixFn,
        b: MatrixFn,
        c: Matrix,
        lipschitz_note: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if c.rows() != 1 || c.cols() != n {
            return Err(ModelError::BadOutputMap {
                rows: c.rows(),
                cols: c.cols(),
            });
        }
        if !c.is_finite() {
            return Err(ModelError::Linalg(LinalgError::NonFinite));
        }
        for k in -20..=20 {
            let u = 5.0 * f64::from(k);
            let am = a(u);
            let bm = b(u);
            if am.shape() != (n, n) || bm.shape() != (n, 1) {
                return Err(ModelError::BadShape { u });
            }
            if !am.is_finite() || !bm.is_finite() {
                return Err(ModelError::NonFinite { u });
            }
        }
        Ok(Self {
            n,
            a,
            b,
            c,
            lipschitz_note: lipschitz_note.into(),
        })
    }

    /// Bilinear plant `A(u) = A0 + u A1`, `B(u) = u B1`.
    pub fn bilinear(a0: Matrix, a1: Matrix, b1: Vec<f64>, c: Matrix) -> Result<Self, ModelError> {
        let n = a0.rows();
        if !a0.is_square() || a1.shape() != (n, n) || b1.len() != n {
            return Err(ModelError::BadShape { u: 0.0 });
        }
        let b1 = Matrix::column(&b1);
        Self::new(
            n,
            Box::new(move |u| &a0 + &a1.scale(u)),
            Box::new(move |u| b1.scale(u)),
            c,
            "affine in u, hence globally Lipschitz",
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn a(&self, u: f64) -> Matrix {
        (self.a)(u)
    }

    /// `B(u)` as a plain vector.
    pub fn b(&self, u: f64) -> Vec<f64> {
        (self.b)(u).into_vec()
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn lipschitz_note(&self) -> &str {
        &self.lipschitz_note
    }

    /// `y = Cx`.
    pub fn output(&self, x: &[f64]) -> f64 {
        dot(self.c.as_slice(), x)
    }

    /// Open-loop vector field `A(u)x + B(u)` for a fixed input.
    pub fn vector_field(&self, u: f64, x: &[f64]) -> Vec<f64> {
        let mut dx = self.a(u).mul_vec(x);
        for (d, b) in dx.iter_mut().zip(self.b(u)) {
            *d += b;
        }
        dx
    }
}

/// Bounded state feedback `x ↦ λ(x)`, hard-clamped to `[-u_bar, u_bar]`.
pub struct Feedback {
    lambda: ScalarFieldFn,
    u_bar: f64,
}

impl fmt::Debug for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Feedback")
            .field("u_bar", &self.u_bar)
            .finish_non_exhaustive()
    }
}

impl Feedback {
    pub fn new(lambda: ScalarFieldFn, u_bar: f64) -> Result<Self, ModelError> {
        if !(u_bar > 0.0 && u_bar.is_finite()) {
            return Err(ModelError::BadSaturation);
        }
        Ok(Self { lambda, u_bar })
    }

    /// Linear law `λ(x) = k·x`.
    pub fn linear(gains: Vec<f64>, u_bar: f64) -> Result<Self, ModelError> {
        Self::new(Box::new(move |x| dot(&gains, x)), u_bar)
    }

    pub fn u_bar(&self) -> f64 {
        self.u_bar
    }

    /// The unclamped law.
    pub fn raw(&self, x: &[f64]) -> f64 {
        (self.lambda)(x)
    }

    /// `λ(x)` clamped to the saturation bound. NaN passes through so the
    /// integrator can report it.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = (self.lambda)(x);
        if v.is_nan() {
            v
        } else {
            v.clamp(-self.u_bar, self.u_bar)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LyapunovKind {
    /// `V(x) = x'Px`.
    Quadratic(SymMatrix),
    Custom,
}

/// Lyapunov function of the state-feedback closed loop.
pub struct LyapunovFn {
    v: ScalarFieldFn,
    grad: GradientFn,
    kind: LyapunovKind,
}

impl fmt::Debug for LyapunovFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovFn")
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl LyapunovFn {
    /// `V(x) = x'Px` with `P` positive definite.
    pub fn quadratic(p: SymMatrix) -> Result<Self, ModelError> {
        if !crate::linalg::is_positive_definite(&p, 0.0) {
            return Err(ModelError::BadLyapunov("P must be positive definite"));
        }
        let pv = p.clone();
        let pg = p.clone();
        Ok(Self {
            v: Box::new(move |x| pv.quadratic_form(x)),
            grad: Box::new(move |x| {
                pg.as_matrix()
                    .mul_vec(x)
                    .into_iter()
                    .map(|g| 2.0 * g)
                    .collect()
            }),
            kind: LyapunovKind::Quadratic(p),
        })
    }

    /// User-supplied `V` and `∂V/∂x`. `V(0) = 0` and positivity are checked on
    /// a small deterministic sample of the unit sphere scaled out to radius 10.
    pub fn custom(n: usize, v: ScalarFieldFn, grad: GradientFn) -> Result<Self, ModelError> {
        let zero = alloc::vec![0.0; n];
        if v(&zero).abs() > 1e-12 {
            return Err(ModelError::BadLyapunov("V(0) must vanish"));
        }
        for k in 0..(8 * n.max(1)) {
            let mut x = alloc::vec![0.0; n];
            let axis = k % n.max(1);
            let radius = 0.1 * libm::pow(10.0, (k / n.max(1)) as f64 * 0.66);
            x[axis] = if k % 2 == 0 { radius } else { -radius };
            if n > 1 && k % 4 >= 2 {
                x[(axis + 1) % n] = 0.5 * radius;
            }
            if !(v(&x) > 0.0) {
                return Err(ModelError::BadLyapunov("V must be positive away from 0"));
            }
        }
        Ok(Self {
            v,
            grad,
            kind: LyapunovKind::Custom,
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    pub fn kind(&self) -> &LyapunovKind {
        &self.kind
    }
}

/// The harmonic oscillator with input-dependent speed:
/// `A(u) = (1+u)[[0, 1], [-1, 0]]`, `B(u) = (u, 0)`, `C = (0, 1)`,
/// `λ(x) = -x₁` and `V(x) = |x|²`.
pub fn oscillator_example() -> (SystemDef, Feedback, LyapunovFn) {
    oscillator_with_saturation(DEFAULT_U_BAR)
}

/// [`oscillator_example`] with a chosen feedback saturation.
pub fn oscillator_with_saturation(u_bar: f64) -> (SystemDef, Feedback, LyapunovFn) {
    let rot = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).expect("static matrix");
    let sys = SystemDef::bilinear(
        rot.clone(),
        rot,
        alloc::vec![1.0, 0.0],
        Matrix::row(&[0.0, 1.0]),
    )
    .expect("oscillator is well formed");
    let fb = Feedback::linear(alloc::vec![-1.0, 0.0], u_bar).expect("positive saturation");
    let v = LyapunovFn::quadratic(SymMatrix::identity(2)).expect("identity is positive definite");
    (sys, fb, v)
}

/// `A(λ(x))x + B(λ(x))`.
pub fn closed_loop_vector_field(sys: &SystemDef, fb: &Feedback, x: &[f64]) -> Vec<f64> {
    sys.vector_field(fb.eval(x), x)
}

/// `∂V/∂x(x)·(A(λ(x))x + B(λ(x))) + V(x)`; non-positive where the decrease
/// condition holds.
pub fn lyapunov_decrease_check(sys: &SystemDef, fb: &Feedback, v: &LyapunovFn, x: &[f64]) -> f64 {
    dot(&v.gradient(x), &closed_loop_vector_field(sys, fb, x)) + v.value(x)
}

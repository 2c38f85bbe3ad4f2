//! Constructive tuning constants and certified lower bounds for the observer
//! gains.
//!
//! The gain inequalities involve constants as small as `e^{−1800}`, so every
//! `K` is carried as a natural logarithm and the inequalities are checked in
//! log form.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gramian::{smallest_gram_eigenvalue, step_gramian, GramianState};
use crate::integrator::HistoryBuffer;
use crate::linalg::{largest_eigenvalue, norm, smallest_eigenvalue, SymMatrix};
use crate::model::{Feedback, LyapunovFn, LyapunovKind, SystemDef};
use crate::observer::frobenius_sup;
use crate::supervisor::SwitchParams;

#[derive(Clone, Debug, PartialEq)]
pub enum TuningError {
    /// `t_obs <= 3T` or `t_stab <= 3T`.
    WindowTooLarge {
        t_obs: f64,
        t_stab: f64,
        window: f64,
    },
    NonQuadratic,
    ThetaFloor {
        theta_floor: f64,
        a_f: f64,
    },
    InvalidInput(String),
}

impl fmt::Display for TuningError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WindowTooLarge { t_obs, t_stab, window } => write!(
                f,
                "window too large: need t_obs > 3T and t_stab > 3T (t_obs = {t_obs}, t_stab = {t_stab}, T = {window})"
            ),
            Self::NonQuadratic => write!(f, "analytic geometry requires quadratic V"),
            Self::ThetaFloor { theta_floor, a_f } => {
                write!(f, "theta_floor = {theta_floor} must exceed 2 a_F = {}", 2.0 * a_f)
            }
            Self::InvalidInput(why) => write!(f, "invalid tuning input: {why}"),
        }
    }
}

impl core::error::Error for TuningError {}

/// Compact sets of initial conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompactSets {
    /// Lyapunov level whose sublevel set contains the plant initial states.
    pub r0: f64,
    /// Radius of a ball containing the initial estimates.
    pub xhat_radius: f64,
    /// Upper bound of `tr S` over the initial gains.
    pub s_trace_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TuningOptions {
    /// Gain floor used to close the `s̄` bound; defaults to `2a_F + 1`.
    pub theta_floor: Option<f64>,
    /// Sampled geometry for non-quadratic `V`.
    pub monte_carlo: Option<MonteCarlo>,
    /// Number of grid points on `[−ū, ū]` for the input suprema.
    pub input_grid: Option<usize>,
}

/// Sublevel-set geometry of `V`.
pub trait Geometry {
    /// `diam D(R)`.
    fn diam(&self, r: f64) -> f64;
    /// `m(R) = sup_{D(R)} |∇V|`.
    fn m(&self, r: f64) -> f64;
    /// `dist(D(r1), D(r2)^c)` for `r1 < r2`.
    fn dist(&self, r1: f64, r2: f64) -> f64;
}

/// Exact geometry of `V = x'Px`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticGeometry {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl QuadraticGeometry {
    pub fn new(p: &SymMatrix) -> Result<Self, TuningError> {
        let lo =
            smallest_eigenvalue(p).map_err(|e| TuningError::InvalidInput(alloc::format!("{e}")))?;
        let hi =
            largest_eigenvalue(p).map_err(|e| TuningError::InvalidInput(alloc::format!("{e}")))?;
        if !(lo > 0.0) {
            return Err(TuningError::InvalidInput(
                "P must be positive definite".into(),
            ));
        }
        Ok(Self {
            lambda_min: lo,
            lambda_max: hi,
        })
    }
}

impl Geometry for QuadraticGeometry {
    fn diam(&self, r: f64) -> f64 {
        2.0 * libm::sqrt(r / self.lambda_min)
    }

    fn m(&self, r: f64) -> f64 {
        2.0 * libm::sqrt(r * self.lambda_max)
    }

    fn dist(&self, r1: f64, r2: f64) -> f64 {
        (libm::sqrt(r2) - libm::sqrt(r1)) / libm::sqrt(self.lambda_max)
    }
}

/// `(diam D(R), m(R))` for a quadratic `V`.
pub fn sublevel_geometry(v: &LyapunovFn, r: f64) -> Result<(f64, f64), TuningError> {
    match v.kind() {
        LyapunovKind::Quadratic(p) => {
            let g = QuadraticGeometry::new(p)?;
            Ok((g.diam(r), g.m(r)))
        }
        LyapunovKind::Custom => Err(TuningError::NonQuadratic),
    }
}

/// Sampled geometry of a star-shaped `V`: boundary radii are found by
/// bisection along random rays. Approximate.
pub struct SampledGeometry<'a> {
    v: &'a LyapunovFn,
    dirs: Vec<Vec<f64>>,
    fill: Vec<f64>,
}

impl<'a> SampledGeometry<'a> {
    pub fn new(v: &'a LyapunovFn, n: usize, mc: MonteCarlo) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        let rays = libm::sqrt(mc.samples as f64) as usize;
        let mut dirs = Vec::with_capacity(rays.max(2 * n));
        for axis in 0..n {
            for sign in [1.0, -1.0] {
                let mut d = alloc::vec![0.0; n];
                d[axis] = sign;
                dirs.push(d);
            }
        }
        while dirs.len() < rays.max(2 * n) {
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = norm(&d);
            if len > 1e-3 && len <= 1.0 {
                dirs.push(d.iter().map(|c| c / len).collect());
            }
        }
        let fill = (0..mc.samples / dirs.len().max(1))
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        Self { v, dirs, fill }
    }

    fn radius(&self, dir: &[f64], r: f64) -> f64 {
        let at = |s: f64| -> f64 { self.v.value(&dir.iter().map(|d| s * d).collect::<Vec<_>>()) };
        let mut hi = 1.0;
        while at(hi) < r && hi < 1e150 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if at(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

impl Geometry for SampledGeometry<'_> {
    fn diam(&self, r: f64) -> f64 {
        2.0 * self
            .dirs
            .iter()
            .map(|d| self.radius(d, r))
            .fold(0.0, f64::max)
    }

    fn m(&self, r: f64) -> f64 {
        let mut best: f64 = 0.0;
        for d in &self.dirs {
            let rad = self.radius(d, r);
            for &s in self.fill.iter().chain([1.0].iter()) {
                let x: Vec<f64> = d.iter().map(|c| s * rad * c).collect();
                best = best.max(norm(&self.v.gradient(&x)));
            }
        }
        best
    }

    fn dist(&self, r1: f64, r2: f64) -> f64 {
        self.dirs
            .iter()
            .map(|d| self.radius(d, r2) - self.radius(d, r1))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `η = (e^{t_stab} − 1 − t_stab)/(2 + e^{t_stab})`.
pub fn compute_eta(t_stab: f64) -> f64 {
    // expm1 keeps the small-t_stab limit accurate
    (libm::expm1(t_stab) - t_stab) / (2.0 + libm::exp(t_stab))
}

/// `κ = (1 + η + t_stab) e^{−t_stab}`.
pub fn compute_kappa(eta: f64, t_stab: f64) -> f64 {
    (1.0 + eta + t_stab) * libm::exp(-t_stab)
}

/// `(m((1+η)R)/R)(a0 diam D(R) + R)`, the `t`-free factor of the
/// observation-time condition.
pub fn t_obs_factor(geo: &dyn Geometry, r: f64, a0: f64, eta: f64) -> f64 {
    geo.m((1.0 + eta) * r) / r * (a0 * geo.diam(r) + r)
}

/// Largest `t` with `factor · t e^{a0 t} < η`, by bisection to machine
/// precision.
pub fn solve_t_obs_max(factor: f64, a0: f64, eta: f64) -> f64 {
    let f = |t: f64| factor * t * libm::exp(a0 * t) - eta;
    if !(eta > 0.0) || !(factor > 0.0) {
        return 0.0;
    }
    let mut hi = eta / factor;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return lo;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// `t̄_obs` for a quadratic `V`, where the sup over `R` sits at `R0`.
pub fn compute_t_obs_max(v: &LyapunovFn, r0: f64, a0: f64, eta: f64) -> Result<f64, TuningError> {
    match v.kind() {
        LyapunovKind::Quadratic(p) => {
            let geo = QuadraticGeometry::new(p)?;
            Ok(solve_t_obs_max(t_obs_factor(&geo, r0, a0, eta), a0, eta))
        }
        LyapunovKind::Custom => Err(TuningError::NonQuadratic),
    }
}

/// Everything the gain bounds consume.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningConstants {
    pub eta: f64,
    pub kappa: f64,
    pub t_obs_max: f64,
    pub a0: f64,
    pub a_inf: f64,
    pub a_f: f64,
    pub d0: f64,
    pub d0p: f64,
    pub dist_d: f64,
    pub dist_dp: f64,
    pub m_bar: f64,
    pub m_low: f64,
    pub c_norm: f64,
    pub theta_floor: f64,
    pub s_bar: f64,
    pub g0: f64,
    pub ln_k1: f64,
    pub ln_k2: f64,
    pub ln_k3: f64,
    pub ln_k4: f64,
    /// Geometry came from sampling rather than closed form.
    pub approximate: bool,
}

impl TuningConstants {
    pub fn k(&self) -> [f64; 4] {
        [self.ln_k1, self.ln_k2, self.ln_k3, self.ln_k4].map(libm::exp)
    }
}

/// `g0`, the smallest eigenvalue of the zero-input Gramian over `[0, T]`.
pub fn compute_g0(sys: &SystemDef, window: f64, steps: usize) -> Result<f64, TuningError> {
    let hist = HistoryBuffer::from_samples(window, &[(0.0, 0.0)]).expect("single sample");
    let mut st = GramianState::new(sys.dim(), 0.0);
    let steps = steps.max(1);
    let h = window / steps as f64;
    for k in 0..steps {
        let t = k as f64 * h;
        let dt = if k + 1 == steps { window - t } else { h };
        st = step_gramian(sys, &st, &hist, window, t, dt, 0.0, 0.0)
            .map_err(|e| TuningError::InvalidInput(alloc::format!("{e}")))?;
    }
    smallest_gram_eigenvalue(&st).map_err(|e| TuningError::InvalidInput(alloc::format!("{e}")))
}

fn input_grid(u_bar: f64, points: usize) -> impl Iterator<Item = f64> {
    let points = points.max(2);
    (0..points).map(move |k| -u_bar + 2.0 * u_bar * k as f64 / (points - 1) as f64)
}

/// Computes `η`, `t̄_obs`, the geometric constants, `s̄`, `g0` and the four
/// `K`'s. Only `t_stab` and `T` are read from `p`.
pub fn compute_constants(
    sys: &SystemDef,
    fb: &Feedback,
    v: &LyapunovFn,
    sets: &CompactSets,
    p: &SwitchParams,
    opts: &TuningOptions,
) -> Result<TuningConstants, TuningError> {
    if !(sets.r0 > 0.0 && sets.xhat_radius >= 0.0 && sets.s_trace_max > 0.0) {
        return Err(TuningError::InvalidInput(
            "R0, xhat_radius and s_trace_max must be positive".into(),
        ));
    }
    let n = sys.dim();
    let sampled;
    let exact;
    let (geo, approximate): (&dyn Geometry, bool) = match (v.kind(), opts.monte_carlo) {
        (LyapunovKind::Quadratic(pm), _) => {
            exact = QuadraticGeometry::new(pm)?;
            (&exact, false)
        }
        (LyapunovKind::Custom, Some(mc)) => {
            sampled = SampledGeometry::new(v, n, mc);
            (&sampled, true)
        }
        (LyapunovKind::Custom, None) => return Err(TuningError::NonQuadratic),
    };
    let ts = p.t_stab;
    let r0 = sets.r0;
    let eta = compute_eta(ts);
    let kappa = compute_kappa(eta, ts);
    let a0 = sys.a(0.0).operator_norm();
    let grid = opts.input_grid.unwrap_or(2001);
    let a_inf = input_grid(fb.u_bar(), grid)
        .map(|u| sys.a(u).operator_norm())
        .fold(0.0, f64::max);
    let a_f = frobenius_sup(sys, input_grid(fb.u_bar(), grid));

    let factor = if approximate {
        // sup over R on a log grid
        (0..=32)
            .map(|k| r0 * libm::pow(10.0, -3.0 * (32 - k) as f64 / 32.0))
            .map(|r| t_obs_factor(geo, r, a0, eta))
            .fold(0.0, f64::max)
    } else {
        t_obs_factor(geo, r0, a0, eta)
    };
    let t_obs_max = solve_t_obs_max(factor, a0, eta);

    let d0 = geo.diam(r0).max(2.0 * sets.xhat_radius);
    let d0p = geo.diam((1.0 + 2.0 * eta) * r0);
    let dist_d = geo.dist((1.0 + eta) * r0, (1.0 + 2.0 * eta) * r0);
    let dist_dp = geo.dist((1.0 - eta) * r0, r0);
    let m_bar = geo.m((1.0 + 2.0 * eta) * r0);
    let m_low = geo.m((1.0 - eta) * r0);
    let c_norm = sys.c().frobenius_norm();

    let theta_floor = opts.theta_floor.unwrap_or(2.0 * a_f + 1.0);
    if !(theta_floor > 2.0 * a_f) {
        return Err(TuningError::ThetaFloor { theta_floor, a_f });
    }
    let s_bar = sets
        .s_trace_max
        .max(c_norm * c_norm / (theta_floor - 2.0 * a_f));
    let g0 = compute_g0(sys, p.window, 1000)?;
    if !(g0 > 0.0) {
        return Err(TuningError::InvalidInput(
            "the zero input does not make the pair observable over [0, T]".into(),
        ));
    }

    let ln = libm::log;
    let ln_k1 = 2.0 * ln(dist_d).min(ln(dist_dp) - a_inf * ts) - ln(s_bar) - 2.0 * ln(d0);
    let ln_k2 = 2.0 * ln(r0)
        - 6.0 * a_inf * ts
        - ln(s_bar)
        - 2.0 * ln(d0)
        - 4.0 * ln(c_norm)
        - 2.0 * ln(m_bar);
    let ln_k3 = 2.0 * ln(dist_dp) - ln(s_bar) - 2.0 * ln(d0p);
    let ln_k4 = 2.0 * ln(1.0 - eta) + 2.0 * ln(r0) - ln(s_bar) - 2.0 * ln(d0p) - 2.0 * ln(m_low);

    Ok(TuningConstants {
        eta,
        kappa,
        t_obs_max,
        a0,
        a_inf,
        a_f,
        d0,
        d0p,
        dist_d,
        dist_dp,
        m_bar,
        m_low,
        c_norm,
        theta_floor,
        s_bar,
        g0,
        ln_k1,
        ln_k2,
        ln_k3,
        ln_k4,
        approximate,
    })
}

/// Certified lower bounds for the gains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainBounds {
    pub beta_min: f64,
    /// `ᾱ` evaluated at `β = beta_min`.
    pub alpha_min: f64,
    /// The raw bounds fell below `θ_floor` and were raised to it.
    pub floored: bool,
}

fn require_window(p: &SwitchParams) -> Result<(), TuningError> {
    if p.t_obs <= 3.0 * p.window || p.t_stab <= 3.0 * p.window {
        return Err(TuningError::WindowTooLarge {
            t_obs: p.t_obs,
            t_stab: p.t_stab,
            window: p.window,
        });
    }
    Ok(())
}

/// `β̄`, the larger of the two stabilization-gain thresholds.
pub fn beta_threshold(c: &TuningConstants, p: &SwitchParams) -> Result<f64, TuningError> {
    require_window(p)?;
    let ln_g = libm::log(p.g_min);
    let b1 = -(c.ln_k3 + ln_g) / (p.t_stab - p.window);
    let b2 = -(c.ln_k4 + 3.0 * ln_g) / (p.t_stab - 3.0 * p.window);
    Ok(b1.max(b2).max(0.0))
}

/// `ᾱ(β)`, the larger of the two observation-gain thresholds at gain `β`.
pub fn alpha_threshold(
    c: &TuningConstants,
    p: &SwitchParams,
    beta: f64,
) -> Result<f64, TuningError> {
    require_window(p)?;
    let ln_g0 = libm::log(c.g0);
    let a1 = -(c.ln_k1 + ln_g0) / (p.t_obs - p.window);
    let a2 = (-c.ln_k2 - 3.0 * ln_g0 + 2.0 * beta * p.t_stab) / (p.t_obs - 3.0 * p.window);
    Ok(a1.max(a2).max(0.0))
}

/// `β̄` first, then `ᾱ` at that `β`; both raised to `θ_floor` if needed.
pub fn compute_gain_bounds(
    c: &TuningConstants,
    p: &SwitchParams,
) -> Result<GainBounds, TuningError> {
    let raw_beta = beta_threshold(c, p)?;
    let beta_min = raw_beta.max(c.theta_floor);
    let raw_alpha = alpha_threshold(c, p, beta_min)?;
    let alpha_min = raw_alpha.max(c.theta_floor);
    Ok(GainBounds {
        beta_min,
        alpha_min,
        floored: raw_beta < c.theta_floor || raw_alpha < c.theta_floor,
    })
}

/// Slack of the four gain inequalities, `rhs − lhs` in log form; all
/// positive means strict satisfaction.
pub fn inequality_slacks(c: &TuningConstants, p: &SwitchParams, alpha: f64, beta: f64) -> [f64; 4] {
    let ln_g0 = libm::log(c.g0);
    let ln_g = libm::log(p.g_min);
    [
        c.ln_k1 + ln_g0 + alpha * (p.t_obs - p.window),
        c.ln_k2 + 3.0 * ln_g0 - 2.0 * beta * p.t_stab + alpha * (p.t_obs - 3.0 * p.window),
        c.ln_k3 + ln_g + beta * (p.t_stab - p.window),
        c.ln_k4 + 3.0 * ln_g + beta * (p.t_stab - 3.0 * p.window),
    ]
}

/// `ln s̲`, the log of the lower gain bound at gains `(α, β)`.
pub fn ln_s_lower(c: &TuningConstants, p: &SwitchParams, alpha: f64, beta: f64) -> f64 {
    let a = -alpha * p.window + libm::log(p.g_min);
    let b = -(alpha + 2.0 * c.a_inf) * p.t_stab - beta * p.window + libm::log(c.g0);
    -beta * p.window + a.min(b)
}

/// `ln ρ` with `ρ = sqrt(s̲³/s̄)/(|C|² m̄)`.
pub fn ln_rho(c: &TuningConstants, p: &SwitchParams, alpha: f64, beta: f64) -> f64 {
    0.5 * (3.0 * ln_s_lower(c, p, alpha, beta) - libm::log(c.s_bar))
        - 2.0 * libm::log(c.c_norm)
        - libm::log(c.m_bar)
}

/// Constants, bounds and the verdict on the configured gains.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningReport {
    pub constants: TuningConstants,
    pub bounds: Result<GainBounds, TuningError>,
    pub alpha: f64,
    pub beta: f64,
    /// The configured `(α, β, t_obs, T)` satisfy every certified condition.
    pub certified: bool,
    pub flags: Vec<String>,
    /// `ln ρ` and `ln s̲` at the certified gains, when those exist.
    pub ln_rho: Option<f64>,
    pub ln_s_lower: Option<f64>,
}

pub fn tune(
    sys: &SystemDef,
    fb: &Feedback,
    v: &LyapunovFn,
    sets: &CompactSets,
    p: &SwitchParams,
    opts: &TuningOptions,
) -> Result<TuningReport, TuningError> {
    let constants = compute_constants(sys, fb, v, sets, p, opts)?;
    let bounds = compute_gain_bounds(&constants, p);
    let mut flags = Vec::new();
    if p.t_obs >= constants.t_obs_max {
        flags.push(alloc::format!(
            "t_obs = {} is not below the certified observation time {:.6e}",
            p.t_obs,
            constants.t_obs_max
        ));
    }
    if 3.0 * p.window >= p.t_obs.min(p.t_stab) {
        flags.push(alloc::format!(
            "T outside certified range (T = {} >= min(t_obs, t_stab)/3)",
            p.window
        ));
    }
    if constants.approximate {
        flags.push("geometry is sampled; constants are approximate".into());
    }
    let mut certified = flags.iter().all(|f| f.starts_with("geometry"));
    let (mut rho, mut s_low) = (None, None);
    match &bounds {
        Ok(b) => {
            if !(p.beta > b.beta_min) {
                flags.push(alloc::format!(
                    "beta = {} is below the certified bound {:.6e}",
                    p.beta,
                    b.beta_min
                ));
                certified = false;
            }
            let a_req = alpha_threshold(&constants, p, p.beta.max(b.beta_min))
                .unwrap_or(f64::INFINITY)
                .max(constants.theta_floor);
            if !(p.alpha > a_req) {
                flags.push(alloc::format!(
                    "alpha = {} is below the certified bound {:.6e}",
                    p.alpha,
                    a_req
                ));
                certified = false;
            }
            rho = Some(ln_rho(&constants, p, b.alpha_min, b.beta_min));
            s_low = Some(ln_s_lower(&constants, p, b.alpha_min, b.beta_min));
        }
        Err(e) => {
            flags.push(alloc::format!("no finite certified gains: {e}"));
            certified = false;
        }
    }
    Ok(TuningReport {
        constants,
        bounds,
        alpha: p.alpha,
        beta: p.beta,
        certified,
        flags,
        ln_rho: rho,
        ln_s_lower: s_low,
    })
}

//! Two-level dynamics and the two-time correlation bound.
//!
//! The monitored quantity is the conditional probability `Q(0,t)` to find the
//! spin in state 1 at time `t` given it started there. Under resonant driving
//! at angular frequency `omega` with Markovian damping at `gamma_eff` the
//! survival probability is the damped cosine
//!
//! ```text
//! Q(0,t) = (1 + exp(-gamma_eff t) cos(omega t)) / 2
//! ```
//!
//! Classical (realist + stationary) dynamics obey `B(t) = Q(0,2t) - Q(0,t)^2
//! >= 0`; coherent driving violates the bound down to `B = -1/3`.
//!
//! The master-equation integrator is an independent numerical route to the
//! same quantity: a fixed-step RK4 on the Bloch vector for the generator
//! with the damping channel aligned with the drive axis. For that generator
//! the transverse plane contracts uniformly at `gamma_eff`, so the integrated
//! population matches the damped cosine exactly (up to integration error)
//! while the maximally mixed state stays a fixed point. Populations relax
//! toward `1/2` at `gamma_eff`, which contains the `gamma_1/2` contribution
//! of longitudinal relaxation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drive and noise parameters of the two-level spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiParams {
    /// Rabi angular frequency (rad/s), strictly positive.
    pub omega: f64,
    /// Pure dephasing rate (1/s), non-negative.
    pub gamma_phi: f64,
    /// Relaxation rate toward the maximally mixed state (1/s), non-negative.
    pub gamma_1: f64,
}

impl RabiParams {
    pub fn new(omega: f64, gamma_phi: f64, gamma_1: f64) -> Result<Self> {
        let p = Self {
            omega,
            gamma_phi,
            gamma_1,
        };
        p.validate()?;
        Ok(p)
    }

    /// Noise-free driving.
    pub fn coherent(omega: f64) -> Result<Self> {
        Self::new(omega, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() || self.omega <= 0.0 {
            return Err(Error::Domain(format!(
                "omega must be finite and > 0, got {}",
                self.omega
            )));
        }
        for (name, v) in [("gamma_phi", self.gamma_phi), ("gamma_1", self.gamma_1)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Envelope decay rate of the driven oscillation: `gamma_phi + gamma_1/2`.
    pub fn gamma_eff(&self) -> f64 {
        self.gamma_phi + 0.5 * self.gamma_1
    }
}

/// Tolerance on the density-matrix invariants (trace, hermiticity, positivity).
pub const STATE_TOL: f64 = 1e-12;

/// 2x2 density matrix of the effective two-level spin.
///
/// Basis index 0 is "state 1", the monitored state of the correlation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: [[Complex64; 2]; 2],
}

impl DensityMatrix {
    /// Builds from explicit elements, enforcing the invariants within
    /// [`STATE_TOL`]: unit trace, hermiticity, positive semidefiniteness.
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self> {
        let rho = Self { m };
        rho.validate()?;
        Ok(rho)
    }

    /// The pure monitored state |1><1|.
    pub fn state_one() -> Self {
        Self::from_diagonal(1.0)
    }

    /// The orthogonal pure state.
    pub fn state_other() -> Self {
        Self::from_diagonal(0.0)
    }

    pub fn maximally_mixed() -> Self {
        Self::from_diagonal(0.5)
    }

    fn from_diagonal(p1: f64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self {
            m: [
                [Complex64::new(p1, 0.0), z],
                [z, Complex64::new(1.0 - p1, 0.0)],
            ],
        }
    }

    /// Builds from a Bloch vector with |r| <= 1.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if !norm.is_finite() || norm > 1.0 + STATE_TOL {
            return Err(Error::InvalidState(format!(
                "Bloch vector norm {norm} exceeds 1"
            )));
        }
        let [x, y, z] = r;
        Ok(Self {
            m: [
                [
                    Complex64::new((1.0 + z) / 2.0, 0.0),
                    Complex64::new(x / 2.0, -y / 2.0),
                ],
                [
                    Complex64::new(x / 2.0, y / 2.0),
                    Complex64::new((1.0 - z) / 2.0, 0.0),
                ],
            ],
        })
    }

    pub fn elements(&self) -> &[[Complex64; 2]; 2] {
        &self.m
    }

    /// Bloch components (x, y, z).
    pub fn bloch(&self) -> [f64; 3] {
        let x = (self.m[0][1] + self.m[1][0]).re;
        let y = ((self.m[0][1] - self.m[1][0]) * Complex64::new(0.0, 1.0)).re;
        let z = (self.m[0][0] - self.m[1][1]).re;
        [x, y, z]
    }

    /// Population of the monitored state, <1|rho|1>.
    pub fn population_one(&self) -> f64 {
        self.m[0][0].re
    }

    pub fn validate(&self) -> Result<()> {
        let tr = self.m[0][0] + self.m[1][1];
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        if self.m[0][0].im.abs() > STATE_TOL
            || self.m[1][1].im.abs() > STATE_TOL
            || (self.m[0][1] - self.m[1][0].conj()).norm() > STATE_TOL
        {
            return Err(Error::InvalidState("matrix is not Hermitian".into()));
        }
        // Eigenvalues of a 2x2 Hermitian matrix: tr/2 +- sqrt(d^2/4 + |b|^2).
        let half_diff = (self.m[0][0].re - self.m[1][1].re) / 2.0;
        let radius = (half_diff * half_diff + self.m[0][1].norm_sqr()).sqrt();
        let eig_min = tr.re / 2.0 - radius;
        if eig_min < -STATE_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {eig_min}"
            )));
        }
        Ok(())
    }
}

fn check_duration(name: &str, t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!(
            "{name} must be finite and >= 0, got {t}"
        )));
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("{name} must be in [0,1], got {p}")));
    }
    Ok(())
}

/// Closed-form survival probability `Q(0,t)` starting from state 1.
pub fn survival_probability(params: &RabiParams, t: f64) -> Result<f64> {
    params.validate()?;
    check_duration("t", t)?;
    let q = 0.5 * (1.0 + (-params.gamma_eff() * t).exp() * (params.omega * t).cos());
    // Guard against rounding just outside [0,1].
    Ok(q.clamp(0.0, 1.0))
}

/// Bloch-vector derivative of the model generator. The absolute time is
/// threaded through so a time-dependent generator would be caught by
/// [`stationarity_check`], but this generator is autonomous.
fn bloch_derivative(params: &RabiParams, _t_abs: f64, r: [f64; 3]) -> [f64; 3] {
    let g = params.gamma_eff();
    [
        0.0,
        -params.omega * r[2] - g * r[1],
        params.omega * r[1] - g * r[2],
    ]
}

/// Fixed-step RK4 on the Bloch vector from absolute time `t0` for `duration`.
/// The step count is `ceil(duration/dt)` with a uniform step `<= dt`, so the
/// endpoint is hit exactly. Local error is O(h^5), global O(h^4).
fn evolve_bloch(params: &RabiParams, t0: f64, r0: [f64; 3], duration: f64, dt: f64) -> [f64; 3] {
    if duration == 0.0 {
        return r0;
    }
    let steps = (duration / dt).ceil().max(1.0) as u64;
    let h = duration / steps as f64;
    let mut r = r0;
    let mut t = t0;
    for _ in 0..steps {
        let k1 = bloch_derivative(params, t, r);
        let k2 = bloch_derivative(params, t + h / 2.0, add(r, scale(k1, h / 2.0)));
        let k3 = bloch_derivative(params, t + h / 2.0, add(r, scale(k2, h / 2.0)));
        let k4 = bloch_derivative(params, t + h, add(r, scale(k3, h)));
        for i in 0..3 {
            r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    r
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Integrates the master equation for `t` starting from `rho`.
///
/// This is the numerical cross-check for [`survival_probability`]: starting
/// from |1><1| the diagonal matches the closed form to integrator accuracy.
/// Requires `dt > 0` and `dt * omega <= 0.5` so the stated accuracy holds.
pub fn evolve_master_equation(
    rho: &DensityMatrix,
    params: &RabiParams,
    t: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    params.validate()?;
    rho.validate()?;
    check_duration("t", t)?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    if dt * params.omega > 0.5 {
        return Err(Error::Domain(format!(
            "dt too coarse: dt*omega = {} > 0.5",
            dt * params.omega
        )));
    }
    let r = evolve_bloch(params, 0.0, rho.bloch(), t, dt);
    // Contraction can leave |r| marginally above 1 through rounding; renormalize
    // only within the documented tolerance.
    DensityMatrix::from_bloch(r)
}

/// The bound functional `B = q_2t - q_t^2`; negative values certify that no
/// classical stationary process reproduces the pair of conditional
/// probabilities.
pub fn bell_functional(q_t: f64, q_2t: f64) -> Result<f64> {
    check_probability("q_t", q_t)?;
    check_probability("q_2t", q_2t)?;
    Ok(q_2t - q_t * q_t)
}

/// One point of a bound curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellPoint {
    pub t: f64,
    pub q_t: f64,
    pub q_2t: f64,
    pub b: f64,
}

/// Evaluates `B(t)` over a sorted, non-negative time grid.
pub fn bell_curve(params: &RabiParams, t_grid: &[f64]) -> Result<Vec<BellPoint>> {
    params.validate()?;
    if t_grid.is_empty() {
        return Err(Error::Domain("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be sorted".into()));
    }
    t_grid
        .iter()
        .map(|&t| {
            check_duration("grid point", t)?;
            let q_t = survival_probability(params, t)?;
            let q_2t = survival_probability(params, 2.0 * t)?;
            Ok(BellPoint {
                t,
                q_t,
                q_2t,
                b: bell_functional(q_t, q_2t)?,
            })
        })
        .collect()
}

/// Result of the critical-noise search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalNoise {
    /// Damping rate at which the minimum of `B(t)` reaches zero (1/s).
    pub gamma_star: f64,
    /// Location of the minimum of `B(t)` at `gamma_star` (s).
    pub minimizer_t: f64,
    /// Value of that minimum; zero within the search tolerance.
    pub min_b: f64,
}

/// `1 - q` at `x = omega t` for noise ratio `g = gamma/omega`, computed
/// without cancellation: `1 - e^{-gx} cos x = -expm1(-gx) + e^{-gx} 2 sin^2(x/2)`.
fn one_minus_q(g: f64, x: f64) -> f64 {
    let s = (0.5 * x).sin();
    0.5 * (-(-g * x).exp_m1() + (-g * x).exp() * 2.0 * s * s)
}

/// Dimensionless `B` at `x = omega t` for noise ratio `g = gamma/omega`.
///
/// Written as `2a - b - a^2` with `a = 1 - q(x)`, `b = 1 - q(2x)` so the
/// value stays meaningful near `x -> 0`, where the minimizer migrates as the
/// crossover is approached and the naive `q_2t - q_t^2` loses all digits.
fn b_dimensionless(g: f64, x: f64) -> f64 {
    let a = one_minus_q(g, x);
    let b = one_minus_q(g, 2.0 * x);
    2.0 * a - b - a * a
}

/// Minimum of `B` over `omega t` in (0, 4*pi], via a grid that is log-spaced
/// near zero (the minimizer migrates toward t -> 0 as the crossover is
/// approached) and linear in the bulk, followed by golden-section refinement.
fn min_b_dimensionless(g: f64) -> (f64, f64) {
    let mut best_x = f64::NAN;
    let mut best_b = f64::INFINITY;
    let mut consider = |x: f64| {
        let b = b_dimensionless(g, x);
        if b < best_b {
            best_b = b;
            best_x = x;
        }
    };

    let (log_lo, log_hi, n_log) = (1e-8f64, 0.1f64, 320);
    for i in 0..=n_log {
        let f = i as f64 / n_log as f64;
        consider(log_lo * (log_hi / log_lo).powf(f));
    }
    let (lin_hi, n_lin) = (4.0 * std::f64::consts::PI, 4096);
    for i in 1..=n_lin {
        consider(log_hi + (lin_hi - log_hi) * i as f64 / n_lin as f64);
    }

    // Golden-section refinement in a bracket around the grid minimum.
    let (mut lo, mut hi) = (best_x * 0.5, (best_x * 1.5).min(lin_hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut b1, mut b2) = (b_dimensionless(g, x1), b_dimensionless(g, x2));
    for _ in 0..80 {
        if b1 < b2 {
            hi = x2;
            x2 = x1;
            b2 = b1;
            x1 = hi - phi * (hi - lo);
            b1 = b_dimensionless(g, x1);
        } else {
            lo = x1;
            x1 = x2;
            b1 = b2;
            x2 = lo + phi * (hi - lo);
            b2 = b_dimensionless(g, x2);
        }
    }
    let x = 0.5 * (lo + hi);
    let b = b_dimensionless(g, x);
    if b < best_b {
        (x, b)
    } else {
        (best_x, best_b)
    }
}

/// Finds the damping rate `gamma*` above which `min_t B(t)` is no longer
/// negative.
///
/// Bisection on the sign of the grid minimum over `gamma in [0, 2*omega]`
/// (bracket doubled if needed), with `tol` interpreted relative to `omega`:
/// the search stops when the bracket is narrower than `tol * omega`. The
/// computation is dimensionless in `gamma/omega`, so `gamma*/omega` is
/// invariant under rescaling of `omega`. Monotonicity of the minimum in
/// `gamma` is asserted over all evaluated points.
pub fn critical_noise(omega: f64, tol: f64) -> Result<CriticalNoise> {
    if !omega.is_finite() || omega <= 0.0 {
        return Err(Error::Domain(format!("omega must be > 0, got {omega}")));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Domain(format!("tol must be > 0, got {tol}")));
    }
    let tol = tol.max(1e-12);

    let mut evaluations: Vec<(f64, f64)> = Vec::new();
    let mut min_b_at = |g: f64| -> f64 {
        let (_, b) = min_b_dimensionless(g);
        evaluations.push((g, b));
        b
    };

    let mut lo = 0.0f64;
    let b_lo = min_b_at(lo);
    if b_lo >= 0.0 {
        return Err(Error::Search(format!(
            "no violation at gamma = 0 (min B = {b_lo}); nothing to cross"
        )));
    }
    let mut hi = 2.0f64;
    let mut b_hi = min_b_at(hi);
    while b_hi < 0.0 {
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::Search(format!(
                "no sign change up to gamma = {hi} * omega (min B = {b_hi})"
            )));
        }
        b_hi = min_b_at(hi);
    }

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if min_b_at(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Empirical monotonicity of min_t B in gamma over the bracket history.
    evaluations.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in evaluations.windows(2) {
        if pair[1].1 < pair[0].1 - 1e-9 {
            return Err(Error::Search(format!(
                "min_t B not monotone in gamma: B({}) = {} > B({}) = {}",
                pair[0].0, pair[0].1, pair[1].0, pair[1].1
            )));
        }
    }

    let g_star = 0.5 * (lo + hi);
    let (x_min, b_min) = min_b_dimensionless(g_star);
    Ok(CriticalNoise {
        gamma_star: g_star * omega,
        minimizer_t: x_min / omega,
        min_b: b_min,
    })
}

/// Checks that `Q(t_start, t_start + delta)` does not depend on `t_start`.
///
/// The system is freshly prepared in state 1 at each start time and evolved
/// with the integrator (which threads absolute time) for `delta`; the return
/// value is the maximum pairwise difference of the resulting survival
/// probabilities. For this time-homogeneous model it vanishes to integrator
/// tolerance.
pub fn stationarity_check(params: &RabiParams, delta: f64, t_starts: &[f64]) -> Result<f64> {
    params.validate()?;
    check_duration("delta", delta)?;
    if t_starts.is_empty() {
        return Err(Error::Domain("t_starts must be non-empty".into()));
    }
    let dt = 1e-3 / params.omega;
    let mut q_min = f64::INFINITY;
    let mut q_max = f64::NEG_INFINITY;
    for &t0 in t_starts {
        check_duration("t_start", t0)?;
        let r = evolve_bloch(params, t0, [0.0, 0.0, 1.0], delta, dt);
        let q = (1.0 + r[2]) / 2.0;
        q_min = q_min.min(q);
        q_max = q_max.max(q);
    }
    Ok(q_max - q_min)
}

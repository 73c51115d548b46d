//! Fitting and trace analysis.
//!
//! - [`fit_cosine`]: weighted least squares of `a + b e^{-g tau} cos(w tau + phi)`
//!   to scan data, with the frequency seeded by a profile-likelihood scan.
//! - [`fit_poisson_mixture`]: EM for a two-component Poisson mixture with
//!   deterministic initialization.
//! - [`extract_dwell_times`]: thresholded, debounced run-length segmentation
//!   of fluorescence traces.
//! - [`bell_from_fit`]: the bound curve implied by a fitted oscillation.

use serde::{Deserialize, Serialize};

use crate::dynamics::BellPoint;
use crate::error::{Error, Result};
use crate::photophysics::FluorescenceTrace;
use crate::readout::{classify, CountClass, HistogramData};
use crate::stats::poisson_ln_pmf;

/// Canonical cosine fit: `q(tau) = offset + amplitude * e^{-decay tau} *
/// cos(omega tau + phase)` with `amplitude >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineFit {
    pub offset: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    /// Exponential decay rate; 0 when the decay is frozen (the default).
    pub decay: f64,
    /// Covariance of (offset, amplitude, omega, phase[, decay]) from the
    /// local quadratic approximation at the optimum. The entries scale with
    /// the supplied standard errors and are not rescaled by the reduced
    /// chi-square.
    pub covariance: Vec<Vec<f64>>,
    /// Square root of the weighted residual sum of squares.
    pub residual_norm: f64,
}

impl CosineFit {
    pub fn eval(&self, tau: f64) -> f64 {
        self.offset
            + self.amplitude * (-self.decay * tau).exp() * (self.omega * tau + self.phase).cos()
    }

    /// One-sigma uncertainty of the fitted angular frequency.
    pub fn omega_sigma(&self) -> f64 {
        self.covariance[2][2].max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Free the exponential decay instead of freezing it at 0.
    pub fit_decay: bool,
    /// Cap on outer refinement rounds.
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fit_decay: false,
            max_iter: 60,
        }
    }
}

/// Solves the symmetric positive-definite system `A x = b` in place via
/// Cholesky; `A` is row-major `n x n`.
fn cholesky_solve(n: usize, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky solves
/// against the identity.
fn spd_inverse(n: usize, a: &[f64]) -> Option<Vec<Vec<f64>>> {
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = cholesky_solve(n, a, &e)?;
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

/// Weighted linear solve for (a, Bc, Bs) given frequency and decay; returns
/// the coefficients and the weighted RSS.
fn linear_profile(
    points: &[(f64, f64, f64)],
    weights: &[f64],
    omega: f64,
    decay: f64,
) -> Option<([f64; 3], f64)> {
    let mut ata = [0.0; 9];
    let mut atb = [0.0; 3];
    for (&(tau, q, _), &w) in points.iter().zip(weights) {
        let env = (-decay * tau).exp();
        let basis = [1.0, env * (omega * tau).cos(), env * (omega * tau).sin()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i * 3 + j] += w * basis[i] * basis[j];
            }
            atb[i] += w * basis[i] * q;
        }
    }
    let x = cholesky_solve(3, &ata, &atb)?;
    let mut rss = 0.0;
    for (&(tau, q, _), &w) in points.iter().zip(weights) {
        let env = (-decay * tau).exp();
        let model = x[0] + env * (x[1] * (omega * tau).cos() + x[2] * (omega * tau).sin());
        rss += w * (q - model) * (q - model);
    }
    Some(([x[0], x[1], x[2]], rss))
}

fn golden_min(mut lo: f64, mut hi: f64, iters: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Weighted least-squares cosine fit.
///
/// Points are `(tau, q, stderr)`. Needs at least 6 points spanning at least
/// half an oscillation period. The frequency is seeded by scanning the
/// profiled (linear-parameters-eliminated) RSS over a frequency grid — a
/// periodogram in the profile sense, valid for non-uniform grids — then
/// refined by golden section, together with the decay when it is freed.
/// Points with non-positive stderr get the smallest positive stderr in the
/// set (uniform weights if there is none).
pub fn fit_cosine(points: &[(f64, f64, f64)], options: &FitOptions) -> Result<CosineFit> {
    if points.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "cosine fit needs >= 6 points, got {}",
            points.len()
        )));
    }
    for &(tau, q, s) in points {
        if !tau.is_finite() || !q.is_finite() || !s.is_finite() {
            return Err(Error::Domain("non-finite value in fit input".into()));
        }
    }
    let span = points
        .iter()
        .map(|p| p.0)
        .fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if span <= 0.0 {
        return Err(Error::Domain("degenerate grid: zero tau span".into()));
    }

    let min_pos_sigma = points
        .iter()
        .map(|p| p.2)
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = points
        .iter()
        .map(|p| {
            let s = if p.2 > 0.0 {
                p.2
            } else if min_pos_sigma.is_finite() {
                min_pos_sigma
            } else {
                1.0
            };
            1.0 / (s * s)
        })
        .collect();

    // Smallest positive spacing bounds the usable frequency range.
    let mut taus: Vec<f64> = points.iter().map(|p| p.0).collect();
    taus.sort_by(f64::total_cmp);
    let min_gap = taus
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_gap.is_finite() {
        return Err(Error::Domain("degenerate grid: all tau equal".into()));
    }

    let omega_lo = 0.5 * std::f64::consts::PI / span;
    let omega_hi = std::f64::consts::PI / min_gap;
    let step = std::f64::consts::PI / (4.0 * span);
    let mut best = (f64::NAN, f64::INFINITY);
    let mut omega = omega_lo;
    while omega <= omega_hi {
        if let Some((_, rss)) = linear_profile(points, &weights, omega, 0.0) {
            if rss < best.1 {
                best = (omega, rss);
            }
        }
        omega += step;
    }
    if !best.0.is_finite() {
        return Err(Error::Fit("frequency scan found no usable solution".into()));
    }

    let mut omega = best.0;
    let mut decay = 0.0;
    let decay_hi = 4.0 / span;
    let mut prev_rss = f64::INFINITY;
    let mut converged = false;
    for _ in 0..options.max_iter {
        omega = golden_min((omega - step).max(omega_lo * 0.5), omega + step, 60, |w| {
            linear_profile(points, &weights, w, decay).map_or(f64::INFINITY, |r| r.1)
        });
        if options.fit_decay {
            decay = golden_min(0.0, decay_hi, 60, |g| {
                linear_profile(points, &weights, omega, g).map_or(f64::INFINITY, |r| r.1)
            });
        }
        let rss = linear_profile(points, &weights, omega, decay)
            .map_or(f64::INFINITY, |r| r.1);
        if (prev_rss - rss).abs() <= 1e-14 * (1.0 + rss) {
            converged = true;
            prev_rss = rss;
            break;
        }
        prev_rss = rss;
        if !options.fit_decay {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "no convergence after {} rounds (weighted RSS {prev_rss:.3e})",
            options.max_iter
        )));
    }

    let ([a, bc, bs], rss) = linear_profile(points, &weights, omega, decay)
        .ok_or_else(|| Error::Fit("normal equations singular at optimum".into()))?;
    let amplitude = bc.hypot(bs);
    let phase = (-bs).atan2(bc);

    // Local quadratic approximation: C = (J^T W J)^{-1} over the canonical
    // parameters (offset, amplitude, omega, phase[, decay]).
    let n_par = if options.fit_decay { 5 } else { 4 };
    let mut jtj = vec![0.0; n_par * n_par];
    for (&(tau, _, _), &w) in points.iter().zip(&weights) {
        let env = (-decay * tau).exp();
        let arg = omega * tau + phase;
        let mut row = vec![
            1.0,
            env * arg.cos(),
            -amplitude * tau * env * arg.sin(),
            -amplitude * env * arg.sin(),
        ];
        if options.fit_decay {
            row.push(-amplitude * tau * env * arg.cos());
        }
        for i in 0..n_par {
            for j in 0..n_par {
                jtj[i * n_par + j] += w * row[i] * row[j];
            }
        }
    }
    let covariance = spd_inverse(n_par, &jtj).ok_or_else(|| {
        Error::Fit("parameter covariance singular (amplitude ~ 0 or grid degenerate)".into())
    })?;

    Ok(CosineFit {
        offset: a,
        amplitude,
        omega,
        phase,
        decay,
        covariance,
        residual_norm: rss.sqrt(),
    })
}

/// Bound curve implied by a fitted oscillation: evaluates the fit at `t` and
/// `2t` (clamped into [0,1], since a fit may stray marginally outside) and
/// applies the functional.
pub fn bell_from_fit(fit: &CosineFit, t_grid: &[f64]) -> Result<Vec<BellPoint>> {
    if t_grid.is_empty() {
        return Err(Error::Domain("empty time grid".into()));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let q_t = fit.eval(t).clamp(0.0, 1.0);
            let q_2t = fit.eval(2.0 * t).clamp(0.0, 1.0);
            BellPoint {
                t,
                q_t,
                q_2t,
                b: q_2t - q_t * q_t,
            }
        })
        .collect())
}

/// Two-component Poisson mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonMixtureFit {
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Mixing probability of the low component.
    pub weight_low: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Set when the data do not support two components; the lambdas then
    /// coincide at the sample mean and `weight_low` is 1.
    pub degenerate: bool,
}

impl PoissonMixtureFit {
    pub fn weight_high(&self) -> f64 {
        1.0 - self.weight_low
    }
}

/// EM for a two-component Poisson mixture.
///
/// Initialization is deterministic (split at the median); iteration stops
/// when the log-likelihood gains less than 1e-9. Degeneracy is declared when
/// the two-component model does not beat a single Poisson by a
/// likelihood-ratio statistic of at least 6 (roughly the chi-square 95%
/// point for the two extra parameters), or when a component collapses.
pub fn fit_poisson_mixture(samples: &[u64]) -> Result<PoissonMixtureFit> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "mixture fit needs >= 100 samples, got {}",
            samples.len()
        )));
    }

    // Compress to (value, frequency); EM cost scales with distinct values.
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let mut values: Vec<(u64, f64)> = Vec::new();
    for &s in &sorted {
        match values.last_mut() {
            Some((v, c)) if *v == s => *c += 1.0,
            _ => values.push((s, 1.0)),
        }
    }
    let n = samples.len() as f64;
    let total: f64 = values.iter().map(|&(v, c)| v as f64 * c).sum();
    let grand_mean = total / n;

    let median = sorted[sorted.len() / 2];
    let (mut sum_lo, mut n_lo, mut sum_hi, mut n_hi) = (0.0, 0.0, 0.0, 0.0);
    for &(v, c) in &values {
        if v <= median {
            sum_lo += v as f64 * c;
            n_lo += c;
        } else {
            sum_hi += v as f64 * c;
            n_hi += c;
        }
    }

    let single_ll: f64 = if grand_mean > 0.0 {
        values
            .iter()
            .map(|&(v, c)| c * poisson_ln_pmf(v, grand_mean))
            .sum()
    } else {
        0.0 // all samples are zero: point mass, log-likelihood 0
    };

    let degenerate_result = |iterations, ll| PoissonMixtureFit {
        lambda_low: grand_mean,
        lambda_high: grand_mean,
        weight_low: 1.0,
        log_likelihood: ll,
        iterations,
        degenerate: true,
    };

    if n_lo == 0.0 || n_hi == 0.0 || grand_mean == 0.0 {
        return Ok(degenerate_result(0, single_ll));
    }

    let mut lambda_low = (sum_lo / n_lo).max(1e-9);
    let mut lambda_high = (sum_hi / n_hi).max(lambda_low * (1.0 + 1e-6));
    let mut weight_low = n_lo / n;
    let mut ll_prev = f64::NEG_INFINITY;
    let mut iterations = 0;

    for iter in 1..=5000 {
        iterations = iter;
        // E-step in log space.
        let (ln_w_lo, ln_w_hi) = (weight_low.ln(), (1.0 - weight_low).ln());
        let mut ll = 0.0;
        let (mut r_sum, mut r_val_sum) = (0.0, 0.0);
        let (mut s_sum, mut s_val_sum) = (0.0, 0.0);
        for &(v, c) in &values {
            let lo = ln_w_lo + poisson_ln_pmf(v, lambda_low);
            let hi = ln_w_hi + poisson_ln_pmf(v, lambda_high);
            let m = lo.max(hi);
            let log_mix = m + ((lo - m).exp() + (hi - m).exp()).ln();
            ll += c * log_mix;
            let r = (lo - log_mix).exp(); // responsibility of the low component
            r_sum += c * r;
            r_val_sum += c * r * v as f64;
            s_sum += c * (1.0 - r);
            s_val_sum += c * (1.0 - r) * v as f64;
        }
        debug_assert!(
            ll >= ll_prev - 1e-8,
            "EM log-likelihood decreased: {ll_prev} -> {ll}"
        );
        if (ll - ll_prev).abs() < 1e-9 {
            ll_prev = ll;
            break;
        }
        ll_prev = ll;

        // M-step.
        if r_sum < 1e-9 || s_sum < 1e-9 {
            return Ok(degenerate_result(iterations, ll));
        }
        weight_low = (r_sum / n).clamp(1e-12, 1.0 - 1e-12);
        lambda_low = (r_val_sum / r_sum).max(1e-12);
        lambda_high = (s_val_sum / s_sum).max(1e-12);
        if lambda_low > lambda_high {
            std::mem::swap(&mut lambda_low, &mut lambda_high);
            weight_low = 1.0 - weight_low;
        }
    }

    // Likelihood-ratio gate against the single-component model.
    let lr = 2.0 * (ll_prev - single_ll);
    if lr < 6.0 || !(1e-4..=1.0 - 1e-4).contains(&weight_low) {
        return Ok(degenerate_result(iterations, ll_prev));
    }

    Ok(PoissonMixtureFit {
        lambda_low,
        lambda_high,
        weight_low,
        log_likelihood: ll_prev,
        iterations,
        degenerate: false,
    })
}

/// Convenience: mixture fit from a prebuilt histogram (expands bin centers
/// by their counts; exact for bin width 1).
pub fn fit_poisson_mixture_histogram(hist: &HistogramData) -> Result<PoissonMixtureFit> {
    let mut samples = Vec::with_capacity(hist.n_total as usize);
    for (i, &c) in hist.counts.iter().enumerate() {
        let center = 0.5 * (hist.bin_edges[i] + hist.bin_edges[i + 1]);
        let value = center.floor().max(0.0) as u64;
        samples.extend(std::iter::repeat_n(value, c as usize));
    }
    fit_poisson_mixture(&samples)
}

/// Dwell durations per fluorescence class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellAnalysis {
    /// Dwell durations (s) of the low-fluorescence class.
    pub dwell_low: Vec<f64>,
    /// Dwell durations (s) of the high-fluorescence class.
    pub dwell_high: Vec<f64>,
    /// Set when no class switch survives the debounce.
    pub degenerate: bool,
}

/// Threshold + debounce segmentation of a binned trace.
///
/// Bins classify by `count > threshold`; runs shorter than `min_run_bins`
/// are absorbed into the preceding run (leading short runs are absorbed into
/// the first long run), suppressing shot-noise flickers. Dwells at the trace
/// boundaries are included even though they are censored.
pub fn extract_dwell_times(
    trace: &FluorescenceTrace,
    threshold: u64,
    min_run_bins: usize,
) -> Result<DwellAnalysis> {
    if trace.counts.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    if min_run_bins == 0 {
        return Err(Error::Domain("min_run_bins must be >= 1".into()));
    }

    // Run-length encode the per-bin classification.
    let mut runs: Vec<(CountClass, usize)> = Vec::new();
    for &c in &trace.counts {
        let class = classify(c, threshold);
        match runs.last_mut() {
            Some((cl, len)) if *cl == class => *len += 1,
            _ => runs.push((class, 1)),
        }
    }

    // Debounce: absorb short runs into their neighbor.
    let mut merged: Vec<(CountClass, usize)> = Vec::new();
    for (class, len) in runs {
        match merged.last_mut() {
            Some((cl, acc)) if *cl == class => *acc += len,
            Some((_, acc)) if len < min_run_bins => *acc += len,
            Some(_) => merged.push((class, len)),
            // Leading short runs buffer into whatever comes first.
            None => merged.push((class, len)),
        }
    }
    // A short leading run that was pushed verbatim gets absorbed forward.
    if merged.len() >= 2 && merged[0].1 < min_run_bins {
        let (_, len) = merged.remove(0);
        merged[0].1 += len;
    }

    let mut analysis = DwellAnalysis {
        dwell_low: Vec::new(),
        dwell_high: Vec::new(),
        degenerate: merged.len() < 2,
    };
    for (class, len) in merged {
        let duration = len as f64 * trace.bin_width;
        match class {
            CountClass::Low => analysis.dwell_low.push(duration),
            CountClass::High => analysis.dwell_high.push(duration),
        }
    }
    Ok(analysis)
}

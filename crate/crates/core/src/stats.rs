//! Small statistical helpers shared by the readout and analysis modules.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// P(X <= k) for X ~ Poisson(lambda). `lambda = 0` is the point mass at 0.
pub fn poisson_cdf(k: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    // P(X <= k) = Q(k+1, lambda), the upper regularized incomplete gamma.
    gamma_ur((k + 1) as f64, lambda)
}

/// P(X > k) for X ~ Poisson(lambda).
pub fn poisson_sf(k: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    gamma_lr((k + 1) as f64, lambda)
}

/// ln P(X = k) for X ~ Poisson(lambda), requiring `lambda > 0`.
pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    let kf = k as f64;
    kf * lambda.ln() - lambda - ln_gamma(kf + 1.0)
}

/// Sample mean; 0 for empty input.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean (sample stddev / sqrt(n)); 0 for n < 2.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

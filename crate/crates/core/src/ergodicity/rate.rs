//! Log-linear decay fits with residual-bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Outcome of a decay fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitStatus {
    Fitted,
    /// Distance never rose above the noise floor.
    AlreadyStationary,
    /// Too few usable points or poor log-linearity; says nothing about the
    /// underlying convergence.
    Inconclusive,
}

/// Least-squares fit of `log d = log C - lambda t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub lambda: f64,
    pub prefactor: f64,
    pub r2: f64,
    pub n_points: usize,
    /// 95% percentile interval of lambda from the residual bootstrap.
    pub lambda_ci: (f64, f64),
}

/// Ordinary least squares `y = b0 + b1 x`; returns `(b0, b1, r2)`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let b1 = sxy / sxx;
    let b0 = my - b1 * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (b0, b1, r2)
}

/// Fits `d(t) ~ C exp(-lambda t)` to the given points (all `d > 0`).
pub fn fit_log_linear(times: &[f64], distances: &[f64], n_boot: usize, seed: u64) -> LogLinearFit {
    let y: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let (b0, b1, r2) = linear_regression(times, &y);
    let fitted: Vec<f64> = times.iter().map(|t| b0 + b1 * t).collect();
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot: Vec<f64> = (0..n_boot)
        .map(|_| {
            let yb: Vec<f64> = fitted.iter().map(|f| f + resid[rng.random_range(0..resid.len())]).collect();
            -linear_regression(times, &yb).1
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let lambda_ci = if boot.is_empty() {
        (-b1, -b1)
    } else {
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (q(0.025), q(0.975))
    };
    LogLinearFit { lambda: -b1, prefactor: b0.exp(), r2, n_points: times.len(), lambda_ci }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_is_recovered() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let d: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = fit_log_linear(&t, &d, 100, 1);
        assert!((fit.lambda - 0.7).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-10);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.lambda_ci.0 - 0.7).abs() < 1e-10 && (fit.lambda_ci.1 - 0.7).abs() < 1e-10);
    }

    #[test]
    fn bootstrap_interval_has_nominal_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 0.25).collect();
        let mut covered = 0;
        for rep in 0..60 {
            let d: Vec<f64> = t.iter().map(|t| (-0.5 * t + 0.05 * (rng.random::<f64>() - 0.5)).exp()).collect();
            let fit = fit_log_linear(&t, &d, 400, rep);
            assert!(fit.r2 > 0.99);
            if fit.lambda_ci.0 <= 0.5 && 0.5 <= fit.lambda_ci.1 {
                covered += 1;
            }
        }
        // Nominal 95%; 48/60 is more than four binomial SDs below it.
        assert!(covered >= 48, "{covered}/60");
    }
}

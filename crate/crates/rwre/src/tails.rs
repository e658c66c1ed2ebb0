//! Heavy-tail estimation: Hill estimator with order sweep, empirical
//! survival curves, and power-law fits that propagate the correlation
//! between survival estimates at nested thresholds.

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::stats::{slope_coefficients, weighted_linear_fit};

#[derive(Debug, Error, PartialEq)]
pub enum TailError {
    #[error("hill order k = {k} must satisfy 1 <= k < n = {n}")]
    BadHillOrder { k: usize, n: usize },
    #[error("hill estimator needs positive samples, found {0}")]
    NonPositiveSample(f64),
    #[error("top order statistics are all equal; no tail variation to measure")]
    NoTailVariation,
    #[error("need at least {need} usable grid points, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("survival estimate at threshold index {0} is zero; no tail information")]
    EmptyTail(usize),
    #[error("covariance matrix shape mismatch")]
    BadCovariance,
}

/// Default Hill order: ceil(n^0.6), a middle ground between bias (large k)
/// and variance (small k).
pub fn default_hill_k(n: usize) -> usize {
    (n as f64).powf(0.6).ceil() as usize
}

/// Hill estimate of the tail index alpha from the top k order statistics:
/// the reciprocal mean log excess over the (k+1)-th largest sample.
pub fn hill_estimator(xs: &[f64], k: usize) -> Result<f64, TailError> {
    let n = xs.len();
    if k < 1 || k >= n {
        return Err(TailError::BadHillOrder { k, n });
    }
    let mut sorted = xs.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    if sorted[k] <= 0.0 {
        return Err(TailError::NonPositiveSample(sorted[k]));
    }
    let pivot = sorted[k].ln();
    let mean_excess: f64 = sorted[..k].iter().map(|x| x.ln() - pivot).sum::<f64>() / k as f64;
    if mean_excess <= 0.0 {
        return Err(TailError::NoTailVariation);
    }
    Ok(1.0 / mean_excess)
}

/// Hill estimates across several orders, for stability diagnostics.
pub fn hill_sweep(xs: &[f64], ks: &[usize]) -> Vec<(usize, Result<f64, TailError>)> {
    ks.iter().map(|&k| (k, hill_estimator(xs, k))).collect()
}

/// Fraction of samples strictly above each threshold.
pub fn empirical_survival(xs: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    thresholds
        .iter()
        .map(|&u| xs.iter().filter(|&&x| x > u).count() as f64 / n)
        .collect()
}

/// How the sampling covariance of the log-survival values is obtained.
pub enum CovarianceSpec {
    /// All survival values estimated from one sample of size n: the events
    /// are nested, so Cov(log S_i, log S_j) ~ (1/n)(1/S_min - 1) with S_min
    /// the survival at the smaller threshold.
    Nested { n: usize },
    /// Caller-supplied covariance matrix of the log-survival values, for
    /// curves averaged over replicates with known structure.
    LogCovariance(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct TailFit {
    /// Fitted exponent of S(u) ~ C u^slope (negative for decaying tails).
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope under the supplied covariance.
    pub slope_se: f64,
    /// Indices of the grid points that entered the fit.
    pub used: Vec<usize>,
}

/// Weighted log-log fit of survival estimates against thresholds.
///
/// Points whose log-survival standard error exceeds `max_rel_se` carry
/// almost no information and, worse, are biased downward when the true
/// mean is dominated by environments rarer than 1/n; they are dropped.
/// If fewer than `min_points` survive the filter, the `min_points` least
/// noisy points are used instead so the fit stays total; the reported
/// standard error then reflects the noise honestly.
pub fn survival_loglog_fit(
    thresholds: &[f64],
    survival: &[f64],
    cov: &CovarianceSpec,
    max_rel_se: f64,
    min_points: usize,
) -> Result<TailFit, TailError> {
    let m = thresholds.len();
    if survival.len() != m {
        return Err(TailError::BadCovariance);
    }
    if m < min_points.max(2) {
        return Err(TailError::TooFewPoints {
            need: min_points.max(2),
            have: m,
        });
    }
    for (i, &s) in survival.iter().enumerate() {
        if s <= 0.0 {
            return Err(TailError::EmptyTail(i));
        }
    }
    let log_cov = match cov {
        CovarianceSpec::Nested { n } => {
            let nf = *n as f64;
            let mut c = vec![vec![0.0; m]; m];
            for i in 0..m {
                for j in 0..m {
                    let s_small = if thresholds[i] <= thresholds[j] {
                        survival[i]
                    } else {
                        survival[j]
                    };
                    c[i][j] = (1.0 / s_small - 1.0) / nf;
                }
            }
            c
        }
        CovarianceSpec::LogCovariance(c) => {
            if c.len() != m || c.iter().any(|row| row.len() != m) {
                return Err(TailError::BadCovariance);
            }
            c.clone()
        }
    };

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| log_cov[a][a].total_cmp(&log_cov[b][b]));
    let mut used: Vec<usize> = (0..m)
        .filter(|&i| log_cov[i][i].sqrt() <= max_rel_se)
        .collect();
    if used.len() < min_points {
        used = order[..min_points].to_vec();
        used.sort_unstable();
    }

    let xs: Vec<f64> = used.iter().map(|&i| thresholds[i].ln()).collect();
    let ys: Vec<f64> = used.iter().map(|&i| survival[i].ln()).collect();
    let ws: Vec<f64> = used
        .iter()
        .map(|&i| 1.0 / log_cov[i][i].max(1e-300))
        .collect();
    let fit = weighted_linear_fit(&xs, &ys, &ws);
    let coeff = slope_coefficients(&xs, &ws);
    let mut var = 0.0;
    for (a, &i) in used.iter().enumerate() {
        for (b, &j) in used.iter().enumerate() {
            var += coeff[a] * coeff[b] * log_cov[i][j];
        }
    }
    Ok(TailFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: var.max(0.0).sqrt(),
        used,
    })
}

/// Pareto(alpha, x_m) sample by inversion: x_m * u^(-1/alpha).
pub fn sample_pareto(alpha: f64, x_m: f64, rng: &mut SplitMix64) -> f64 {
    debug_assert!(alpha > 0.0 && x_m > 0.0);
    x_m * rng.open01().powf(-1.0 / alpha)
}

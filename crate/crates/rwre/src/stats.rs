//! Shared statistical plumbing: streaming moments, binomial confidence
//! intervals, chi-square goodness of fit, and weighted least squares.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Default critical value for binomial intervals. Slightly wider than the
/// asymptotic 95% value; see the coverage battery in the tests.
pub const WILSON_Z: f64 = 2.0;

/// Streaming mean and variance (Welford), mergeable across shards.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let delta = other.mean - self.mean;
        let total = n1 + n2;
        self.mean += delta * n2 / total;
        self.m2 += other.m2 + delta * delta * n1 * n2 / total;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance; NaN for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn mean_se(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0, "interval for zero trials is undefined");
    assert!(successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Median by partial selection; averages the middle pair for even length.
pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mid = xs.len() / 2;
    let (_, m, _) = xs.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let hi = *m;
    if xs.len() % 2 == 1 {
        hi
    } else {
        let lo = xs[..mid]
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        0.5 * (lo + hi)
    }
}

/// Upper tail probability of the chi-square law.
pub fn chi_square_pvalue(stat: f64, dof: usize) -> f64 {
    assert!(dof >= 1);
    if stat <= 0.0 {
        return 1.0;
    }
    let law = ChiSquared::new(dof as f64).expect("positive dof");
    (1.0 - law.cdf(stat)).clamp(0.0, 1.0)
}

/// Pearson chi-square statistic against expected counts. Expected counts
/// must be positive; callers merge sparse cells beforehand.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            assert!(e > 0.0, "expected count must be positive");
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Weighted least squares line through (x_i, y_i) with weights w_i.
pub fn weighted_linear_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert_eq!(xs.len(), ws.len());
    assert!(xs.len() >= 2, "need at least two points for a line");
    let sw: f64 = ws.iter().sum();
    assert!(sw > 0.0);
    let xbar: f64 = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ybar: f64 = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        let dx = xs[i] - xbar;
        sxx += ws[i] * dx * dx;
        sxy += ws[i] * dx * (ys[i] - ybar);
    }
    assert!(sxx > 0.0, "abscissae are degenerate");
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: ybar - slope * xbar,
    }
}

/// The coefficients c_i such that the fitted slope equals sum c_i y_i.
/// Exposed so callers with correlated ordinates can propagate a full
/// covariance matrix through the estimator.
pub fn slope_coefficients(xs: &[f64], ws: &[f64]) -> Vec<f64> {
    assert_eq!(xs.len(), ws.len());
    let sw: f64 = ws.iter().sum();
    let xbar: f64 = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let sxx: f64 = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (x - xbar) * (x - xbar))
        .sum();
    xs.iter()
        .zip(ws)
        .map(|(x, w)| w * (x - xbar) / sxx)
        .collect()
}

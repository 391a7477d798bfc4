//! Small Monte Carlo statistics toolkit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Mean, sample standard deviation and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        let mean = mean(xs);
        let var = variance(xs);
        let std_dev = var.sqrt();
        Summary {
            n,
            mean,
            std_dev,
            std_err: if n > 1 { std_dev / (n as f64).sqrt() } else { f64::NAN },
        }
    }

    /// `mean / std_err`; zero when both vanish.
    pub fn z_score(&self) -> f64 {
        z_score(self.mean, self.std_err)
    }

    /// `|mean| ≤ k · std_err`.
    pub fn within_sigma(&self, k: f64) -> bool {
        self.mean.abs() <= k * self.std_err
    }
}

pub fn z_score(mean: f64, std_err: f64) -> f64 {
    if mean == 0.0 {
        0.0
    } else {
        mean / std_err
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; NaN below two samples.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    // shifting by a sample keeps constant data at exactly zero variance
    let s = xs[0];
    let m = xs.iter().map(|x| x - s).sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - s - m) * (x - s - m)).sum::<f64>() / (n - 1) as f64
}

/// Sample skewness `m3 / m2^{3/2}` (population moments).
pub fn skewness(xs: &[f64]) -> f64 {
    let (m2, m3, _) = central_moments(xs);
    if m2 == 0.0 {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

/// Sample excess kurtosis `m4 / m2^2 - 3` (population moments).
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let (m2, _, m4) = central_moments(xs);
    if m2 == 0.0 {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Two-sided 95% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// Batch-means estimate over independent replicates: the values are split
/// into `min(n, 20)` contiguous batches of near-equal size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub mean: f64,
    pub batch_means: Vec<f64>,
    /// 95% confidence half-width; NaN with a single value.
    pub ci95: f64,
}

pub const MAX_BATCHES: usize = 20;

pub fn batch_means(xs: &[f64]) -> BatchMeans {
    let n = xs.len();
    let b = n.min(MAX_BATCHES);
    let mut batches = Vec::with_capacity(b);
    let mut start = 0;
    for i in 0..b {
        let size = n / b + usize::from(i < n % b);
        batches.push(mean(&xs[start..start + size]));
        start += size;
    }
    let ci95 = if b < 2 {
        f64::NAN
    } else {
        t_quantile_975(b - 1) * (variance(&batches) / b as f64).sqrt()
    };
    BatchMeans {
        mean: mean(xs),
        batch_means: batches,
        ci95,
    }
}

/// Wilson score interval for a binomial proportion at 95% confidence.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(0.975);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Least-squares line `y = intercept + slope x` with coefficient of
/// determination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Trapezoidal integral of equally spaced samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summary_of_known_sample() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_relative_eq!(s.std_dev, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(s.std_err, s.std_dev / 2.0);
        assert!(Summary::of(&[1.0]).std_err.is_nan());
    }

    #[test]
    fn batch_means_shapes() {
        let xs: Vec<f64> = (0..45).map(f64::from).collect();
        let b = batch_means(&xs);
        assert_eq!(b.batch_means.len(), 20);
        assert_eq!(b.mean, 22.0);
        assert!(b.ci95 > 0.0);
        assert!(batch_means(&[3.0]).ci95.is_nan());
        assert_eq!(batch_means(&[1.0, 2.0, 3.0]).batch_means, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn t_quantiles() {
        assert_relative_eq!(t_quantile_975(19), 2.093, epsilon = 1e-3);
        assert_relative_eq!(t_quantile_975(100_000), 1.960, epsilon = 1e-3);
    }

    #[test]
    fn wilson_reference_values() {
        // 0 of 100: upper ≈ 0.0370
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, 0.036995, epsilon = 1e-5);
        let (lo, hi) = wilson_interval(50, 100);
        assert_relative_eq!(lo, 0.40383, epsilon = 1e-4);
        assert_relative_eq!(hi, 0.59617, epsilon = 1e-4);
    }

    #[test]
    fn moments_of_symmetric_sample() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert_eq!(skewness(&xs), 0.0);
        // m2 = 2, m4 = 6.8
        assert_relative_eq!(excess_kurtosis(&xs), 6.8 / 4.0 - 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_and_trapezoid() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&xs, &ys);
        assert_relative_eq!(f.slope, 2.0);
        assert_relative_eq!(f.intercept, 1.0);
        assert_relative_eq!(f.r_squared, 1.0);
        assert_relative_eq!(trapezoid(&[0.0, 1.0, 2.0], 0.5), 1.0);
    }
}

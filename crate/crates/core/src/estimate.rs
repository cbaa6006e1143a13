//! Monte Carlo estimates with standard errors, and the small summary
//! statistics shared by every estimator.

use std::fmt;

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Slivnyak,
    Chaos,
    DensityMean,
    DensityMoment,
    Series,
    Simulation,
    Importance,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Slivnyak => "slivnyak",
            Method::Chaos => "chaos",
            Method::DensityMean => "density_mean",
            Method::DensityMoment => "density_moment",
            Method::Series => "series",
            Method::Simulation => "simulation",
            Method::Importance => "importance",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Number of outer integration nodes (or replicates).
    pub n_outer: usize,
    /// Size of the inner sample (conditional-intensity pool, inner MC draws).
    pub n_inner: usize,
    pub method: Method,
}

impl MomentEstimate {
    pub fn exact(value: f64, method: Method) -> Self {
        Self { value, std_error: 0.0, n_outer: 0, n_inner: 0, method }
    }

    pub fn new(value: f64, std_error: f64, n_outer: usize, n_inner: usize, method: Method) -> Self {
        debug_assert!(std_error >= 0.0 || std_error.is_nan());
        Self { value, std_error, n_outer, n_inner, method }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`; infinite when both are exact and differ.
    pub fn z_score(&self, other: &MomentEstimate) -> f64 {
        let se = self.std_error.hypot(other.std_error);
        let d = (self.value - other.value).abs();
        if se == 0.0 {
            if d <= 1e-12 * self.value.abs().max(other.value.abs()).max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }

    /// Agreement within `k` combined standard errors.
    pub fn agrees_with(&self, other: &MomentEstimate, k: f64) -> bool {
        self.z_score(other) <= k
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self { value: self.value * factor, std_error: self.std_error * factor.abs(), ..self }
    }
}

impl fmt::Display for MomentEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6} [{}]", self.value, self.std_error, self.method)
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

/// Mean and its naive standard error for i.i.d. values.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    (mean(values), (variance(values) / values.len() as f64).sqrt())
}

/// Mean and batch-means standard error for a correlated sequence.
/// Falls back to the i.i.d. formula when there are fewer values than batches.
pub fn batch_mean_se(values: &[f64], n_batches: usize) -> (f64, f64) {
    let n = values.len();
    if n_batches < 2 || n < 2 * n_batches {
        return mean_se(values);
    }
    let batch_means: Vec<f64> = batch_ranges(n, n_batches).map(|r| mean(&values[r])).collect();
    let (_, se) = mean_se(&batch_means);
    (mean(values), se)
}

/// Split `0..n` into `k` contiguous ranges of near-equal length.
pub fn batch_ranges(n: usize, k: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..k).map(move |b| (b * n / k)..((b + 1) * n / k))
}

/// Sample covariance matrix of row vectors.
pub fn covariance_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let means: Vec<f64> = (0..d).map(|j| mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let c = compensated_sum(rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j]))) / (n as f64 - 1.0);
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    out
}

/// Sample variance together with a moment-based standard error
/// `sqrt((m4 - s^4) / n)`.
pub fn variance_with_se(values: &[f64]) -> (f64, f64) {
    covariance_with_se(values, values)
}

/// Sample covariance with the standard error of the mean of centered products.
pub fn covariance_with_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = mean(a);
    let mb = mean(b);
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let cov = compensated_sum(prods.iter().copied()) / (n - 1.0);
    (cov, (variance(&prods) / n).sqrt())
}

/// Sample autocorrelation at `lag`.
pub fn lag_autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(values);
    let denom = compensated_sum(values.iter().map(|v| (v - m) * (v - m)));
    if denom == 0.0 {
        return 0.0;
    }
    compensated_sum((0..n - lag).map(|i| (values[i] - m) * (values[i + lag] - m))) / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn z_score_of_exact_values() {
        let a = MomentEstimate::exact(1.0, Method::Slivnyak);
        assert_eq!(a.z_score(&a), 0.0);
        let b = MomentEstimate::exact(2.0, Method::Slivnyak);
        assert!(a.z_score(&b).is_infinite());
        let c = MomentEstimate::new(1.5, 0.5, 10, 0, Method::Simulation);
        assert!((a.z_score(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_of_constant() {
        let v = vec![3.0; 100];
        assert_eq!(batch_mean_se(&v, 20), (3.0, 0.0));
    }

    #[test]
    fn batches_cover_range() {
        let r: Vec<_> = batch_ranges(10, 3).collect();
        assert_eq!(r, vec![0..3, 3..6, 6..10]);
    }
}

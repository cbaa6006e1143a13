//! Rescaled U-statistics of Poisson processes with growing intensity, their
//! asymptotic covariance, and empirical diagnostics of Gaussian convergence.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{covariance_matrix, covariance_with_se, mean_se, Method, MomentEstimate};
use crate::geometry::segments_intersect;
use crate::moments::poisson_mean_ustat;
use crate::par_map;
use crate::process::{IntensityMeasure, Particle, ParticleKind};
use crate::seeds::{derive_seed, rng_for, Rng as ChaRng};
use crate::ustat::{eval_ustat, UStatistic};

const CHUNK: usize = 64;

/// Vectors `a^{-(k_i - 1/2)} (F_a^(i) - E F_a^(i))`, one per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledSample {
    pub level: f64,
    pub orders: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
}

impl RescaledSample {
    pub fn dim(&self) -> usize {
        self.orders.len()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.vectors.iter().map(|v| v[i]).collect()
    }
}

/// Symmetric matrix with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub entries: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    /// Smallest eigenvalue before flooring.
    pub min_eigenvalue: f64,
}

impl CovMatrix {
    /// Symmetrizes `entries` and floors negative eigenvalues at zero.
    pub fn from_estimates(entries: Vec<Vec<f64>>, std_errors: Vec<Vec<f64>>) -> Self {
        let d = entries.len();
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (entries[i][j] + entries[j][i]));
        let eig = SymmetricEigen::new(m.clone());
        let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let m = if min_eigenvalue < 0.0 {
            let floored = eig.eigenvalues.map(|v| v.max(0.0));
            &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose()
        } else {
            m
        };
        let entries = (0..d).map(|i| (0..d).map(|j| 0.5 * (m[(i, j)] + m[(j, i)])).collect()).collect();
        Self { entries, std_errors, min_eigenvalue }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| self.entries[i][j] == self.entries[j][i]))
    }

    /// Smallest eigenvalue of the stored (floored) matrix is at least `-tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let d = self.dim();
        let m = DMatrix::from_fn(d, d, |i, j| self.entries[i][j]);
        SymmetricEigen::new(m).eigenvalues.iter().all(|v| *v >= -tol)
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn entry(&self, i: usize, j: usize) -> MomentEstimate {
        MomentEstimate::new(self.entries[i][j], self.std_errors[i][j], 0, 0, Method::Chaos)
    }
}

/// Slivnyak-Mecke means of each statistic under the unscaled measure.
pub fn unit_means(ustats: &[&UStatistic], m: &IntensityMeasure, n_nodes: usize, seed: u64) -> Result<Vec<f64>> {
    ustats.iter().enumerate().map(|(i, f)| Ok(poisson_mean_ustat(f, m, n_nodes, derive_seed(seed, "unit-mean", i as u64))?.value)).collect()
}

/// Simulates `n_replicates` Poisson processes with intensity `a λ` and
/// rescales each statistic. `unit_means[i]` is `E F^(i)` under `λ`; under
/// `a λ` the mean is `a^{k_i}` times it.
pub fn rescale_ustats(ustats: &[&UStatistic], m: &IntensityMeasure, a: f64, n_replicates: usize, unit_means: &[f64], seed: u64) -> Result<RescaledSample> {
    if a < 1.0 {
        return Err(Error::Constraint(format!("level must be at least 1, got {a}")));
    }
    if unit_means.len() != ustats.len() {
        return Err(Error::Constraint("one mean per statistic is required".into()));
    }
    let scaled = m.scaled(a)?;
    let orders: Vec<usize> = ustats.iter().map(|f| f.order()).collect();
    let centers: Vec<f64> = orders.iter().zip(unit_means).map(|(&k, mu)| a.powi(k as i32) * mu).collect();
    let factors: Vec<f64> = orders.iter().map(|&k| a.powf(-(k as f64 - 0.5))).collect();
    let chunks = n_replicates.div_ceil(CHUNK);
    let vectors = par_map(chunks, |c| {
        let mut rng = rng_for(seed, &format!("clt-{a}"), c as u64);
        let len = CHUNK.min(n_replicates - c * CHUNK);
        (0..len)
            .map(|_| {
                let x = scaled.sample_poisson(&mut rng);
                ustats.iter().enumerate().map(|(i, f)| factors[i] * (eval_ustat(f, &x) - centers[i])).collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(RescaledSample { level: a, orders, vectors })
}

/// Inner estimate of `T_1 F(y) = k ∫ f(y, z) λ^{k-1}(dz)`.
fn t1_estimate(f: &UStatistic, y: &Particle, m: &IntensityMeasure, n_inner: usize, rng: &mut ChaRng) -> f64 {
    let k = f.order();
    if k == 1 {
        return f.kernel(std::slice::from_ref(y));
    }
    let mut buf = Vec::with_capacity(k);
    let mut total = 0.0;
    for _ in 0..n_inner {
        buf.clear();
        buf.push(*y);
        for _ in 1..k {
            buf.push(m.sample_particle(rng));
        }
        total += f.kernel(&buf);
    }
    k as f64 * total / n_inner as f64 * m.total_mass().powi((k - 1) as i32)
}

/// Per-node values of `λ(Y) g(y)` collected into a matrix estimate.
fn node_matrix(d: usize, n_nodes: usize, seed: u64, label: &str, node: impl Fn(&mut ChaRng) -> Vec<Vec<f64>> + Sync) -> CovMatrix {
    let chunks = n_nodes.div_ceil(256);
    let values: Vec<Vec<Vec<f64>>> = par_map(chunks, |c| {
        let mut rng = rng_for(seed, label, c as u64);
        let len = 256.min(n_nodes - c * 256);
        (0..len).map(|_| node(&mut rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let mut entries = vec![vec![0.0; d]; d];
    let mut ses = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let v: Vec<f64> = values.iter().map(|n| n[i][j]).collect();
            let (mu, se) = mean_se(&v);
            entries[i][j] = mu;
            ses[i][j] = se;
        }
    }
    CovMatrix::from_estimates(entries, ses)
}

/// `C_ij = ∫ T_1 F^(i) T_1 F^(j) dλ`, each node using two independent inner
/// estimates `A, A'` and the symmetrized product `(A_i A'_j + A'_i A_j) / 2`.
pub fn asymptotic_covariance(ustats: &[&UStatistic], m: &IntensityMeasure, n_nodes: usize, n_inner: usize, seed: u64) -> Result<CovMatrix> {
    if n_nodes < 2 {
        return Err(Error::Constraint("need at least 2 integration nodes".into()));
    }
    let d = ustats.len();
    let mass = m.total_mass();
    let n_inner = n_inner.max(1);
    Ok(node_matrix(d, n_nodes, seed, "asymptotic-cov", |rng| {
        let y = m.sample_particle(rng);
        let a: Vec<f64> = ustats.iter().map(|f| t1_estimate(f, &y, m, n_inner, rng)).collect();
        let b: Vec<f64> = ustats.iter().map(|f| t1_estimate(f, &y, m, n_inner, rng)).collect();
        (0..d).map(|i| (0..d).map(|j| mass * 0.5 * (a[i] * b[j] + b[i] * a[j])).collect()).collect()
    }))
}

/// Covariance of (total length, crossing count) for Poisson segments from
/// the hitting measure `h(y) = λ({s : s ∩ y ≠ ∅})`:
/// `C_11 = ∫ l^2 dλ`, `C_22 = ∫ h^2 dλ`, `C_12 = ∫ l h dλ`.
pub fn segment_covariance_closed_form(m: &IntensityMeasure, n_nodes: usize, n_inner: usize, seed: u64) -> Result<CovMatrix> {
    if m.domain.kind != ParticleKind::Segment {
        return Err(Error::KindMismatch("segment covariance needs a segment measure".into()));
    }
    let mass = m.total_mass();
    let n_inner = n_inner.max(1);
    let hit = |y: &Particle, rng: &mut ChaRng| {
        let s = y.as_segment();
        let hits = (0..n_inner).filter(|_| segments_intersect(s, m.sample_particle(rng).as_segment())).count();
        mass * hits as f64 / n_inner as f64
    };
    Ok(node_matrix(2, n_nodes, seed, "segment-closed-form", |rng| {
        let y = m.sample_particle(rng);
        let l = y.as_segment().length;
        let (h1, h2) = (hit(&y, rng), hit(&y, rng));
        let c12 = mass * l * 0.5 * (h1 + h2);
        vec![vec![mass * l * l, c12], vec![c12, mass * h1 * h2]]
    }))
}

/// `∫ |T_1 F^(i)|^3 dλ` for each statistic. For `k ≥ 2` the cube is the
/// product of three independent inner estimates, unbiased when `T_1 F` has
/// constant sign (as for nonnegative kernels).
pub fn third_moment_condition(ustats: &[&UStatistic], m: &IntensityMeasure, n_nodes: usize, n_inner: usize, seed: u64) -> Result<Vec<MomentEstimate>> {
    if n_nodes < 2 {
        return Err(Error::Constraint("need at least 2 integration nodes".into()));
    }
    let mass = m.total_mass();
    let n_inner = n_inner.max(1);
    let d = ustats.len();
    let mat = node_matrix(d, n_nodes, seed, "third-moment", |rng| {
        let y = m.sample_particle(rng);
        let diag: Vec<f64> = ustats
            .iter()
            .map(|f| {
                let a = t1_estimate(f, &y, m, n_inner, rng);
                if f.order() == 1 {
                    mass * a.abs().powi(3)
                } else {
                    mass * (a * t1_estimate(f, &y, m, n_inner, rng) * t1_estimate(f, &y, m, n_inner, rng)).abs()
                }
            })
            .collect();
        (0..d).map(|i| (0..d).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect()
    });
    Ok((0..d).map(|i| MomentEstimate::new(mat.entries[i][i], mat.std_errors[i][i], n_nodes, n_inner, Method::Chaos)).collect())
}

/// Kolmogorov survival function `Q(t) = 2 sum_{j≥1} (-1)^{j-1} exp(-2 j^2 t^2)`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * t * t).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov statistic and asymptotic p-value against
/// `N(0, var)`, using the `(sqrt(n) + 0.12 + 0.11/sqrt(n)) D` correction.
pub fn ks_normal(values: &[f64], var: f64) -> (f64, f64) {
    let n = values.len();
    if n == 0 || !(var > 0.0) {
        return (f64::NAN, f64::NAN);
    }
    let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = normal.cdf(*x);
            (c - i as f64 / nf).max((i + 1) as f64 / nf - c)
        })
        .fold(0.0, f64::max);
    let sq = nf.sqrt();
    (d, kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDiagnostic {
    pub empirical_var: f64,
    pub analytic_var: f64,
    pub ks_stat: f64,
    pub ks_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianReport {
    pub level: f64,
    pub empirical_cov: Vec<Vec<f64>>,
    pub frobenius_err: f64,
    pub frobenius_rel: f64,
    /// Sampling noise of the Frobenius error from the entrywise standard
    /// errors of the empirical covariance.
    pub frobenius_noise: f64,
    pub components: Vec<ComponentDiagnostic>,
}

/// Compares the empirical covariance of the rescaled sample with `c` and
/// tests each margin against `N(0, C_ii)`.
pub fn gaussian_diagnostic(sample: &RescaledSample, c: &CovMatrix) -> Result<GaussianReport> {
    if sample.vectors.len() < 2 {
        return Err(Error::EmptySample);
    }
    if c.dim() != sample.dim() {
        return Err(Error::Constraint("covariance and sample dimensions differ".into()));
    }
    let d = sample.dim();
    let emp = covariance_matrix(&sample.vectors);
    let mut err2 = 0.0;
    let mut noise2 = 0.0;
    let cols: Vec<Vec<f64>> = (0..d).map(|i| sample.component(i)).collect();
    for i in 0..d {
        for j in 0..d {
            err2 += (emp[i][j] - c.entries[i][j]).powi(2);
            noise2 += covariance_with_se(&cols[i], &cols[j]).1.powi(2);
        }
    }
    let frobenius_err = err2.sqrt();
    let components = (0..d)
        .map(|i| {
            let (ks_stat, ks_p) = ks_normal(&cols[i], c.entries[i][i]);
            ComponentDiagnostic { empirical_var: emp[i][i], analytic_var: c.entries[i][i], ks_stat, ks_p }
        })
        .collect();
    Ok(GaussianReport { level: sample.level, empirical_cov: emp, frobenius_err, frobenius_rel: frobenius_err / c.frobenius(), frobenius_noise: noise2.sqrt(), components })
}

/// Diagnostics at each level, with replicate streams derived per level.
pub fn level_sweep(ustats: &[&UStatistic], m: &IntensityMeasure, levels: &[f64], n_replicates: usize, unit_means: &[f64], c: &CovMatrix, seed: u64) -> Result<Vec<GaussianReport>> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let s = rescale_ustats(ustats, m, a, n_replicates, unit_means, derive_seed(seed, "level", i as u64))?;
            gaussian_diagnostic(&s, c)
        })
        .collect()
}

/// Each Frobenius error exceeds its predecessor by at most `k` combined noise
/// units.
pub fn frobenius_trend_ok(reports: &[GaussianReport], k: f64) -> bool {
    reports.windows(2).all(|w| w[1].frobenius_err <= w[0].frobenius_err + k * w[0].frobenius_noise.hypot(w[1].frobenius_noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::Domain;
    use crate::seeds::rng_from_seed;
    use crate::ustat::kernels::*;
    use rand_distr::{Distribution, StandardNormal};

    fn points(rho: f64) -> IntensityMeasure {
        IntensityMeasure::uniform(Domain::unit_square(1.0, ParticleKind::Point), rho).unwrap()
    }

    fn segments(rho: f64) -> IntensityMeasure {
        IntensityMeasure::uniform(Domain::unit_square(0.5, ParticleKind::Segment), rho).unwrap()
    }

    #[test]
    fn psd_floor() {
        let c = CovMatrix::from_estimates(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![vec![0.0; 2]; 2]);
        assert!(c.min_eigenvalue < 0.0);
        assert!(c.is_symmetric());
        assert!(c.is_psd(1e-9));
        let ok = CovMatrix::from_estimates(vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![vec![0.0; 2]; 2]);
        assert_eq!(ok.entries, vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
    }

    #[test]
    fn indicator_covariance_and_third_moment() {
        let m = points(1.0);
        let c = box_count(vec![0.25, 0.25], vec![0.75, 0.75]);
        let cov = asymptotic_covariance(&[&c], &m, 20_000, 1, 1).unwrap();
        assert!((cov.entries[0][0] - 0.25).abs() < 3.0 * cov.std_errors[0][0]);
        let t = third_moment_condition(&[&c], &m, 20_000, 1, 2).unwrap();
        assert!((t[0].value - 0.25).abs() < 3.0 * t[0].std_error);
        let t3 = third_moment_condition(&[&c.scaled(2.0)], &m, 20_000, 1, 2).unwrap();
        assert!((t3[0].value - 8.0 * t[0].value).abs() < 1e-9);
    }

    #[test]
    fn deterministic_length_covariance() {
        // constant length r0: C_11 = r0^2 rho |B|
        let m = IntensityMeasure::new(
            Domain::unit_square(0.3, ParticleKind::Segment),
            crate::process::GermDensity::Constant(7.0),
            crate::process::MarkLaw::InverseCdf(vec![0.3, 0.3]),
            crate::process::MarkLaw::Uniform,
        )
        .unwrap();
        let l = segment_length();
        let cov = asymptotic_covariance(&[&l], &m, 1000, 1, 3).unwrap();
        assert!((cov.entries[0][0] - 0.09 * 7.0).abs() < 1e-9, "{:?}", cov.entries);
    }

    #[test]
    fn order_one_covariance_matches_variance_term() {
        let m = segments(10.0);
        let l = segment_length();
        let cov = asymptotic_covariance(&[&l], &m, 20_000, 1, 4).unwrap();
        let var = crate::moments::poisson_variance_ustat(&l, &m, 20_000, 1, 5).unwrap();
        assert!(cov.entry(0, 0).agrees_with(&var, 3.0));
    }

    #[test]
    fn segment_paths_agree() {
        let m = segments(10.0);
        let (l, n) = (segment_length(), segment_crossings());
        let generic = asymptotic_covariance(&[&l, &n], &m, 20_000, 20, 6).unwrap();
        let closed = segment_covariance_closed_form(&m, 20_000, 20, 7).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(generic.entry(i, j).agrees_with(&closed.entry(i, j), 3.0), "{i}{j}: {:?} vs {:?}", generic.entries, closed.entries);
            }
        }
        assert!(generic.is_psd(1e-9));
        let t = third_moment_condition(&[&l, &n], &m, 5000, 20, 8).unwrap();
        assert!(t.iter().all(|e| e.value.is_finite() && e.value > 0.0));
    }

    #[test]
    fn rescaling_centers_and_scales() {
        let m = points(5.0);
        let c = box_count(vec![0.0, 0.0], vec![0.5, 0.5]);
        let s = rescale_ustats(&[&c], &m, 4.0, 4000, &[1.25], 9).unwrap();
        let (mu, se) = mean_se(&s.component(0));
        assert!(mu.abs() < 3.0 * se);
        // Var(count)/a = 1.25 for every a
        let v = covariance_matrix(&s.vectors)[0][0];
        assert!((v - 1.25).abs() < 0.1, "{v}");
        assert!(rescale_ustats(&[&c], &m, 0.5, 10, &[1.25], 9).is_err());
    }

    #[test]
    fn ks_null_calibration() {
        let mut rng = rng_from_seed(10);
        let c = CovMatrix::from_estimates(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![vec![0.0; 2]; 2]);
        // Cholesky of c by hand
        let l11 = 2f64.sqrt();
        let l21 = 0.5 / l11;
        let l22 = (1.0 - l21 * l21).sqrt();
        let vectors: Vec<Vec<f64>> = (0..4000)
            .map(|_| {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                vec![l11 * z1, l21 * z1 + l22 * z2]
            })
            .collect();
        let s = RescaledSample { level: 1.0, orders: vec![1, 1], vectors };
        let r = gaussian_diagnostic(&s, &c).unwrap();
        assert!(r.components.iter().all(|c| c.ks_p > 0.01), "{:?}", r.components);
        assert!(r.frobenius_err < 4.0 * r.frobenius_noise, "{} vs {}", r.frobenius_err, r.frobenius_noise);
        // a wrong variance is detected
        let (_, p) = ks_normal(&s.component(0), 0.5);
        assert!(p < 1e-6);
    }

    #[test]
    fn kolmogorov_values() {
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!((kolmogorov_survival(1.36) - 0.049).abs() < 1e-3);
        assert!((kolmogorov_survival(1.63) - 0.0098).abs() < 1e-3);
    }
}

//! Configurations of marked particles, the reference Poisson process and
//! exponential-family Gibbs models with their conditional intensities.

mod model;

pub use model::{GibbsModel, ModelKind, StatVector};

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{hemisphere_representative, Plate3D, Segment2D, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParticleKind {
    Point,
    Segment,
    Plate,
}

impl ParticleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParticleKind::Point => "point",
            ParticleKind::Segment => "segment",
            ParticleKind::Plate => "plate",
        }
    }
}

/// A single mark of the particle space. Planar points keep a zero third
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Particle {
    Point(Vec3),
    Segment(Segment2D),
    Plate(Plate3D),
}

impl Particle {
    pub fn kind(&self) -> ParticleKind {
        match self {
            Particle::Point(_) => ParticleKind::Point,
            Particle::Segment(_) => ParticleKind::Segment,
            Particle::Plate(_) => ParticleKind::Plate,
        }
    }

    /// Germ location, padded with zeros to three coordinates.
    pub fn germ(&self) -> Vec3 {
        match self {
            Particle::Point(p) => *p,
            Particle::Segment(s) => [s.center[0], s.center[1], 0.0],
            Particle::Plate(p) => p.center,
        }
    }

    pub fn as_point(&self) -> Vec3 {
        match self {
            Particle::Point(p) => *p,
            other => panic!("expected a point, got a {}", other.kind().as_str()),
        }
    }

    pub fn as_segment(&self) -> &Segment2D {
        match self {
            Particle::Segment(s) => s,
            other => panic!("expected a segment, got a {}", other.kind().as_str()),
        }
    }

    pub fn as_plate(&self) -> &Plate3D {
        match self {
            Particle::Plate(p) => p,
            other => panic!("expected a plate, got a {}", other.kind().as_str()),
        }
    }
}

/// A finite simple configuration of particles. Order carries no meaning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Configuration {
    pub particles: Vec<Particle>,
}

impl Configuration {
    pub fn new(particles: Vec<Particle>) -> Self {
        Self { particles }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Particle> {
        self.particles.iter()
    }

    /// `self ∪ extra`.
    pub fn union(&self, extra: &[Particle]) -> Configuration {
        let mut particles = Vec::with_capacity(self.len() + extra.len());
        particles.extend_from_slice(&self.particles);
        particles.extend_from_slice(extra);
        Configuration { particles }
    }

    /// Whether all particles are pairwise distinct.
    pub fn is_simple(&self) -> bool {
        all_distinct(&self.particles)
    }
}

impl From<Vec<Particle>> for Configuration {
    fn from(particles: Vec<Particle>) -> Self {
        Self { particles }
    }
}

impl std::ops::Deref for Configuration {
    type Target = [Particle];
    fn deref(&self) -> &[Particle] {
        &self.particles
    }
}

pub(crate) fn all_distinct(ps: &[Particle]) -> bool {
    ps.iter().enumerate().all(|(i, p)| ps[i + 1..].iter().all(|q| q != p))
}

/// Checks that `points` are distinct and disjoint from `x`.
pub(crate) fn check_new_points(x: &[Particle], points: &[Particle], what: &'static str) -> Result<()> {
    if !all_distinct(points) || points.iter().any(|p| x.contains(p)) {
        return Err(Error::DuplicateParticle(what));
    }
    Ok(())
}

/// Axis-aligned observation window with a mark bound and particle kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Upper bound `b` for segment lengths or plate radii.
    pub mark_bound: f64,
    pub kind: ParticleKind,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, mark_bound: f64, kind: ParticleKind) -> Result<Self> {
        let dim = lo.len();
        if dim != hi.len() || !(2..=3).contains(&dim) {
            return Err(Error::InvalidDomain(format!("window bounds must both have 2 or 3 coordinates, got {} and {}", lo.len(), hi.len())));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && b > a)) {
            return Err(Error::InvalidDomain("window must have positive volume".into()));
        }
        if !(mark_bound > 0.0 && mark_bound.is_finite()) {
            return Err(Error::InvalidDomain(format!("mark bound must be positive, got {mark_bound}")));
        }
        match (kind, dim) {
            (ParticleKind::Segment, 2) | (ParticleKind::Plate, 3) | (ParticleKind::Point, _) => {}
            (k, d) => return Err(Error::InvalidDomain(format!("{} particles need a {}-dimensional window, got {d}", k.as_str(), if k == ParticleKind::Segment { 2 } else { 3 }))),
        }
        Ok(Self { lo, hi, mark_bound, kind })
    }

    pub fn unit_square(mark_bound: f64, kind: ParticleKind) -> Self {
        Self::new(vec![0.0, 0.0], vec![1.0, 1.0], mark_bound, kind).expect("unit square is valid")
    }

    pub fn unit_cube(mark_bound: f64, kind: ParticleKind) -> Self {
        Self::new(vec![0.0; 3], vec![1.0; 3], mark_bound, kind).expect("unit cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn contains_germ(&self, g: Vec3) -> bool {
        (0..self.dim()).all(|i| g[i] >= self.lo[i] && g[i] <= self.hi[i])
    }

    /// Whether `p` is a valid particle of this domain.
    pub fn contains(&self, p: &Particle) -> bool {
        if p.kind() != self.kind || !self.contains_germ(p.germ()) {
            return false;
        }
        match p {
            Particle::Point(q) => self.dim() == 3 || q[2] == 0.0,
            Particle::Segment(s) => s.is_valid(self.mark_bound),
            Particle::Plate(pl) => pl.is_valid(self.mark_bound),
        }
    }
}

/// Germ intensity `rho` on the window.
#[derive(Debug, Clone, PartialEq)]
pub enum GermDensity {
    Constant(f64),
    /// Piecewise constant on a regular grid of cells; `values` are row-major
    /// with the first coordinate fastest.
    Grid { shape: Vec<usize>, values: Vec<f64> },
}

/// A law on `(0, b]` or on an angle range, either uniform or given by an
/// inverse-CDF table at equally spaced probabilities `0, 1/M, ..., 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkLaw {
    Uniform,
    InverseCdf(Vec<f64>),
}

impl MarkLaw {
    fn validate(&self, lo: f64, hi: f64, what: &str) -> Result<()> {
        if let MarkLaw::InverseCdf(t) = self {
            if t.len() < 2 {
                return Err(Error::InvalidIntensity(format!("{what} table needs at least 2 entries")));
            }
            if t.windows(2).any(|w| !(w[1] >= w[0])) {
                return Err(Error::InvalidIntensity(format!("{what} table must be nondecreasing")));
            }
            if t[0] < lo || t[t.len() - 1] > hi {
                return Err(Error::InvalidIntensity(format!("{what} table must lie in [{lo}, {hi}]")));
            }
            if t[0] == t[t.len() - 1] && what.contains("orientation") {
                return Err(Error::InvalidIntensity("orientation law must be nondegenerate".into()));
            }
        }
        Ok(())
    }

    /// Sample on `[lo, hi)` (uniform case) or by table interpolation.
    fn sample<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        match self {
            MarkLaw::Uniform => lo + (hi - lo) * u,
            MarkLaw::InverseCdf(t) => {
                let pos = u * (t.len() - 1) as f64;
                let i = (pos.floor() as usize).min(t.len() - 2);
                let w = pos - i as f64;
                t[i] + w * (t[i + 1] - t[i])
            }
        }
    }
}

/// Product reference measure `rho(z) dz ⊗ Q(dr) ⊗ V(dphi)`, scaled by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMeasure {
    pub domain: Domain,
    pub germ: GermDensity,
    /// Law `Q` of segment length or plate radius.
    pub size_law: MarkLaw,
    /// Law `V` of the segment angle in `[0, pi)` or of the plate polar angle
    /// in `[0, pi/2]` (azimuth always uniform).
    pub orientation_law: MarkLaw,
    cumulative: Vec<f64>,
    total_mass: f64,
}

impl IntensityMeasure {
    pub fn new(domain: Domain, germ: GermDensity, size_law: MarkLaw, orientation_law: MarkLaw) -> Result<Self> {
        let cell_volume;
        let cumulative = match &germ {
            GermDensity::Constant(rho) => {
                if !(rho.is_finite() && *rho >= 0.0) {
                    return Err(Error::InvalidIntensity(format!("germ intensity must be finite and nonnegative, got {rho}")));
                }
                cell_volume = domain.volume();
                vec![*rho]
            }
            GermDensity::Grid { shape, values } => {
                if shape.len() != domain.dim() || shape.contains(&0) {
                    return Err(Error::InvalidIntensity("grid shape must match the window dimension".into()));
                }
                if shape.iter().product::<usize>() != values.len() {
                    return Err(Error::InvalidIntensity("grid values do not match its shape".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidIntensity("germ intensity must be finite and nonnegative".into()));
                }
                cell_volume = domain.volume() / values.len() as f64;
                let mut acc = 0.0;
                values.iter().map(|v| {
                    acc += v;
                    acc
                }).collect()
            }
        };
        let total_mass = cumulative.last().copied().unwrap_or(0.0) * cell_volume;
        let b = domain.mark_bound;
        size_law.validate(f64::MIN_POSITIVE, b, "size")?;
        let angle_hi = if domain.kind == ParticleKind::Plate { FRAC_PI_2 } else { PI };
        orientation_law.validate(0.0, angle_hi, "orientation")?;
        Ok(Self { domain, germ, size_law, orientation_law, cumulative, total_mass })
    }

    /// Constant germ intensity with uniform mark laws.
    pub fn uniform(domain: Domain, rho: f64) -> Result<Self> {
        Self::new(domain, GermDensity::Constant(rho), MarkLaw::Uniform, MarkLaw::Uniform)
    }

    /// Total mass `lambda(Y)`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// The measure `a * lambda`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidIntensity(format!("scale must be positive, got {a}")));
        }
        let germ = match &self.germ {
            GermDensity::Constant(r) => GermDensity::Constant(r * a),
            GermDensity::Grid { shape, values } => GermDensity::Grid { shape: shape.clone(), values: values.iter().map(|v| v * a).collect() },
        };
        Self::new(self.domain.clone(), germ, self.size_law.clone(), self.orientation_law.clone())
    }

    /// Germ density at `z` (zero outside the window).
    pub fn germ_density(&self, z: Vec3) -> f64 {
        if !self.domain.contains_germ(z) {
            return 0.0;
        }
        match &self.germ {
            GermDensity::Constant(r) => *r,
            GermDensity::Grid { shape, values } => values[self.cell_index(shape, z)],
        }
    }

    fn cell_index(&self, shape: &[usize], z: Vec3) -> usize {
        let d = &self.domain;
        let mut idx = 0;
        let mut stride = 1;
        for (i, &n) in shape.iter().enumerate() {
            let w = (z[i] - d.lo[i]) / (d.hi[i] - d.lo[i]);
            let c = ((w * n as f64).floor() as usize).min(n - 1);
            idx += c * stride;
            stride *= n;
        }
        idx
    }

    fn sample_germ<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let d = &self.domain;
        let mut z = [0.0; 3];
        match &self.germ {
            GermDensity::Constant(_) => {
                for i in 0..d.dim() {
                    z[i] = d.lo[i] + (d.hi[i] - d.lo[i]) * rng.gen::<f64>();
                }
            }
            GermDensity::Grid { shape, .. } => {
                let total = *self.cumulative.last().expect("grid is nonempty");
                let u = rng.gen::<f64>() * total;
                let mut cell = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
                for (i, &n) in shape.iter().enumerate() {
                    let c = cell % n;
                    cell /= n;
                    let w = (d.hi[i] - d.lo[i]) / n as f64;
                    z[i] = d.lo[i] + w * (c as f64 + rng.gen::<f64>());
                }
            }
        }
        z
    }

    /// Uniform sizes are drawn on `(0, b]`.
    fn sample_size<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let b = self.domain.mark_bound;
        match &self.size_law {
            MarkLaw::Uniform => b * (1.0 - rng.gen::<f64>()),
            law => law.sample(0.0, b, rng),
        }
    }

    /// One particle from the normalized measure `lambda / lambda(Y)`.
    pub fn sample_particle<R: Rng + ?Sized>(&self, rng: &mut R) -> Particle {
        let z = self.sample_germ(rng);
        match self.domain.kind {
            ParticleKind::Point => Particle::Point(z),
            ParticleKind::Segment => {
                let len = self.sample_size(rng);
                let phi = self.orientation_law.sample(0.0, PI, rng);
                Particle::Segment(Segment2D::new([z[0], z[1]], len, phi))
            }
            ParticleKind::Plate => {
                let r = self.sample_size(rng);
                let normal = match &self.orientation_law {
                    MarkLaw::Uniform => {
                        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        hemisphere_representative([v[0] / n, v[1] / n, v[2] / n])
                    }
                    law => {
                        let theta = law.sample(0.0, FRAC_PI_2, rng);
                        let az = 2.0 * PI * rng.gen::<f64>();
                        [theta.sin() * az.cos(), theta.sin() * az.sin(), theta.cos()]
                    }
                };
                Particle::Plate(Plate3D::new(z, r, normal))
            }
        }
    }

    /// `n` i.i.d. particles from the normalized measure.
    pub fn sample_particles<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Particle> {
        (0..n).map(|_| self.sample_particle(rng)).collect()
    }

    /// A Poisson process with this intensity measure.
    pub fn sample_poisson<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let mass = self.total_mass();
        if mass == 0.0 {
            return Configuration::empty();
        }
        let n = Poisson::new(mass).expect("positive finite mass").sample(rng) as usize;
        Configuration::new(self.sample_particles(n, rng))
    }
}

/// Free-function form of [`IntensityMeasure::sample_poisson`].
pub fn sample_poisson<R: Rng + ?Sized>(m: &IntensityMeasure, rng: &mut R) -> Configuration {
    m.sample_poisson(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson as PoissonPmf};

    #[test]
    fn zero_intensity_gives_empty() {
        let m = IntensityMeasure::uniform(Domain::unit_square(1.0, ParticleKind::Point), 0.0).unwrap();
        let mut rng = rng_from_seed(1);
        assert!(m.sample_poisson(&mut rng).is_empty());
    }

    #[test]
    fn rejects_bad_germ_density() {
        let d = Domain::unit_square(1.0, ParticleKind::Point);
        assert!(IntensityMeasure::uniform(d.clone(), f64::NAN).is_err());
        assert!(IntensityMeasure::uniform(d.clone(), -1.0).is_err());
        let g = GermDensity::Grid { shape: vec![2, 2], values: vec![1.0, 2.0, f64::INFINITY, 0.0] };
        assert!(IntensityMeasure::new(d, g, MarkLaw::Uniform, MarkLaw::Uniform).is_err());
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(Domain::new(vec![0.0, 0.0], vec![1.0, 0.0], 1.0, ParticleKind::Point).is_err());
        assert!(Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], 0.0, ParticleKind::Point).is_err());
        assert!(Domain::new(vec![0.0; 3], vec![1.0; 3], 1.0, ParticleKind::Segment).is_err());
        assert!(Domain::new(vec![0.0; 2], vec![1.0; 2], 1.0, ParticleKind::Plate).is_err());
    }

    #[test]
    fn grid_mass_and_support() {
        let d = Domain::unit_square(1.0, ParticleKind::Point);
        let g = GermDensity::Grid { shape: vec![2, 1], values: vec![0.0, 10.0] };
        let m = IntensityMeasure::new(d, g, MarkLaw::Uniform, MarkLaw::Uniform).unwrap();
        assert!((m.total_mass() - 5.0).abs() < 1e-12);
        let mut rng = rng_from_seed(2);
        for _ in 0..1000 {
            let p = m.sample_particle(&mut rng).as_point();
            assert!(p[0] >= 0.5);
        }
        assert_eq!(m.germ_density([0.25, 0.5, 0.0]), 0.0);
        assert_eq!(m.germ_density([0.75, 0.5, 0.0]), 10.0);
    }

    #[test]
    fn sampled_particles_are_in_domain() {
        let mut rng = rng_from_seed(3);
        for kind in [ParticleKind::Segment, ParticleKind::Plate, ParticleKind::Point] {
            let d = if kind == ParticleKind::Plate { Domain::unit_cube(0.3, kind) } else { Domain::unit_square(0.3, kind) };
            let m = IntensityMeasure::uniform(d.clone(), 50.0).unwrap();
            let x = m.sample_poisson(&mut rng);
            assert!(x.iter().all(|p| d.contains(p)));
            assert!(x.is_simple());
        }
    }

    #[test]
    fn inverse_cdf_law() {
        let d = Domain::unit_square(1.0, ParticleKind::Segment);
        let m = IntensityMeasure::new(d, GermDensity::Constant(1.0), MarkLaw::InverseCdf(vec![0.5, 0.5]), MarkLaw::InverseCdf(vec![0.0, 1.0])).unwrap();
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let s = *m.sample_particle(&mut rng).as_segment();
            assert_eq!(s.length, 0.5);
            assert!(s.orientation < 1.0);
        }
        let d = Domain::unit_square(1.0, ParticleKind::Segment);
        assert!(IntensityMeasure::new(d, GermDensity::Constant(1.0), MarkLaw::InverseCdf(vec![0.5, 2.0]), MarkLaw::Uniform).is_err());
    }

    #[test]
    fn poisson_count_mean() {
        let m = IntensityMeasure::uniform(Domain::unit_square(1.0, ParticleKind::Point), 1.0).unwrap();
        let mut rng = rng_from_seed(5);
        let n = 100_000;
        let total: usize = (0..n).map(|_| m.sample_poisson(&mut rng).len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 1.0).abs() <= 3.0 / (n as f64).sqrt(), "mean count {mean}");
    }

    #[test]
    fn poisson_count_histogram_chi_square() {
        let lambda = 4.0;
        let m = IntensityMeasure::uniform(Domain::unit_square(1.0, ParticleKind::Point), lambda).unwrap();
        let mut rng = rng_from_seed(6);
        let n = 20_000;
        let cap = 10;
        let mut counts = vec![0usize; cap + 1];
        for _ in 0..n {
            counts[m.sample_poisson(&mut rng).len().min(cap)] += 1;
        }
        let pmf = PoissonPmf::new(lambda).unwrap();
        let mut chi2 = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let p = if k < cap { pmf.pmf(k as u64) } else { 1.0 - (0..cap).map(|j| pmf.pmf(j as u64)).sum::<f64>() };
            let e = p * n as f64;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        let p_value = 1.0 - ChiSquared::new(cap as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.01, "chi2 {chi2} p {p_value}");
    }

    #[test]
    fn hemisphere_normals_are_upper() {
        let m = IntensityMeasure::uniform(Domain::unit_cube(0.5, ParticleKind::Plate), 1.0).unwrap();
        let mut rng = rng_from_seed(7);
        let mut mean_abs_x = 0.0;
        for _ in 0..10_000 {
            let p = *m.sample_particle(&mut rng).as_plate();
            assert!(p.normal[2] >= 0.0);
            mean_abs_x += p.normal[0].abs();
        }
        // uniform axes: E|n_x| = 1/2
        assert!((mean_abs_x / 10_000.0 - 0.5).abs() < 0.02);
    }
}

use crate::error::{Error, Result};
use crate::estimate::{batch_mean_se, Method, MomentEstimate};
use crate::geometry::{plate_area, plate_pair_chord_length, plates_intersect, plates_triple_intersect, segments_intersect};

use super::{check_new_points, Configuration, IntensityMeasure, Particle, ParticleKind};

/// Which statistic vector `G` a model uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// `G = (L, N)`: total length and number of crossing pairs.
    Segment,
    /// `G = (S, L, N)`: total area, total chord length of pairs and number
    /// of intersecting triples.
    Plate,
    /// `G = (n, s)`: point count and number of unordered `r`-close pairs.
    Strauss { r: f64 },
}

impl ModelKind {
    pub fn statistic_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::Segment => &["L", "N"],
            ModelKind::Plate => &["S", "L", "N"],
            ModelKind::Strauss { .. } => &["n", "s"],
        }
    }

    pub fn particle_kind(&self) -> ParticleKind {
        match self {
            ModelKind::Segment => ParticleKind::Segment,
            ModelKind::Plate => ParticleKind::Plate,
            ModelKind::Strauss { .. } => ParticleKind::Point,
        }
    }
}

/// Values of the statistic vector, labeled by the model's component names.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector {
    pub names: &'static [&'static str],
    pub values: Vec<f64>,
}

impl StatVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn dot(&self, nu: &[f64]) -> f64 {
        self.values.iter().zip(nu).map(|(g, v)| g * v).sum()
    }
}

/// Unnormalized density `exp(nu . G(x))` with respect to the Poisson
/// process driven by `reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsModel {
    pub kind: ModelKind,
    pub reference: IntensityMeasure,
    pub nu: Vec<f64>,
}

type Stats = [f64; 3];

impl GibbsModel {
    /// Interacting segments; requires `nu2 <= 0`.
    pub fn segment(reference: IntensityMeasure, nu1: f64, nu2: f64) -> Result<Self> {
        Self::build(ModelKind::Segment, reference, vec![nu1, nu2])
    }

    /// Interacting plates; requires `nu2 <= 0` and `nu3 <= 0`.
    pub fn plate(reference: IntensityMeasure, nu: [f64; 3]) -> Result<Self> {
        Self::build(ModelKind::Plate, reference, nu.to_vec())
    }

    /// Strauss process `beta^n gamma^s`; requires `beta > 0`, `0 < gamma <= 1`, `r > 0`.
    pub fn strauss(reference: IntensityMeasure, beta: f64, gamma: f64, r: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Constraint(format!("strauss beta must be positive, got {beta}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Constraint(format!("strauss gamma must lie in (0, 1], got {gamma}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Constraint(format!("strauss interaction radius must be positive, got {r}")));
        }
        Self::build(ModelKind::Strauss { r }, reference, vec![beta.ln(), gamma.ln()])
    }

    /// Builds a model from raw parameters, reporting every violated constraint.
    pub fn build(kind: ModelKind, reference: IntensityMeasure, nu: Vec<f64>) -> Result<Self> {
        let violations = Self::violations(&kind, &reference, &nu);
        if !violations.is_empty() {
            return Err(Error::Constraint(violations.join("; ")));
        }
        Ok(Self { kind, reference, nu })
    }

    pub fn violations(kind: &ModelKind, reference: &IntensityMeasure, nu: &[f64]) -> Vec<String> {
        let mut v = Vec::new();
        let names = kind.statistic_names();
        if nu.len() != names.len() {
            v.push(format!("expected {} parameters, got {}", names.len(), nu.len()));
            return v;
        }
        if nu.iter().any(|x| !x.is_finite()) {
            v.push("parameters must be finite".to_string());
        }
        match kind {
            ModelKind::Segment => {
                if nu[1] > 0.0 {
                    v.push(format!("segment model requires nu2 <= 0, got {}", nu[1]));
                }
            }
            ModelKind::Plate => {
                for i in [1, 2] {
                    if nu[i] > 0.0 {
                        v.push(format!("plate model requires nu{} <= 0, got {}", i + 1, nu[i]));
                    }
                }
            }
            ModelKind::Strauss { .. } => {
                if nu[1] > 0.0 {
                    v.push(format!("strauss gamma must be <= 1, got {}", nu[1].exp()));
                }
            }
        }
        if reference.domain.kind != kind.particle_kind() {
            v.push(format!("model needs {} particles, reference measure has {}", kind.particle_kind().as_str(), reference.domain.kind.as_str()));
        }
        v
    }

    pub fn statistic_names(&self) -> &'static [&'static str] {
        self.kind.statistic_names()
    }

    pub fn dim(&self) -> usize {
        self.statistic_names().len()
    }

    fn stat_vector(&self, s: Stats) -> StatVector {
        StatVector { names: self.statistic_names(), values: s[..self.dim()].to_vec() }
    }

    #[inline]
    fn dot(&self, s: &Stats) -> f64 {
        self.nu.iter().zip(s).map(|(a, b)| a * b).sum()
    }

    /// `G(U_x)`.
    pub fn statistics(&self, x: &[Particle]) -> StatVector {
        self.stat_vector(self.raw_statistics(x))
    }

    fn raw_statistics(&self, x: &[Particle]) -> Stats {
        let n = x.len();
        match self.kind {
            ModelKind::Segment => {
                let mut length = 0.0;
                let mut crossings = 0.0;
                for i in 0..n {
                    let s = x[i].as_segment();
                    length += s.length;
                    for t in &x[i + 1..] {
                        if segments_intersect(s, t.as_segment()) {
                            crossings += 1.0;
                        }
                    }
                }
                [length, crossings, 0.0]
            }
            ModelKind::Plate => {
                let plates: Vec<_> = x.iter().map(|p| *p.as_plate()).collect();
                let area = plates.iter().map(plate_area).sum();
                let mut chord = 0.0;
                let mut adjacent = vec![false; n * n];
                for i in 0..n {
                    for j in i + 1..n {
                        if plates_intersect(&plates[i], &plates[j]) {
                            adjacent[i * n + j] = true;
                            chord += plate_pair_chord_length(&plates[i], &plates[j]);
                        }
                    }
                }
                let mut triples = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        if !adjacent[i * n + j] {
                            continue;
                        }
                        for k in j + 1..n {
                            if adjacent[i * n + k] && adjacent[j * n + k] && plates_triple_intersect(&plates[i], &plates[j], &plates[k]) {
                                triples += 1.0;
                            }
                        }
                    }
                }
                [area, chord, triples]
            }
            ModelKind::Strauss { r } => {
                let r2 = r * r;
                let mut close = 0.0;
                for i in 0..n {
                    let p = x[i].as_point();
                    for q in &x[i + 1..] {
                        if dist2(p, q.as_point()) <= r2 {
                            close += 1.0;
                        }
                    }
                }
                [n as f64, close, 0.0]
            }
        }
    }

    /// `G(U_{x ∪ new}) - G(U_x)`, computed from the terms that involve at
    /// least one new particle. Inputs are not validated.
    fn raw_increment(&self, x: &[Particle], new: &[Particle]) -> Stats {
        match self.kind {
            ModelKind::Segment => {
                let mut length = 0.0;
                let mut crossings = 0.0;
                for (i, y) in new.iter().enumerate() {
                    let s = y.as_segment();
                    length += s.length;
                    crossings += x.iter().filter(|t| segments_intersect(s, t.as_segment())).count() as f64;
                    crossings += new[i + 1..].iter().filter(|t| segments_intersect(s, t.as_segment())).count() as f64;
                }
                [length, crossings, 0.0]
            }
            ModelKind::Plate => {
                let m = new.len();
                let mut area = 0.0;
                let mut chord = 0.0;
                let mut triples = 0.0;
                let mut hits: Vec<Vec<usize>> = Vec::with_capacity(m);
                for y in new {
                    let p = y.as_plate();
                    area += plate_area(p);
                    let mut h = Vec::new();
                    for (s, t) in x.iter().enumerate() {
                        let q = t.as_plate();
                        if plates_intersect(p, q) {
                            chord += plate_pair_chord_length(p, q);
                            h.push(s);
                        }
                    }
                    hits.push(h);
                }
                // one new plate and two old ones
                for (i, y) in new.iter().enumerate() {
                    let h = &hits[i];
                    for (a, &s) in h.iter().enumerate() {
                        for &t in &h[a + 1..] {
                            let (ps, pt) = (x[s].as_plate(), x[t].as_plate());
                            if plates_intersect(ps, pt) && plates_triple_intersect(y.as_plate(), ps, pt) {
                                triples += 1.0;
                            }
                        }
                    }
                }
                // pairs and triples of new plates
                for i in 0..m {
                    let pi = new[i].as_plate();
                    for j in i + 1..m {
                        let pj = new[j].as_plate();
                        if !plates_intersect(pi, pj) {
                            continue;
                        }
                        chord += plate_pair_chord_length(pi, pj);
                        for &s in &hits[i] {
                            if hits[j].contains(&s) && plates_triple_intersect(pi, pj, x[s].as_plate()) {
                                triples += 1.0;
                            }
                        }
                        for k in j + 1..m {
                            let pk = new[k].as_plate();
                            if plates_intersect(pi, pk) && plates_intersect(pj, pk) && plates_triple_intersect(pi, pj, pk) {
                                triples += 1.0;
                            }
                        }
                    }
                }
                [area, chord, triples]
            }
            ModelKind::Strauss { r } => {
                let r2 = r * r;
                let mut close = 0.0;
                for (i, y) in new.iter().enumerate() {
                    let p = y.as_point();
                    close += x.iter().filter(|q| dist2(p, q.as_point()) <= r2).count() as f64;
                    close += new[i + 1..].iter().filter(|q| dist2(p, q.as_point()) <= r2).count() as f64;
                }
                [new.len() as f64, close, 0.0]
            }
        }
    }

    /// `log p~(x) = nu . G(U_x)`, without the normalizing constant.
    pub fn unnormalized_log_density(&self, x: &[Particle]) -> f64 {
        self.dot(&self.raw_statistics(x))
    }

    /// `Q_m G(U_x) = G(U_{x ∪ new}) - G(U_x)`.
    pub fn q_m(&self, x: &[Particle], new: &[Particle]) -> Result<StatVector> {
        check_new_points(x, new, "q_m")?;
        Ok(self.stat_vector(self.raw_increment(x, new)))
    }

    /// `Q_m G` assembled as the sum of the differences `D^{|J|}G` over all
    /// nonempty subsets `J` of the new particles.
    pub fn q_m_from_differences(&self, x: &[Particle], new: &[Particle]) -> Result<StatVector> {
        check_new_points(x, new, "q_m")?;
        let m = new.len();
        let mut total = vec![0.0; self.dim()];
        let mut subset = Vec::with_capacity(m);
        for mask in 1u32..(1u32 << m) {
            subset.clear();
            subset.extend((0..m).filter(|i| mask >> i & 1 == 1).map(|i| new[i]));
            let d = self.raw_difference(x, &subset);
            for (t, v) in total.iter_mut().zip(d) {
                *t += v;
            }
        }
        Ok(StatVector { names: self.statistic_names(), values: total })
    }

    /// `D^n G(U_x) = sum_{J ⊆ [n]} (-1)^{n-|J|} G(U_{x ∪ points_J})`.
    pub fn difference(&self, x: &[Particle], points: &[Particle]) -> Result<StatVector> {
        check_new_points(x, points, "difference")?;
        Ok(StatVector { names: self.statistic_names(), values: self.raw_difference(x, points) })
    }

    fn raw_difference(&self, x: &[Particle], points: &[Particle]) -> Vec<f64> {
        let n = points.len();
        let mut total = vec![0.0; self.dim()];
        let mut union: Vec<Particle> = Vec::with_capacity(x.len() + n);
        for mask in 0u32..(1u32 << n) {
            union.clear();
            union.extend_from_slice(x);
            union.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| points[i]));
            let sign = if (n - mask.count_ones() as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
            let g = self.raw_statistics(&union);
            for (t, v) in total.iter_mut().zip(g) {
                *t += sign * v;
            }
        }
        total
    }

    /// `log lambda*_n(points, x) = nu . Q_n G(U_x)`. Inputs are not validated.
    #[inline]
    pub fn log_conditional_intensity_unchecked(&self, points: &[Particle], x: &[Particle]) -> f64 {
        self.dot(&self.raw_increment(x, points))
    }

    /// Conditional intensity of order `n = points.len()`:
    /// `p~(x ∪ points) / p~(x)`.
    pub fn conditional_intensity(&self, points: &[Particle], x: &[Particle]) -> Result<f64> {
        check_new_points(x, points, "conditional intensity")?;
        Ok(self.log_conditional_intensity_unchecked(points, x).exp())
    }

    /// Sample mean of `lambda*(u, .)` over configurations drawn from the
    /// model, with a batch-means standard error.
    pub fn intensity_function(&self, u: &Particle, sample: &[Configuration]) -> Result<MomentEstimate> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        let values: Vec<f64> = sample.iter().map(|x| self.log_conditional_intensity_unchecked(std::slice::from_ref(u), x).exp()).collect();
        let (m, se) = batch_mean_se(&values, 20);
        Ok(MomentEstimate::new(m, se, sample.len(), 0, Method::Simulation))
    }

    /// Log-weight `nu_1 g_1(y)` of the first-order component of `G` for a
    /// single particle (`g_1` = length, area or 1).
    pub fn first_order_log_weight(&self, p: &Particle) -> f64 {
        let g = match (self.kind, p) {
            (ModelKind::Segment, Particle::Segment(s)) => s.length,
            (ModelKind::Plate, Particle::Plate(q)) => plate_area(q),
            (ModelKind::Strauss { .. }, _) => 1.0,
            _ => panic!("particle kind does not match the model"),
        };
        self.nu[0] * g
    }

    /// `sup_y nu_1 g_1(y)`.
    pub fn first_order_log_weight_bound(&self) -> f64 {
        let b = self.reference.domain.mark_bound;
        let g_max = match self.kind {
            ModelKind::Segment => b,
            ModelKind::Plate => std::f64::consts::PI * b * b,
            ModelKind::Strauss { .. } => 1.0,
        };
        match self.kind {
            ModelKind::Strauss { .. } => self.nu[0],
            _ => (self.nu[0] * g_max).max(0.0),
        }
    }

    /// `nu . G - nu_1 G_1`: the interaction part of the log density.
    pub fn interaction_log_weight(&self, x: &[Particle]) -> f64 {
        let s = self.raw_statistics(x);
        self.dot(&s) - self.nu[0] * s[0]
    }
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

//! Marked particles and the intersection predicates behind the geometric
//! U-statistics: crossings of planar segments, chords of pairs of circular
//! plates and common points of plate triples.
//!
//! All particles are closed sets. Comparisons use the single absolute
//! tolerance [`GEOM_EPS`], which assumes coordinates of order one.

use std::f64::consts::PI;

/// Absolute tolerance for every geometric comparison in this module.
pub const GEOM_EPS: f64 = 1e-12;

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
fn cross2(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// A planar segment given by its midpoint, length and axial orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2D {
    pub center: Vec2,
    pub length: f64,
    /// Axial orientation in `[0, pi)`.
    pub orientation: f64,
}

impl Segment2D {
    /// Builds a segment, reducing the orientation modulo `pi`.
    pub fn new(center: Vec2, length: f64, orientation: f64) -> Self {
        let mut phi = orientation.rem_euclid(PI);
        if phi >= PI {
            phi = 0.0;
        }
        Self { center, length, orientation: phi }
    }

    pub fn is_valid(&self, max_length: f64) -> bool {
        self.length > 0.0
            && self.length <= max_length
            && (0.0..PI).contains(&self.orientation)
            && self.center.iter().all(|c| c.is_finite())
    }

    pub fn endpoints(&self) -> (Vec2, Vec2) {
        segment_endpoints(self)
    }
}

/// A circular plate (closed disk) in space. The normal is the upper
/// hemisphere representative of its axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plate3D {
    pub center: Vec3,
    pub radius: f64,
    pub normal: Vec3,
}

impl Plate3D {
    /// Builds a plate, normalizing `normal` and flipping it to the upper
    /// hemisphere. Panics on a zero normal.
    pub fn new(center: Vec3, radius: f64, normal: Vec3) -> Self {
        let n = norm3(normal);
        assert!(n > 0.0, "plate normal must be nonzero");
        Self { center, radius, normal: hemisphere_representative(scale3(normal, 1.0 / n)) }
    }

    pub fn is_valid(&self, max_radius: f64) -> bool {
        self.radius > 0.0
            && self.radius <= max_radius
            && (norm3(self.normal) - 1.0).abs() <= 1e-12
            && self.normal[2] >= 0.0
    }

    /// Offset of the carrier plane `normal . p = offset`.
    #[inline]
    fn offset(&self) -> f64 {
        dot3(self.normal, self.center)
    }

    /// Parameter interval of the closed disk along the line `p0 + t u`
    /// (`u` a unit vector lying in the carrier plane).
    fn clip_line(&self, p0: Vec3, u: Vec3) -> Option<(f64, f64)> {
        let w = sub3(p0, self.center);
        let b = dot3(w, u);
        let disc = b * b - dot3(w, w) + self.radius * self.radius;
        if disc < -GEOM_EPS {
            return None;
        }
        let h = disc.max(0.0).sqrt();
        Some((-b - h, -b + h))
    }

    fn contains_coplanar(&self, p: Vec3) -> bool {
        let d = sub3(p, self.center);
        dot3(d, d) <= self.radius * self.radius + GEOM_EPS
    }
}

/// Flip a unit vector to the closed upper hemisphere; ties on the equator
/// are broken by the sign of y, then x.
pub fn hemisphere_representative(n: Vec3) -> Vec3 {
    let flip = n[2] < 0.0 || (n[2] == 0.0 && (n[1] < 0.0 || (n[1] == 0.0 && n[0] < 0.0)));
    if flip {
        [-n[0], -n[1], -n[2] + 0.0]
    } else {
        [n[0], n[1], n[2] + 0.0]
    }
}

pub fn segment_endpoints(s: &Segment2D) -> (Vec2, Vec2) {
    let (sin, cos) = s.orientation.sin_cos();
    let h = 0.5 * s.length;
    (
        [s.center[0] - h * cos, s.center[1] - h * sin],
        [s.center[0] + h * cos, s.center[1] + h * sin],
    )
}

#[inline]
fn within_box(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p[0] >= a[0].min(b[0]) - GEOM_EPS
        && p[0] <= a[0].max(b[0]) + GEOM_EPS
        && p[1] >= a[1].min(b[1]) - GEOM_EPS
        && p[1] <= a[1].max(b[1]) + GEOM_EPS
}

/// Closed-segment intersection test. Touching endpoints and collinear
/// overlaps count as intersecting.
pub fn segments_intersect(s: &Segment2D, t: &Segment2D) -> bool {
    let (p1, p2) = segment_endpoints(s);
    let (q1, q2) = segment_endpoints(t);
    let d1 = cross2(q1, q2, p1);
    let d2 = cross2(q1, q2, p2);
    let d3 = cross2(p1, p2, q1);
    let d4 = cross2(p1, p2, q2);
    let strictly_apart = |a: f64, b: f64| (a > GEOM_EPS && b < -GEOM_EPS) || (a < -GEOM_EPS && b > GEOM_EPS);
    if strictly_apart(d1, d2) && strictly_apart(d3, d4) {
        return true;
    }
    (d1.abs() <= GEOM_EPS && within_box(q1, q2, p1))
        || (d2.abs() <= GEOM_EPS && within_box(q1, q2, p2))
        || (d3.abs() <= GEOM_EPS && within_box(p1, p2, q1))
        || (d4.abs() <= GEOM_EPS && within_box(p1, p2, q2))
}

pub fn plate_area(p: &Plate3D) -> f64 {
    PI * p.radius * p.radius
}

/// Line `p0 + t u` (unit `u`) shared by the two carrier planes, or `None`
/// for parallel planes.
fn plane_pair_line(p1: &Plate3D, p2: &Plate3D) -> Option<(Vec3, Vec3)> {
    let u = cross3(p1.normal, p2.normal);
    let uu = dot3(u, u);
    if uu <= GEOM_EPS {
        return None;
    }
    let d1 = p1.offset();
    let d2 = p2.offset();
    let p0 = scale3(add3(scale3(cross3(p2.normal, u), d1), scale3(cross3(u, p1.normal), d2)), 1.0 / uu);
    Some((p0, scale3(u, 1.0 / uu.sqrt())))
}

/// Parameter interval of `p1 ∩ p2` along the shared line.
fn chord_interval(p1: &Plate3D, p2: &Plate3D) -> Option<(Vec3, Vec3, f64, f64)> {
    let (p0, u) = plane_pair_line(p1, p2)?;
    let (a0, a1) = p1.clip_line(p0, u)?;
    let (b0, b1) = p2.clip_line(p0, u)?;
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    if hi < lo - GEOM_EPS {
        return None;
    }
    Some((p0, u, lo, hi.max(lo)))
}

/// Length of the segment `p1 ∩ p2`. Parallel (including coplanar) plates
/// give 0.
pub fn plate_pair_chord_length(p1: &Plate3D, p2: &Plate3D) -> f64 {
    match chord_interval(p1, p2) {
        Some((_, _, lo, hi)) => hi - lo,
        None => 0.0,
    }
}

/// Whether two plates share a point (non-parallel planes only).
pub fn plates_intersect(p1: &Plate3D, p2: &Plate3D) -> bool {
    chord_interval(p1, p2).is_some()
}

/// Whether three plates share a common point. The three carrier planes
/// must meet in a single well-conditioned point; otherwise `false`.
pub fn plates_triple_intersect(p1: &Plate3D, p2: &Plate3D, p3: &Plate3D) -> bool {
    let c23 = cross3(p2.normal, p3.normal);
    let c31 = cross3(p3.normal, p1.normal);
    let c12 = cross3(p1.normal, p2.normal);
    let det = dot3(p1.normal, c23);
    if det.abs() < 1e-12 {
        return false;
    }
    // Frobenius condition number; rows are unit vectors so ||N||_F = sqrt(3).
    let inv_norm = (dot3(c23, c23) + dot3(c31, c31) + dot3(c12, c12)).sqrt() / det.abs();
    if 3f64.sqrt() * inv_norm > 1e12 {
        return false;
    }
    let p = scale3(
        add3(add3(scale3(c23, p1.offset()), scale3(c31, p2.offset())), scale3(c12, p3.offset())),
        1.0 / det,
    );
    p1.contains_coplanar(p) && p2.contains_coplanar(p) && p3.contains_coplanar(p)
}

/// Reference check for the triple predicate: clip the carrier line of
/// `p1 ∩ p2` to both disks, then test where it pierces the third plane.
pub fn plates_triple_intersect_by_chords(p1: &Plate3D, p2: &Plate3D, p3: &Plate3D) -> bool {
    let Some((p0, u, lo, hi)) = chord_interval(p1, p2) else {
        return false;
    };
    let denom = dot3(p3.normal, u);
    if denom.abs() < 1e-12 {
        return false;
    }
    let t = (p3.offset() - dot3(p3.normal, p0)) / denom;
    if t < lo - 1e-9 || t > hi + 1e-9 {
        return false;
    }
    p3.contains_coplanar(add3(p0, scale3(u, t)))
}

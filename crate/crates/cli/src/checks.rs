//! Exact invariant suites run by the `check` subcommand.

use gibbs_ustat::geometry::{plate_pair_chord_length, plates_triple_intersect, segments_intersect};
use gibbs_ustat::moments::square_term_weights;
use gibbs_ustat::process::{Domain, GibbsModel, IntensityMeasure, Particle, ParticleKind};
use gibbs_ustat::seeds::{derive_seed, rng_for};
use gibbs_ustat::ustat::{coefficient_table, difference_functional, difference_ustat_closed, enumerate_partition_family, eval_ustat, kernels, merge_pattern_count, product_expand_eval, UStatistic};
use rand::Rng;
use serde::Serialize;

/// One CSV row of `check`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

fn record(check: &str, passed: bool, detail: String) -> CheckRecord {
    CheckRecord { check: check.to_string(), passed, detail }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Non-increasing tuples of positive integers with sum at most `max_sum`.
pub fn order_tuples(max_sum: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, left: usize, cap: usize, out: &mut Vec<Vec<usize>>) {
        for k in 1..=cap.min(left) {
            prefix.push(k);
            out.push(prefix.clone());
            grow(prefix, left - k, k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), max_sum, max_sum, &mut out);
    out
}

/// `|Π| = Σ_j A_j` for every tuple with sum ≤ `max_sum`, spot cardinalities,
/// the ten merge patterns of (3,2,1) and the plate `E N²` weights.
pub fn partition_algebra(max_sum: usize) -> Vec<CheckRecord> {
    let mut out = Vec::new();
    let tuples = order_tuples(max_sum);
    let mut bad = Vec::new();
    for t in &tuples {
        let family = enumerate_partition_family(t).map(|f| f.len() as u128);
        let table: Result<u128, _> = coefficient_table(t).map(|rows| rows.iter().map(|r| r.a).sum());
        if family.is_err() || family != table {
            bad.push(format!("{t:?}"));
        }
    }
    out.push(record("family_size_equals_sum_of_a", bad.is_empty(), format!("{} tuples, mismatches: [{}]", tuples.len(), bad.join(" "))));

    let spots: [(&[usize], usize); 6] = [(&[1, 1], 2), (&[2, 1], 3), (&[2, 2], 7), (&[3, 2], 13), (&[3, 3], 34), (&[3, 2, 1], 60)];
    let got: Vec<usize> = spots.iter().map(|(o, _)| enumerate_partition_family(o).map_or(0, |f| f.len())).collect();
    let ok = spots.iter().zip(&got).all(|((_, want), g)| want == g);
    out.push(record("family_spot_values", ok, format!("{got:?}")));

    let patterns = merge_pattern_count(&[1, 2, 3]).unwrap_or(0);
    out.push(record("merge_patterns_123", patterns == 10, format!("{patterns}")));

    // listed from six integration variables down to three
    let w: Vec<f64> = square_term_weights(3).into_iter().rev().collect();
    let want = [1.0 / 36.0, 0.25, 0.5, 1.0 / 6.0];
    let ok = w.len() == 4 && w.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15);
    out.push(record("plate_triple_square_weights", ok, format!("{w:?}")));
    out
}

fn segment_measure() -> IntensityMeasure {
    IntensityMeasure::uniform(Domain::unit_square(0.5, ParticleKind::Segment), 20.0).expect("valid measure")
}

fn plate_measure() -> IntensityMeasure {
    IntensityMeasure::uniform(Domain::unit_cube(0.4, ParticleKind::Plate), 10.0).expect("valid measure")
}

/// Difference operators, `Q_m` identity, conditional intensity as a density
/// ratio and the product expansion, each on `n_cases` random configurations.
pub fn operator_identities(n_cases: usize, seed: u64) -> Vec<CheckRecord> {
    let tol = 1e-9;
    let mut out = Vec::new();
    let seg = segment_measure();
    let plate = plate_measure();
    let cases: Vec<(&str, &IntensityMeasure, Vec<UStatistic>)> = vec![
        ("segment", &seg, vec![kernels::segment_length(), kernels::segment_crossings()]),
        ("plate", &plate, vec![kernels::plate_area_kernel(), kernels::plate_chords(), kernels::plate_triples()]),
    ];

    for (name, m, fs) in &cases {
        let mut fails = 0;
        let mut checked = 0;
        for c in 0..n_cases {
            let mut rng = rng_for(seed, "difference", c as u64);
            let x = m.sample_particles(rng.gen_range(0..12), &mut rng);
            for f in fs {
                let k = f.order();
                for n in 1..=k + 1 {
                    let pts = m.sample_particles(n, &mut rng);
                    let direct = difference_functional(&|y: &[Particle]| eval_ustat(f, y), &x, &pts);
                    let closed = if n <= k { difference_ustat_closed(f, &x, &pts).unwrap_or(f64::NAN) } else { 0.0 };
                    checked += 1;
                    if !rel_close(direct, closed, tol) {
                        fails += 1;
                    }
                }
            }
        }
        out.push(record(&format!("difference_closed_form_{name}"), fails == 0, format!("{checked} comparisons, {fails} failures")));
    }

    let models = [
        ("segment", GibbsModel::segment(seg.clone(), 0.3, -0.5).expect("valid model")),
        ("plate", GibbsModel::plate(plate.clone(), [0.2, -0.5, -0.3]).expect("valid model")),
    ];
    for (name, model) in &models {
        let (mut q_fail, mut ci_fail) = (0, 0);
        for c in 0..n_cases {
            let mut rng = rng_for(seed, &format!("q-{name}"), c as u64);
            let x = model.reference.sample_particles(rng.gen_range(0..10), &mut rng);
            let m = rng.gen_range(1..=4);
            let new = model.reference.sample_particles(m, &mut rng);
            let union: Vec<Particle> = x.iter().chain(&new).copied().collect();
            let direct: Vec<f64> = model.statistics(&union).values.iter().zip(model.statistics(&x).values).map(|(a, b)| a - b).collect();
            let fast = model.q_m(&x, &new).expect("distinct particles").values;
            let sum = model.q_m_from_differences(&x, &new).expect("distinct particles").values;
            if !(0..direct.len()).all(|i| rel_close(direct[i], fast[i], tol) && rel_close(direct[i], sum[i], tol)) {
                q_fail += 1;
            }
            let ratio = (model.unnormalized_log_density(&union) - model.unnormalized_log_density(&x)).exp();
            let ci = model.conditional_intensity(&new, &x).unwrap_or(f64::NAN);
            if !rel_close(ci, ratio, tol) {
                ci_fail += 1;
            }
        }
        out.push(record(&format!("q_m_identity_{name}"), q_fail == 0, format!("{n_cases} cases, {q_fail} failures")));
        out.push(record(&format!("conditional_intensity_ratio_{name}"), ci_fail == 0, format!("{n_cases} cases, {ci_fail} failures")));
    }

    let mut fails = 0;
    for c in 0..n_cases {
        let mut rng = rng_for(seed, "product", c as u64);
        let x = seg.sample_particles(rng.gen_range(0..8), &mut rng);
        let fs = [kernels::segment_length(), kernels::segment_crossings(), kernels::segment_crossings()];
        let refs: Vec<&UStatistic> = fs.iter().collect();
        let direct: f64 = refs.iter().map(|f| eval_ustat(f, &x)).product();
        let expanded = product_expand_eval(&refs, &x).unwrap_or(f64::NAN);
        if !rel_close(direct, expanded, tol) {
            fails += 1;
        }
    }
    out.push(record("product_expansion", fails == 0, format!("{n_cases} cases, {fails} failures")));
    out
}

/// Predicates are symmetric in their arguments.
pub fn geometry_symmetry(n_cases: usize, seed: u64) -> Vec<CheckRecord> {
    let seg = segment_measure();
    let plate = plate_measure();
    let mut fails = 0;
    for c in 0..n_cases {
        let mut rng = rng_for(seed, "symmetry", c as u64);
        let s = seg.sample_particles(2, &mut rng);
        let (s0, s1) = (s[0].as_segment(), s[1].as_segment());
        if segments_intersect(s0, s1) != segments_intersect(s1, s0) {
            fails += 1;
        }
        let p = plate.sample_particles(3, &mut rng);
        let (a, b, d) = (p[0].as_plate(), p[1].as_plate(), p[2].as_plate());
        if (plate_pair_chord_length(a, b) - plate_pair_chord_length(b, a)).abs() > 1e-9 {
            fails += 1;
        }
        let t = plates_triple_intersect(a, b, d);
        if [(b, a, d), (d, b, a), (a, d, b)].iter().any(|(u, v, w)| plates_triple_intersect(u, v, w) != t) {
            fails += 1;
        }
    }
    vec![record("geometry_symmetry", fails == 0, format!("{n_cases} cases, {fails} failures"))]
}

/// Distinct indices give distinct derived seeds.
pub fn seed_streams(n: u64, seed: u64) -> Vec<CheckRecord> {
    let mut seen: Vec<u64> = (0..n).map(|i| derive_seed(seed, "check", i)).collect();
    seen.sort_unstable();
    seen.dedup();
    vec![record("derived_seed_collisions", seen.len() as u64 == n, format!("{} distinct of {n}", seen.len()))]
}

/// All suites at the sizes used by the `check` subcommand.
pub fn run_checks(seed: u64) -> Vec<CheckRecord> {
    let mut out = partition_algebra(7);
    out.extend(operator_identities(100, seed));
    out.extend(geometry_symmetry(1000, seed));
    out.extend(seed_streams(10_000, seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_tuples_are_partitions_of_small_sums() {
        // number of integer partitions of 1..=5: 1 + 2 + 3 + 5 + 7
        assert_eq!(order_tuples(5).len(), 18);
        assert!(order_tuples(4).iter().all(|t| t.windows(2).all(|w| w[0] >= w[1])));
    }

    #[test]
    fn quick_suites_pass() {
        let rows: Vec<CheckRecord> = partition_algebra(5).into_iter().chain(operator_identities(10, 1)).chain(geometry_symmetry(50, 1)).chain(seed_streams(1000, 1)).collect();
        for r in &rows {
            assert!(r.passed, "{r:?}");
        }
    }
}

//! Browser demo: sample interacting segments or a Strauss pattern with the
//! birth-death-move sampler, and tabulate partition coefficients.

use gibbs_ustat::mcmc::{run_chain, ChainParams};
use gibbs_ustat::process::{Domain, GibbsModel, IntensityMeasure, Particle, ParticleKind};
use gibbs_ustat::ustat::{coefficient_table, enumerate_partition_family, merge_pattern_count};
use wasm_bindgen::prelude::*;

/// Final state of a chain: flat coordinates plus the statistic vector.
#[wasm_bindgen]
pub struct Sample {
    coords: Vec<f64>,
    stats: Vec<f64>,
    acceptance: f64,
}

#[wasm_bindgen]
impl Sample {
    /// Segments as `x1, y1, x2, y2` quadruples; points as `x, y` pairs.
    pub fn coords(&self) -> Vec<f64> {
        self.coords.clone()
    }

    /// `(L, N)` for segments, `(n, s)` for Strauss points.
    pub fn stats(&self) -> Vec<f64> {
        self.stats.clone()
    }

    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }
}

fn run(model: &GibbsModel, steps: u32, seed: u32) -> Result<Sample, String> {
    let params = ChainParams::new(steps as usize, 1, 1, 0.2, seed as u64).map_err(|e| e.to_string())?;
    let out = run_chain(model, &params).map_err(|e| e.to_string())?;
    let state = out.states.last().ok_or("chain produced no state")?;
    let mut coords = Vec::new();
    for p in state.iter() {
        match p {
            Particle::Segment(s) => {
                let (a, b) = s.endpoints();
                coords.extend([a[0], a[1], b[0], b[1]]);
            }
            Particle::Point(z) => coords.extend([z[0], z[1]]),
            Particle::Plate(_) => return Err("plates are not drawn".into()),
        }
    }
    let total = out.acceptance.proposed.iter().sum::<u64>().max(1);
    let accepted = out.acceptance.accepted.iter().sum::<u64>();
    Ok(Sample { coords, stats: model.statistics(state).values, acceptance: accepted as f64 / total as f64 })
}

pub fn segments(rho: f64, max_length: f64, nu1: f64, nu2: f64, steps: u32, seed: u32) -> Result<Sample, String> {
    let domain = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], max_length, ParticleKind::Segment).map_err(|e| e.to_string())?;
    let reference = IntensityMeasure::uniform(domain, rho).map_err(|e| e.to_string())?;
    let model = GibbsModel::segment(reference, nu1, nu2).map_err(|e| e.to_string())?;
    run(&model, steps, seed)
}

pub fn strauss(beta: f64, gamma: f64, r: f64, steps: u32, seed: u32) -> Result<Sample, String> {
    let reference = IntensityMeasure::uniform(Domain::unit_square(1.0, ParticleKind::Point), 1.0).map_err(|e| e.to_string())?;
    let model = GibbsModel::strauss(reference, beta, gamma, r).map_err(|e| e.to_string())?;
    run(&model, steps, seed)
}

/// HTML table of `A` by `j`-vector, with the family size and merge-pattern
/// count underneath.
pub fn partitions_html(orders: &str) -> Result<String, String> {
    let mut ks: Vec<usize> = orders.split([',', ' ']).filter(|t| !t.is_empty()).map(|t| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a positive integer"))).collect::<Result<_, _>>()?;
    ks.sort_unstable_by(|a, b| b.cmp(a));
    if ks.iter().sum::<usize>() > 10 {
        return Err("keep the sum of orders at most 10 in the browser".into());
    }
    let table = coefficient_table(&ks).map_err(|e| e.to_string())?;
    let family = enumerate_partition_family(&ks).map_err(|e| e.to_string())?;
    let patterns = merge_pattern_count(&ks).map_err(|e| e.to_string())?;
    let mut html = String::from("<table><tr><th>j</th><th>A</th><th>blocks</th></tr>");
    for r in &table {
        let j: Vec<String> = r.j.iter().map(|x| x.to_string()).collect();
        html.push_str(&format!("<tr><td>({})</td><td>{}</td><td>{}</td></tr>", j.join(", "), r.a, r.blocks));
    }
    html.push_str(&format!("</table><p>|&Pi;| = {} = &Sigma; A, {} merge patterns</p>", family.len(), patterns));
    Ok(html)
}

#[wasm_bindgen]
pub fn sample_segments(rho: f64, max_length: f64, nu1: f64, nu2: f64, steps: u32, seed: u32) -> Result<Sample, JsError> {
    segments(rho, max_length, nu1, nu2, steps, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample_strauss(beta: f64, gamma: f64, r: f64, steps: u32, seed: u32) -> Result<Sample, JsError> {
    strauss(beta, gamma, r, steps, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn partition_table(orders: &str) -> Result<String, JsError> {
    partitions_html(orders).map_err(|e| JsError::new(&e))
}

/// Fresh seed from the browser's entropy source.
#[wasm_bindgen]
pub fn random_seed() -> u32 {
    let mut b = [0u8; 4];
    getrandom::getrandom(&mut b).expect("entropy source available");
    u32::from_le_bytes(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_sample_is_deterministic() {
        let a = segments(20.0, 0.3, 0.0, -0.5, 5000, 7).unwrap();
        let b = segments(20.0, 0.3, 0.0, -0.5, 5000, 7).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.coords.len() % 4, 0);
        assert_eq!(a.stats.len(), 2);
        assert!(a.acceptance > 0.0);
    }

    #[test]
    fn strauss_points_stay_in_the_square() {
        let s = strauss(50.0, 0.2, 0.08, 5000, 3).unwrap();
        assert_eq!(s.coords.len() / 2, s.stats[0] as usize);
        assert!(s.coords.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(segments(20.0, 0.3, 0.0, 0.5, 10, 1).is_err());
        assert!(strauss(10.0, 1.5, 0.1, 10, 1).is_err());
        assert!(partitions_html("3,x").is_err());
    }

    #[test]
    fn partition_table_for_three_two_one() {
        let html = partitions_html("1,2,3").unwrap();
        assert!(html.contains("|&Pi;| = 60"));
        assert!(html.contains("10 merge patterns"));
    }
}

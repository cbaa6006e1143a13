//! Experiment configuration: a TOML file with the key schema below.
//!
//! ```toml
//! seed = 7
//! out = "results.csv"          # optional
//!
//! [model]
//! kind = "segment"             # segment | plate | strauss
//! lo = [0.0, 0.0]
//! hi = [1.0, 1.0]
//! mark_bound = 0.5             # b: max segment length / plate radius
//! rho = 40.0                   # or { shape = [2, 2], values = [..] }
//! size_law = [0.1, 0.5]        # optional inverse-CDF table, else uniform
//! orientation_law = [0.0, 3.1] # optional inverse-CDF table, else uniform
//! nu = [0.0, -0.5]             # segment: 2 values, plate: 3 values
//! # strauss only: beta, gamma, r and an optional count_box = { lo, hi }
//!
//! [sampler]
//! burn_in = 10000
//! thinning = 50                # optional, default from the model
//! n_samples = 2000
//! n_chains = 4
//! move_prob = 0.2
//!
//! [estimator]
//! n_nodes = 20000
//! n_inner = 16
//! pool_stride = 1              # each node uses every k-th pool configuration
//! n_replicates = 20000
//! targets = ["L", "N", "LN"]   # optional, default: means, squares, full product
//!
//! [clt]
//! levels = [1.0, 2.0, 4.0, 8.0]
//! replicates = 2000
//! n_nodes = 20000
//! n_inner = 16
//! ```

use std::path::{Path, PathBuf};

use gibbs_ustat::moments::{resolve_target, suite_targets};
use gibbs_ustat::process::{Domain, GermDensity, GibbsModel, IntensityMeasure, MarkLaw, ModelKind};
use gibbs_ustat::ustat::{kernels, UStatistic};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "wide_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub clt: CltSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Segment,
    Plate,
    Strauss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Constant(f64),
    Grid { shape: Vec<usize>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: KindSpec,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "one")]
    pub mark_bound: f64,
    pub rho: RhoSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_law: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_law: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_box: Option<BoxSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub burn_in: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thinning: Option<usize>,
    pub n_samples: usize,
    pub n_chains: usize,
    pub move_prob: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { burn_in: 10_000, thinning: None, n_samples: 2000, n_chains: 4, move_prob: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    pub n_nodes: usize,
    pub n_inner: usize,
    pub pool_stride: usize,
    pub n_replicates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<String>>,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self { n_nodes: 20_000, n_inner: 16, pool_stride: 1, n_replicates: 20_000, targets: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CltSpec {
    pub levels: Vec<f64>,
    pub replicates: usize,
    pub n_nodes: usize,
    pub n_inner: usize,
}

impl Default for CltSpec {
    fn default() -> Self {
        Self { levels: vec![1.0, 2.0, 4.0, 8.0], replicates: 2000, n_nodes: 20_000, n_inner: 16 }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    /// Malformed TOML, wrong types or unknown keys.
    Syntax(String),
    /// Every violated constraint.
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Syntax(m) => write!(f, "malformed config: {m}"),
            ConfigError::Invalid(v) => {
                writeln!(f, "{} constraint violation(s):", v.len())?;
                for x in v {
                    writeln!(f, "  - {x}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(v))
    }
}

/// TOML integers are signed: seeds above `i64::MAX` go out as strings.
mod wide_seed {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Wire {
        Int(i64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => Wire::Int(v).serialize(s),
            Err(_) => Wire::Text(seed.to_string()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        use serde::de::Error;
        match Wire::deserialize(d)? {
            Wire::Int(v) => u64::try_from(v).map_err(|_| D::Error::custom(format!("seed must be non-negative, got {v}"))),
            Wire::Text(t) => t.parse().map_err(|_| D::Error::custom(format!("seed '{t}' is not an unsigned 64-bit integer"))),
        }
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Hex SHA-256 of the emitted TOML, truncated to 16 characters.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.to_toml().as_bytes());
        h[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let m = &self.model;
        let positive = [
            ("sampler.n_samples", self.sampler.n_samples),
            ("sampler.n_chains", self.sampler.n_chains),
            ("estimator.n_replicates", self.estimator.n_replicates),
            ("clt.replicates", self.clt.replicates),
        ];
        for (name, x) in positive {
            if x == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        for (name, x) in [("estimator.n_nodes", self.estimator.n_nodes), ("clt.n_nodes", self.clt.n_nodes)] {
            if x < 2 {
                v.push(format!("{name} must be at least 2"));
            }
        }
        for (name, x) in [("estimator.n_inner", self.estimator.n_inner), ("estimator.pool_stride", self.estimator.pool_stride), ("clt.n_inner", self.clt.n_inner)] {
            if x == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if self.sampler.thinning == Some(0) {
            v.push("sampler.thinning must be positive".into());
        }
        if !(0.0..1.0).contains(&self.sampler.move_prob) {
            v.push(format!("sampler.move_prob must lie in [0, 1), got {}", self.sampler.move_prob));
        }
        if self.clt.levels.is_empty() {
            v.push("clt.levels must not be empty".into());
        }
        for a in &self.clt.levels {
            if !(*a >= 1.0 && a.is_finite()) {
                v.push(format!("clt level must be >= 1, got {a}"));
            }
        }
        let (has_nu, has_strauss) = (m.nu.is_some(), m.beta.is_some() || m.gamma.is_some() || m.r.is_some());
        match m.kind {
            KindSpec::Strauss => {
                if has_nu {
                    v.push("model.nu is not used by the strauss model; give beta, gamma and r".into());
                }
                for (name, x) in [("beta", m.beta), ("gamma", m.gamma), ("r", m.r)] {
                    if x.is_none() {
                        v.push(format!("model.{name} is required for the strauss model"));
                    }
                }
                if let Some(b) = m.beta {
                    if !(b > 0.0 && b.is_finite()) {
                        v.push(format!("model.beta must be positive, got {b}"));
                    }
                }
                if let Some(g) = m.gamma {
                    if !(g > 0.0 && g <= 1.0) {
                        v.push(format!("model.gamma must lie in (0, 1], got {g}"));
                    }
                }
                if let Some(r) = m.r {
                    if !(r > 0.0 && r.is_finite()) {
                        v.push(format!("model.r must be positive, got {r}"));
                    }
                }
                if let Some(b) = &m.count_box {
                    if b.lo.len() != m.lo.len() || b.hi.len() != m.lo.len() || b.lo.iter().zip(&b.hi).any(|(l, h)| !(h > l)) {
                        v.push("model.count_box must be a non-empty box of the window's dimension".into());
                    }
                }
            }
            KindSpec::Segment | KindSpec::Plate => {
                if has_strauss || m.count_box.is_some() {
                    v.push("model.beta, gamma, r and count_box apply only to the strauss model".into());
                }
                if !has_nu {
                    v.push("model.nu is required".into());
                }
            }
        }
        match self.reference() {
            Err(e) => v.push(e.to_string()),
            Ok(reference) => {
                if let Some((kind, nu)) = self.raw_parameters() {
                    v.extend(GibbsModel::violations(&kind, &reference, &nu).into_iter().map(|s| format!("model: {s}")));
                }
            }
        }
        if let (Some(targets), Ok(model)) = (&self.estimator.targets, self.build_model()) {
            let extra = self.extra_ustats();
            for t in targets {
                if t.is_empty() {
                    v.push("estimator.targets contains an empty target".into());
                } else if let Err(e) = resolve_target(&model, t, &extra) {
                    v.push(format!("estimator.targets: {e}"));
                }
            }
        }
        v
    }

    pub fn reference(&self) -> gibbs_ustat::Result<IntensityMeasure> {
        let m = &self.model;
        let kind = self.model_kind_hint().particle_kind();
        let domain = Domain::new(m.lo.clone(), m.hi.clone(), m.mark_bound, kind)?;
        let germ = match &m.rho {
            RhoSpec::Constant(r) => GermDensity::Constant(*r),
            RhoSpec::Grid { shape, values } => GermDensity::Grid { shape: shape.clone(), values: values.clone() },
        };
        let law = |t: &Option<Vec<f64>>| t.clone().map_or(MarkLaw::Uniform, MarkLaw::InverseCdf);
        IntensityMeasure::new(domain, germ, law(&m.size_law), law(&m.orientation_law))
    }

    fn model_kind_hint(&self) -> ModelKind {
        match self.model.kind {
            KindSpec::Segment => ModelKind::Segment,
            KindSpec::Plate => ModelKind::Plate,
            KindSpec::Strauss => ModelKind::Strauss { r: self.model.r.unwrap_or(1.0) },
        }
    }

    /// Model kind and `nu`, when the required keys are present.
    fn raw_parameters(&self) -> Option<(ModelKind, Vec<f64>)> {
        let m = &self.model;
        match m.kind {
            KindSpec::Strauss => Some((ModelKind::Strauss { r: m.r? }, vec![m.beta?.ln(), m.gamma?.ln()])),
            _ => Some((self.model_kind_hint(), m.nu.clone()?)),
        }
    }

    pub fn build_model(&self) -> gibbs_ustat::Result<GibbsModel> {
        let reference = self.reference()?;
        let m = &self.model;
        match m.kind {
            KindSpec::Strauss => {
                let missing = || gibbs_ustat::Error::Constraint("strauss model needs beta, gamma and r".into());
                GibbsModel::strauss(reference, m.beta.ok_or_else(missing)?, m.gamma.ok_or_else(missing)?, m.r.ok_or_else(missing)?)
            }
            _ => {
                let nu = m.nu.clone().ok_or_else(|| gibbs_ustat::Error::Constraint("model.nu is required".into()))?;
                GibbsModel::build(self.model_kind_hint(), reference, nu)
            }
        }
    }

    /// Statistics beyond the model's own: `C = μ(count_box)` for strauss.
    pub fn extra_ustats(&self) -> Vec<UStatistic> {
        self.model.count_box.iter().map(|b| kernels::box_count(b.lo.clone(), b.hi.clone())).collect()
    }

    pub fn targets(&self) -> Vec<String> {
        match &self.estimator.targets {
            Some(t) => t.clone(),
            None => {
                let mut t = suite_targets(&self.model_kind_hint());
                if self.model.count_box.is_some() {
                    t.extend(["C".to_string(), "CC".to_string()]);
                }
                t
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[model]\nkind = \"segment\"\nlo = [0.0, 0.0]\nhi = [1.0, 1.0]\nmark_bound = 0.5\nrho = 20.0\nnu = [0.0, -0.5]\n";

    #[test]
    fn minimal_segment_file() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.sampler, SamplerSpec::default());
        let m = c.build_model().unwrap();
        assert_eq!(m.nu, vec![0.0, -0.5]);
        assert_eq!(c.targets(), vec!["L", "N", "LL", "NN", "LN"]);
    }

    #[test]
    fn positive_interaction_is_named() {
        let text = MINIMAL.replace("-0.5", "0.1");
        match parse_config(&text) {
            Err(ConfigError::Invalid(v)) => assert!(v.iter().any(|s| s.contains("nu2 <= 0")), "{v:?}"),
            other => panic!("expected a constraint violation, got {other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let text = format!("{}[sampler]\nn_samples = 0\nmove_prob = 1.5\n[clt]\nlevels = [0.5]\n", MINIMAL.replace("rho = 20.0", "rho = -1.0"));
        let Err(ConfigError::Invalid(v)) = parse_config(&text) else { panic!("expected violations") };
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("rho = 20.0", "rho = 20.0\ncolour = 1");
        assert!(matches!(parse_config(&text), Err(ConfigError::Syntax(m)) if m.contains("colour")));
        let text = format!("{MINIMAL}[sampler]\nburnin = 5\n");
        assert!(matches!(parse_config(&text), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn strauss_requires_its_parameters() {
        let text = "seed = 1\n[model]\nkind = \"strauss\"\nlo = [0.0, 0.0]\nhi = [1.0, 1.0]\nrho = 1.0\nbeta = 20.0\n";
        let Err(ConfigError::Invalid(v)) = parse_config(text) else { panic!() };
        assert_eq!(v.len(), 2, "{v:?}");
        let ok = format!("{text}gamma = 0.5\nr = 0.07\ncount_box = {{ lo = [0.25, 0.25], hi = [0.75, 0.75] }}\n");
        let c = parse_config(&ok).unwrap();
        assert_eq!(c.targets(), vec!["n", "s", "nn", "ss", "ns", "C", "CC"]);
    }

    #[test]
    fn unresolvable_target() {
        let text = format!("{MINIMAL}[estimator]\ntargets = [\"L\", \"LQ\"]\n");
        let Err(ConfigError::Invalid(v)) = parse_config(&text) else { panic!() };
        assert!(v[0].contains("'Q'"), "{v:?}");
    }

    #[test]
    fn emit_and_reparse() {
        let grid = "seed = 9\nout = \"x.csv\"\n[model]\nkind = \"plate\"\nlo = [0.0, 0.0, 0.0]\nhi = [1.0, 1.0, 2.0]\nmark_bound = 0.3\nrho = { shape = [1, 1, 2], values = [3.0, 0.1] }\nsize_law = [0.05, 0.3]\nnu = [0.5, -0.25, -0.5]\n[estimator]\ntargets = [\"SLN\"]\n[sampler]\nthinning = 7\n";
        for text in [MINIMAL, grid] {
            let c = parse_config(text).unwrap();
            let back = parse_config(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.digest(), c.digest());
        }
    }

    #[test]
    fn shipped_configs_are_valid() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let c = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                c.build_model().unwrap();
                n += 1;
            }
        }
        assert!(n >= 3);
    }

    proptest::proptest! {
        #[test]
        fn round_trip_any_valid_numbers(seed in proptest::num::u64::ANY, n_nodes in 2usize..1_000_000, stride in 1usize..64, move_prob in 0.0f64..1.0, nu2 in -5.0f64..=0.0, rho in 0.01f64..500.0) {
            let mut c = parse_config(MINIMAL).unwrap();
            c.seed = seed;
            c.estimator.n_nodes = n_nodes;
            c.estimator.pool_stride = stride;
            c.sampler.move_prob = move_prob;
            c.model.nu = Some(vec![0.0, nu2]);
            c.model.rho = RhoSpec::Constant(rho);
            proptest::prop_assert!(c.violations().is_empty());
            let back = parse_config(&c.to_toml()).unwrap();
            proptest::prop_assert_eq!(back.digest(), c.digest());
            proptest::prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = parse_config(MINIMAL).unwrap();
        let mut b = a.clone();
        b.estimator.n_nodes += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }
}

//! Birth-death-move Metropolis-Hastings sampling of Gibbs models and
//! self-normalized importance sampling from Poisson proposals.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::estimate::{compensated_sum, mean_se, Method, MomentEstimate};
use crate::par_map;
use crate::process::{Configuration, GibbsModel, Particle};
use crate::seeds::{derive_seed, rng_for, rng_from_seed};

/// Draws per independent stream in the importance samplers.
const CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams {
    pub burn_in: usize,
    pub thinning: usize,
    pub n_samples: usize,
    pub move_prob: f64,
    pub seed: u64,
    /// Keep one [`StepRecord`] per step after burn-in.
    pub record_trace: bool,
}

impl ChainParams {
    pub fn new(burn_in: usize, thinning: usize, n_samples: usize, move_prob: f64, seed: u64) -> Result<Self> {
        let p = Self { burn_in, thinning, n_samples, move_prob, seed, record_trace: false };
        p.validate()?;
        Ok(p)
    }

    /// Burn-in `10^4`, thinning ten times the expected count of the first-order
    /// process, move probability 0.2.
    pub fn defaults_for(model: &GibbsModel, n_samples: usize, seed: u64) -> Self {
        let expected = model.reference.total_mass() * model.first_order_log_weight_bound().exp();
        let thinning = ((10.0 * expected).ceil() as usize).max(1);
        Self { burn_in: 10_000, thinning, n_samples, move_prob: 0.2, seed, record_trace: false }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.thinning < 1 {
            v.push("thinning must be at least 1".to_string());
        }
        if self.n_samples < 1 {
            v.push("n_samples must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.move_prob) {
            v.push(format!("move_prob must lie in [0, 1), got {}", self.move_prob));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Constraint(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    Birth,
    Death,
    Move,
}

impl Proposal {
    pub fn as_str(&self) -> &'static str {
        match self {
            Proposal::Birth => "birth",
            Proposal::Death => "death",
            Proposal::Move => "move",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    pub count: usize,
    pub proposal: Proposal,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl AcceptanceStats {
    fn record(&mut self, p: Proposal, accepted: bool) {
        self.proposed[p.index()] += 1;
        self.accepted[p.index()] += accepted as u64;
    }

    pub fn rate(&self, p: Proposal) -> f64 {
        let n = self.proposed[p.index()];
        if n == 0 {
            f64::NAN
        } else {
            self.accepted[p.index()] as f64 / n as f64
        }
    }

    fn merge(&mut self, other: &AcceptanceStats) {
        for i in 0..3 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub states: Vec<Configuration>,
    pub acceptance: AcceptanceStats,
    /// Particle count of each retained state.
    pub counts: Vec<usize>,
    /// Per-step records after burn-in, when requested.
    pub trace: Vec<StepRecord>,
}

/// `log[lambda*(u, x) lambda(Y) / (n(x) + 1)]`.
pub fn birth_log_ratio(model: &GibbsModel, x: &[Particle], u: &Particle) -> f64 {
    model.log_conditional_intensity_unchecked(std::slice::from_ref(u), x) + model.reference.total_mass().ln() - ((x.len() + 1) as f64).ln()
}

/// `log[n(x) / (lambda*(x_i, x \ x_i) lambda(Y))]`.
pub fn death_log_ratio(model: &GibbsModel, x: &[Particle], i: usize) -> f64 {
    let mut rest = x.to_vec();
    let xi = rest.swap_remove(i);
    (x.len() as f64).ln() - model.log_conditional_intensity_unchecked(&[xi], &rest) - model.reference.total_mass().ln()
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp()
}

/// One Metropolis-Hastings step on `x` in place. With probability `move_prob`
/// a uniformly chosen particle is relocated to a fresh draw from the
/// normalized reference measure; otherwise birth and death are proposed with
/// probability one half each. A death proposal on the empty configuration is
/// rejected.
pub fn bdm_step<R: Rng + ?Sized>(model: &GibbsModel, x: &mut Vec<Particle>, move_prob: f64, rng: &mut R) -> (Proposal, bool) {
    let mass = model.reference.total_mass();
    let n = x.len();
    if rng.gen::<f64>() < move_prob {
        if n == 0 {
            return (Proposal::Move, false);
        }
        let i = rng.gen_range(0..n);
        let u = model.reference.sample_particle(rng);
        x.swap(i, n - 1);
        let (rest, last) = x.split_at_mut(n - 1);
        let log_ratio = model.log_conditional_intensity_unchecked(&[u], rest) - model.log_conditional_intensity_unchecked(&last[..1], rest);
        let ok = accept(log_ratio, rng);
        if ok {
            last[0] = u;
        }
        return (Proposal::Move, ok);
    }
    if rng.gen::<bool>() {
        let u = model.reference.sample_particle(rng);
        let log_ratio = model.log_conditional_intensity_unchecked(&[u], x) + mass.ln() - ((n + 1) as f64).ln();
        let ok = accept(log_ratio, rng);
        if ok {
            x.push(u);
        }
        (Proposal::Birth, ok)
    } else {
        if n == 0 {
            return (Proposal::Death, false);
        }
        let i = rng.gen_range(0..n);
        x.swap(i, n - 1);
        let log_ratio = (n as f64).ln() - model.log_conditional_intensity_unchecked(&x[n - 1..], &x[..n - 1]) - mass.ln();
        let ok = accept(log_ratio, rng);
        if ok {
            x.pop();
        }
        (Proposal::Death, ok)
    }
}

/// Runs one chain from the empty configuration.
pub fn run_chain(model: &GibbsModel, params: &ChainParams) -> Result<ChainOutput> {
    params.validate()?;
    let mut rng = rng_from_seed(params.seed);
    let mut x: Vec<Particle> = Vec::new();
    let mut acceptance = AcceptanceStats::default();
    for _ in 0..params.burn_in {
        let (p, ok) = bdm_step(model, &mut x, params.move_prob, &mut rng);
        acceptance.record(p, ok);
    }
    let mut states = Vec::with_capacity(params.n_samples);
    let mut counts = Vec::with_capacity(params.n_samples);
    let mut trace = Vec::new();
    let mut step = params.burn_in;
    for _ in 0..params.n_samples {
        for _ in 0..params.thinning {
            let (p, ok) = bdm_step(model, &mut x, params.move_prob, &mut rng);
            acceptance.record(p, ok);
            if params.record_trace {
                trace.push(StepRecord { step, count: x.len(), proposal: p, accepted: ok });
            }
            step += 1;
        }
        counts.push(x.len());
        states.push(Configuration::new(x.clone()));
    }
    Ok(ChainOutput { states, acceptance, counts, trace })
}

/// `n_chains` independent chains with seeds derived from `params.seed`,
/// concatenated in chain order.
pub fn run_chains(model: &GibbsModel, params: &ChainParams, n_chains: usize) -> Result<ChainOutput> {
    params.validate()?;
    let outputs = par_map(n_chains, |c| {
        let p = ChainParams { seed: derive_seed(params.seed, "chain", c as u64), ..*params };
        run_chain(model, &p)
    });
    let mut merged = ChainOutput { states: Vec::new(), acceptance: AcceptanceStats::default(), counts: Vec::new(), trace: Vec::new() };
    for out in outputs {
        let out = out?;
        merged.states.extend(out.states);
        merged.counts.extend(out.counts);
        merged.acceptance.merge(&out.acceptance);
        merged.trace.extend(out.trace);
    }
    Ok(merged)
}

/// Proposal process for importance sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceProposal {
    /// The reference Poisson process; weights `exp(nu . G)`.
    Reference,
    /// Poisson process with intensity `exp(nu_1 g_1(y)) lambda(dy)`; weights
    /// `exp(nu . G - nu_1 G_1)`.
    FirstOrder,
}

/// Draw from the first-order tilted Poisson process by thinning.
pub fn sample_first_order<R: Rng + ?Sized>(model: &GibbsModel, rng: &mut R) -> Configuration {
    let bound = model.first_order_log_weight_bound();
    let mass = model.reference.total_mass() * bound.exp();
    if mass == 0.0 {
        return Configuration::empty();
    }
    let n = Poisson::new(mass).expect("positive finite mass").sample(rng) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let y = model.reference.sample_particle(rng);
        let keep = (model.first_order_log_weight(&y) - bound).exp();
        if keep >= 1.0 || rng.gen::<f64>() < keep {
            out.push(y);
        }
    }
    Configuration::new(out)
}

/// `n` proposal draws with their log-weights, generated in fixed-size chunks
/// with one derived stream per chunk.
pub fn importance_draws(model: &GibbsModel, proposal: ImportanceProposal, n: usize, seed: u64) -> Vec<(Configuration, f64)> {
    let chunks = n.div_ceil(CHUNK);
    par_map(chunks, |c| {
        let mut rng = rng_for(seed, "importance", c as u64);
        let len = CHUNK.min(n - c * CHUNK);
        (0..len)
            .map(|_| match proposal {
                ImportanceProposal::Reference => {
                    let x = model.reference.sample_poisson(&mut rng);
                    let w = model.unnormalized_log_density(&x);
                    (x, w)
                }
                ImportanceProposal::FirstOrder => {
                    let x = sample_first_order(model, &mut rng);
                    let w = model.interaction_log_weight(&x);
                    (x, w)
                }
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Self-normalized ratio `sum w_i v_i / sum w_i` from log-weights, with the
/// delta-method standard error `sqrt(sum w_i^2 (v_i - R)^2) / sum w_i`.
pub fn self_normalized(log_w: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let sw = compensated_sum(w.iter().copied());
    if !(sw > 0.0 && sw.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    let r = compensated_sum(w.iter().zip(values).map(|(w, v)| w * v)) / sw;
    let var = compensated_sum(w.iter().zip(values).map(|(w, v)| (w * (v - r)).powi(2)));
    Ok((r, var.sqrt() / sw))
}

/// Self-normalized importance estimate of `E F(mu)^m` using the first-order
/// proposal.
pub fn importance_estimate(model: &GibbsModel, f: &(dyn Fn(&[Particle]) -> f64 + Sync), m_power: i32, n_poisson: usize, seed: u64) -> Result<MomentEstimate> {
    importance_estimate_with(model, ImportanceProposal::FirstOrder, f, m_power, n_poisson, seed)
}

pub fn importance_estimate_with(
    model: &GibbsModel,
    proposal: ImportanceProposal,
    f: &(dyn Fn(&[Particle]) -> f64 + Sync),
    m_power: i32,
    n_poisson: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if n_poisson < 2 {
        return Err(Error::EmptySample);
    }
    let draws = importance_draws(model, proposal, n_poisson, seed);
    let log_w: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let values: Vec<f64> = draws.iter().map(|(x, _)| f(x).powi(m_power)).collect();
    let (r, se) = self_normalized(&log_w, &values)?;
    Ok(MomentEstimate::new(r, se, n_poisson, 0, Method::Importance))
}

/// Importance estimate of `log E exp(m * log_f(mu))`, computed in the log
/// domain; the standard error is that of the ratio divided by the ratio.
pub fn importance_log_moment(model: &GibbsModel, log_f: &(dyn Fn(&[Particle]) -> f64 + Sync), m_power: f64, n_poisson: usize, seed: u64) -> Result<MomentEstimate> {
    if n_poisson < 2 {
        return Err(Error::EmptySample);
    }
    let draws = importance_draws(model, ImportanceProposal::FirstOrder, n_poisson, seed);
    let log_w: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let log_v: Vec<f64> = draws.iter().map(|(x, _)| m_power * log_f(x)).collect();
    // E_mu[v] = sum w v / sum w; factor v = exp(log_v - c) for stability
    let c = log_v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !c.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let scaled: Vec<f64> = log_v.iter().map(|l| (l - c).exp()).collect();
    let (r, se) = self_normalized(&log_w, &scaled)?;
    if r <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(MomentEstimate::new(r.ln() + c, se / r, n_poisson, 0, Method::Importance))
}

/// `c_nu = E exp(nu . G(eta))` as a plain Poisson sample mean.
pub fn normalizing_constant_estimate(model: &GibbsModel, n_poisson: usize, seed: u64) -> MomentEstimate {
    let draws = importance_draws(model, ImportanceProposal::Reference, n_poisson, seed);
    let values: Vec<f64> = draws.iter().map(|d| d.1.exp()).collect();
    let (m, se) = mean_se(&values);
    MomentEstimate::new(m, se, n_poisson, 0, Method::Simulation)
}

/// `log c_nu` with the delta-method standard error.
pub fn log_normalizing_constant_estimate(model: &GibbsModel, n_poisson: usize, seed: u64) -> MomentEstimate {
    let draws = importance_draws(model, ImportanceProposal::Reference, n_poisson, seed);
    let log_w: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let (m, se) = mean_se(&w);
    MomentEstimate::new(m.ln() + max, se / m, n_poisson, 0, Method::Simulation)
}

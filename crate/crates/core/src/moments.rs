//! Moment identities evaluated by Monte Carlo integration.
//!
//! Poisson moments use i.i.d. integration nodes from the normalized
//! reference measure. Moments of a Gibbs model additionally need
//! `E lambda*_n(y, mu)`, which is estimated at every node from one shared
//! pool of model configurations. Because the pool is reused across nodes,
//! its contribution to the error is measured by splitting the pool into
//! contiguous batches: every estimate carries
//! `se = sqrt(se_nodes^2 + se_pool^2)`.

use rand::Rng;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::estimate::{batch_mean_se, batch_ranges, compensated_sum, mean, mean_se, Method, MomentEstimate};
use crate::mcmc::{importance_log_moment, log_normalizing_constant_estimate, run_chains, ChainParams};
use crate::par_map;
use crate::process::{Configuration, GibbsModel, IntensityMeasure, ModelKind, Particle};
use crate::seeds::{derive_seed, rng_for, Rng as ChaRng};
use crate::ustat::{
    binomial, coefficient_a, enumerate_partition_family, eval_ustat, factorial, falling_factorial, merge_patterns, model_ustats, MergePattern, MergedKernel, Partition, UStatistic,
};

/// Number of contiguous batches a pool is split into.
pub const POOL_BATCHES: usize = 20;

const NODE_CHUNK: usize = 256;

/// Configurations drawn from a model, used to estimate `E lambda*_n(y, mu)`.
#[derive(Debug, Clone)]
pub struct MuPool {
    model: GibbsModel,
    configurations: Vec<Configuration>,
    batches: Vec<Range<usize>>,
    node_stride: usize,
}

impl MuPool {
    pub fn new(model: GibbsModel, configurations: Vec<Configuration>) -> Result<Self> {
        if configurations.is_empty() {
            return Err(Error::EmptySample);
        }
        let kind = model.kind.particle_kind();
        if configurations.iter().flat_map(|c| c.iter()).any(|p| p.kind() != kind) {
            return Err(Error::KindMismatch(format!("pool holds particles other than {}", kind.as_str())));
        }
        let n = configurations.len();
        let batches = batch_ranges(n, POOL_BATCHES.min(n)).collect();
        Ok(Self { model, configurations, batches, node_stride: 1 })
    }

    /// Each integration node averages `lambda*` over every `stride`-th
    /// configuration of each batch, from a random offset, instead of the
    /// whole pool. Unbiased; useful when node noise dominates pool noise.
    pub fn with_node_stride(mut self, stride: usize) -> Self {
        let shortest = self.batches.iter().map(|r| r.len()).min().unwrap_or(1);
        self.node_stride = stride.clamp(1, shortest.max(1));
        self
    }

    pub fn node_stride(&self) -> usize {
        self.node_stride
    }

    /// Pool from `n_chains` independent chains.
    pub fn sample(model: &GibbsModel, params: &ChainParams, n_chains: usize) -> Result<Self> {
        let out = run_chains(model, params, n_chains)?;
        Self::new(model.clone(), out.states)
    }

    pub fn model(&self) -> &GibbsModel {
        &self.model
    }

    pub fn configurations(&self) -> &[Configuration] {
        &self.configurations
    }

    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    /// Batch means of `g(x)` over the pool.
    pub fn batch_means(&self, g: impl Fn(&Configuration) -> f64) -> Vec<f64> {
        self.batches.iter().map(|r| mean(&self.configurations[r.clone()].iter().map(&g).collect::<Vec<_>>())).collect()
    }

    /// Pool mean of `lambda*_n(points, x)` with a batch-means standard error.
    pub fn conditional_intensity_mean(&self, points: &[Particle]) -> MomentEstimate {
        let values: Vec<f64> = self.configurations.iter().map(|x| self.model.log_conditional_intensity_unchecked(points, x).exp()).collect();
        let (m, se) = batch_mean_se(&values, self.n_batches());
        MomentEstimate::new(m, se, 1, self.len(), Method::DensityMean)
    }
}

/// Node-level and pool-batch accumulators for terms that share one set of
/// integration nodes.
#[derive(Debug, Clone)]
struct TermBlock {
    n_nodes: usize,
    /// Per node, sum over terms.
    node_totals: Vec<f64>,
    term_sum: Vec<f64>,
    term_sumsq: Vec<f64>,
    /// `term_batches[t][b]`.
    term_batches: Vec<Vec<f64>>,
}

impl TermBlock {
    fn term(&self, t: usize, method: Method, n_inner: usize) -> MomentEstimate {
        let n = self.n_nodes as f64;
        let m = self.term_sum[t] / n;
        let var = ((self.term_sumsq[t] / n - m * m) * n / (n - 1.0)).max(0.0);
        let se_pool = batch_se(&self.term_batches[t]);
        MomentEstimate::new(m, (var / n + se_pool * se_pool).sqrt(), self.n_nodes, n_inner, method)
    }
}

fn batch_se(batches: &[f64]) -> f64 {
    if batches.len() < 2 {
        return 0.0;
    }
    mean_se(batches).1
}

/// Sums blocks with independent nodes that share the pool batches.
fn sum_block(blocks: &[&TermBlock], method: Method, n_inner: usize) -> MomentEstimate {
    let mut value = 0.0;
    let mut var_nodes = 0.0;
    let mut n_outer = 0;
    let n_batches = blocks.iter().map(|b| b.term_batches.first().map_or(0, Vec::len)).max().unwrap_or(0);
    let mut batches = vec![0.0; n_batches];
    for block in blocks {
        let (m, se) = mean_se(&block.node_totals);
        value += m;
        var_nodes += se * se;
        n_outer += block.n_nodes;
        for tb in &block.term_batches {
            for (acc, v) in batches.iter_mut().zip(tb) {
                *acc += v;
            }
        }
    }
    let se_pool = batch_se(&batches);
    MomentEstimate::new(value, (var_nodes + se_pool * se_pool).sqrt(), n_outer, n_inner, method)
}

/// What multiplies the integrand at each node.
enum PoolFactor<'a> {
    /// `lambda*_d(y, x)`, or 1 without a pool.
    Intensity(Option<&'a MuPool>),
    /// `sum_{J ⊆ [d]} (-1)^{d-|J|} lambda*_{|J|}(y_J, x)`.
    Alternating(&'a MuPool),
}

/// Estimates `∫ h_t(y) E[factor(y, mu)] lambda^d(dy)` for every term `t`,
/// with nodes i.i.d. from the normalized measure. `h` fills the term values
/// at a node and may use the supplied generator for inner Monte Carlo.
#[allow(clippy::too_many_arguments)]
fn pooled_block<H>(m: &IntensityMeasure, factor: PoolFactor<'_>, d: usize, n_terms: usize, n_nodes: usize, seed: u64, label: &str, h: H) -> TermBlock
where
    H: Fn(&[Particle], &mut ChaRng, &mut [f64]) + Sync,
{
    let volume = m.total_mass().powi(d as i32);
    let pool = match &factor {
        PoolFactor::Intensity(p) => *p,
        PoolFactor::Alternating(p) => Some(*p),
    };
    let n_batches = pool.map_or(0, MuPool::n_batches);
    let chunks = n_nodes.div_ceil(NODE_CHUNK);
    struct Chunk {
        node_totals: Vec<f64>,
        sum: Vec<f64>,
        sumsq: Vec<f64>,
        batches: Vec<Vec<f64>>,
    }
    let results = par_map(chunks, |c| {
        let mut rng = rng_for(seed, label, c as u64);
        let len = NODE_CHUNK.min(n_nodes - c * NODE_CHUNK);
        let mut out = Chunk { node_totals: Vec::with_capacity(len), sum: vec![0.0; n_terms], sumsq: vec![0.0; n_terms], batches: vec![vec![0.0; n_batches]; n_terms] };
        let mut values = vec![0.0; n_terms];
        let mut batch_g = vec![0.0; n_batches];
        for _ in 0..len {
            let y = m.sample_particles(d, &mut rng);
            values.iter_mut().for_each(|v| *v = 0.0);
            h(&y, &mut rng, &mut values);
            if values.iter().all(|v| *v == 0.0) {
                out.node_totals.push(0.0);
                continue;
            }
            let g = match (&factor, pool) {
                (PoolFactor::Intensity(_), None) => 1.0,
                (_, Some(p)) => {
                    let f = |x: &Configuration| match &factor {
                        PoolFactor::Intensity(_) => p.model.log_conditional_intensity_unchecked(&y, x).exp(),
                        PoolFactor::Alternating(_) => alternating_intensity(&p.model, &y, x),
                    };
                    let stride = p.node_stride;
                    let offset = if stride > 1 { rng.gen_range(0..stride) } else { 0 };
                    let mut used = 0;
                    let mut acc = 0.0;
                    for (b, r) in p.batches.iter().enumerate() {
                        let subset = &p.configurations[r.start + offset.min(r.len() - 1)..r.end];
                        let count = subset.len().div_ceil(stride);
                        let s = compensated_sum(subset.iter().step_by(stride).map(f));
                        batch_g[b] = s / count as f64;
                        acc += s;
                        used += count;
                    }
                    acc / used as f64
                }
                (PoolFactor::Alternating(_), None) => unreachable!(),
            };
            let mut total = 0.0;
            for t in 0..n_terms {
                let v = volume * values[t] * g;
                total += v;
                out.sum[t] += v;
                out.sumsq[t] += v * v;
                for b in 0..n_batches {
                    out.batches[t][b] += volume * values[t] * batch_g[b];
                }
            }
            out.node_totals.push(total);
        }
        out
    });
    let mut block = TermBlock { n_nodes, node_totals: Vec::with_capacity(n_nodes), term_sum: vec![0.0; n_terms], term_sumsq: vec![0.0; n_terms], term_batches: vec![vec![0.0; n_batches]; n_terms] };
    for r in results {
        block.node_totals.extend(r.node_totals);
        for t in 0..n_terms {
            block.term_sum[t] += r.sum[t];
            block.term_sumsq[t] += r.sumsq[t];
            for b in 0..n_batches {
                block.term_batches[t][b] += r.batches[t][b];
            }
        }
    }
    for tb in &mut block.term_batches {
        tb.iter_mut().for_each(|v| *v /= n_nodes as f64);
    }
    block
}

fn alternating_intensity(model: &GibbsModel, y: &[Particle], x: &[Particle]) -> f64 {
    let n = y.len();
    let mut sub = Vec::with_capacity(n);
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        sub.clear();
        sub.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| y[i]));
        let sign = if (n - sub.len()).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * if sub.is_empty() { 1.0 } else { model.log_conditional_intensity_unchecked(&sub, x).exp() };
    }
    total
}

fn check_nodes(n_nodes: usize) -> Result<()> {
    if n_nodes < 2 {
        return Err(Error::Constraint(format!("need at least 2 integration nodes, got {n_nodes}")));
    }
    Ok(())
}

/// `E F(eta) = ∫ f dλ^k`.
pub fn poisson_mean_ustat(f: &UStatistic, m: &IntensityMeasure, n_nodes: usize, seed: u64) -> Result<MomentEstimate> {
    check_nodes(n_nodes)?;
    let block = pooled_block(m, PoolFactor::Intensity(None), f.order(), 1, n_nodes, seed, "slivnyak", |y, _, out| out[0] = f.kernel(y));
    Ok(block.term(0, Method::Slivnyak, 0))
}

/// Mean of `f(y, z)` over `n_inner` draws `z ~ λ^{k-|y|}` normalized, times
/// `λ(Y)^{k-|y|}`.
fn inner_integral(f: &UStatistic, y: &[Particle], m: &IntensityMeasure, n_inner: usize, rng: &mut ChaRng) -> f64 {
    let k = f.order();
    let n = y.len();
    if n == k {
        return f.kernel(y);
    }
    let mut buf = y.to_vec();
    let mut total = 0.0;
    for _ in 0..n_inner {
        buf.truncate(n);
        for _ in n..k {
            buf.push(m.sample_particle(rng));
        }
        total += f.kernel(&buf);
    }
    total / n_inner as f64 * m.total_mass().powi((k - n) as i32)
}

/// `var F(eta) = sum_i i! C(k,i)^2 ∫ (∫ f dλ^{k-i})^2 dλ^i`. The squared inner
/// integral is the product of two independent inner estimates.
pub fn poisson_variance_ustat(f: &UStatistic, m: &IntensityMeasure, n_nodes: usize, n_inner: usize, seed: u64) -> Result<MomentEstimate> {
    poisson_covariance_chaos(f, f, m, n_nodes, n_inner, seed)
}

/// `cov(F, G) = sum_{n ≥ 1} (1/n!) ∫ T_n F T_n G dλ^n`, with independent inner
/// estimates of `T_n F` and `T_n G` at shared nodes.
pub fn poisson_covariance_chaos(f: &UStatistic, g: &UStatistic, m: &IntensityMeasure, n_nodes: usize, n_inner: usize, seed: u64) -> Result<MomentEstimate> {
    check_nodes(n_nodes)?;
    let n_inner = n_inner.max(1);
    let top = f.order().min(g.order());
    let blocks: Vec<TermBlock> = (1..=top)
        .map(|n| {
            let coef = falling_factorial(f.order(), n) as f64 * falling_factorial(g.order(), n) as f64 / factorial(n) as f64;
            pooled_block(m, PoolFactor::Intensity(None), n, 1, n_nodes, derive_seed(seed, "chaos", n as u64), "chaos", |y, rng, out| {
                let a = inner_integral(f, y, m, n_inner, rng);
                if a == 0.0 {
                    return;
                }
                out[0] = coef * a * inner_integral(g, y, m, n_inner, rng);
            })
        })
        .collect();
    Ok(sum_block(&blocks.iter().collect::<Vec<_>>(), Method::Chaos, n_inner))
}

/// Truncated series `e^{-λ(Y)} sum_{n ≤ n_max} (1/n!) ∫ F(u_1..u_n) dλ^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEstimate {
    pub estimate: MomentEstimate,
    /// Geometric bound on the omitted tail from the ratio of the last two terms.
    pub tail_bound: f64,
    pub warning: Option<String>,
}

pub fn poisson_series_expectation(
    f: &(dyn Fn(&[Particle]) -> f64 + Sync),
    m: &IntensityMeasure,
    n_max: usize,
    quad_nodes: usize,
    seed: u64,
    tolerance: f64,
) -> Result<SeriesEstimate> {
    check_nodes(quad_nodes)?;
    let mass = m.total_mass();
    let terms: Vec<(f64, f64)> = par_map(n_max + 1, |n| {
        let mut rng = rng_for(seed, "series", n as u64);
        // log of e^{-λ(Y)} λ(Y)^n / n!
        let log_w = -mass + n as f64 * mass.ln() - (1..=n).map(|i| (i as f64).ln()).sum::<f64>();
        let w = if mass == 0.0 { if n == 0 { 1.0 } else { 0.0 } } else { log_w.exp() };
        let values: Vec<f64> = if n == 0 { vec![f(&[]); 2] } else { (0..quad_nodes).map(|_| f(&m.sample_particles(n, &mut rng))).collect() };
        let (mu, se) = mean_se(&values);
        (w * mu, w * se)
    });
    let value = compensated_sum(terms.iter().map(|t| t.0));
    let se = terms.iter().map(|t| t.1 * t.1).sum::<f64>().sqrt();
    let tail_bound = match (n_max, terms.last()) {
        (0, _) | (_, None) => f64::INFINITY,
        (_, Some(&(last, _))) => {
            let prev = terms[n_max - 1].0;
            let ratio = if prev > 0.0 { last / prev } else if last == 0.0 { 0.0 } else { f64::INFINITY };
            if ratio < 1.0 {
                last * ratio / (1.0 - ratio)
            } else {
                f64::INFINITY
            }
        }
    };
    let warning = (tail_bound > tolerance).then(|| format!("series tail bound {tail_bound:.3e} exceeds tolerance {tolerance:.3e}; increase n_max"));
    Ok(SeriesEstimate { estimate: MomentEstimate::new(value, se, quad_nodes, n_max, Method::Series), tail_bound, warning })
}

/// `T_n p(points) = sum_{J ⊆ [n]} (-1)^{n-|J|} E lambda*_{|J|}(points_J, mu)`,
/// evaluated configuration by configuration so the pool covariances of the
/// `2^n` terms are carried by the batch standard error.
pub fn kernel_tn_density(points: &[Particle], pool: &MuPool) -> Result<MomentEstimate> {
    if points.is_empty() {
        return Err(Error::Constraint("kernel of order 0 requested".into()));
    }
    crate::process::check_new_points(&[], points, "kernel_tn_density")?;
    let values: Vec<f64> = pool.configurations.iter().map(|x| alternating_intensity(&pool.model, points, x)).collect();
    let (m, se) = batch_mean_se(&values, pool.n_batches());
    Ok(MomentEstimate::new(m, se, 1, pool.len(), Method::DensityMean))
}

/// `E F(mu) = ∫ f E lambda*_k(·, mu) dλ^k`.
pub fn density_mean_ustat(f: &UStatistic, pool: &MuPool, n_nodes: usize, seed: u64) -> Result<MomentEstimate> {
    let mut r = density_mixed_moment(&[f], pool, n_nodes, seed)?;
    r.total.method = Method::DensityMean;
    Ok(r.total)
}

/// One term group `j` of a two-factor moment: `A_j` times the integral of
/// one representative partition.
#[derive(Debug, Clone, PartialEq)]
pub struct JGroup {
    pub j: usize,
    pub a: u128,
    pub representative: MomentEstimate,
    pub weighted: MomentEstimate,
}

#[derive(Debug, Clone)]
pub struct MixedMoment {
    pub total: MomentEstimate,
    /// Orders sorted non-increasingly, matching the partitions below.
    pub orders: Vec<usize>,
    pub per_partition: Vec<(Partition, MomentEstimate)>,
    pub per_pattern: Vec<(MergePattern, MomentEstimate)>,
    /// Only for two factors.
    pub j_groups: Option<Vec<JGroup>>,
}

impl MixedMoment {
    /// Sum of the `j` groups, when present.
    pub fn j_group_total(&self) -> Option<f64> {
        self.j_groups.as_ref().map(|g| compensated_sum(g.iter().map(|x| x.weighted.value)))
    }

    /// Sum of the per-partition values.
    pub fn partition_total(&self) -> f64 {
        compensated_sum(self.per_partition.iter().map(|p| p.1.value))
    }
}

/// `E prod F_i(mu) = sum_σ ∫ (⊗ f_i)_σ E lambda*_{|σ|}(·, mu) dλ^{|σ|}`. With
/// `pool = None` the intensities are 1 and this is the Poisson moment.
pub fn mixed_moment(ustats: &[&UStatistic], m: &IntensityMeasure, pool: Option<&MuPool>, n_nodes: usize, seed: u64) -> Result<MixedMoment> {
    check_nodes(n_nodes)?;
    let mut sorted = ustats.to_vec();
    sorted.sort_by_key(|f| std::cmp::Reverse(f.order()));
    let orders: Vec<usize> = sorted.iter().map(|f| f.order()).collect();
    let family = enumerate_partition_family(&orders)?;
    let canonical: Vec<Partition> = family.members.iter().map(|p| p.canonical(&orders)).collect();
    let max_blocks = orders.iter().sum::<usize>();
    let method = if pool.is_some() { Method::DensityMoment } else { Method::Slivnyak };
    let n_inner = pool.map_or(0, MuPool::len);

    let mut blocks: Vec<(Vec<usize>, TermBlock)> = Vec::new();
    for d in 1..=max_blocks {
        let members: Vec<usize> = (0..canonical.len()).filter(|&i| canonical[i].len() == d).collect();
        if members.is_empty() {
            continue;
        }
        let kernels: Vec<MergedKernel> = members.iter().map(|&i| MergedKernel::new(&sorted, &canonical[i])).collect();
        let block = pooled_block(m, PoolFactor::Intensity(pool), d, members.len(), n_nodes, derive_seed(seed, "mixed", d as u64), "mixed", |y, _, out| {
            for (o, k) in out.iter_mut().zip(&kernels) {
                *o = k.eval(y);
            }
        });
        blocks.push((members, block));
    }

    let total = sum_block(&blocks.iter().map(|b| &b.1).collect::<Vec<_>>(), method, n_inner);
    let mut per_partition: Vec<Option<MomentEstimate>> = vec![None; canonical.len()];
    for (members, block) in &blocks {
        for (t, &i) in members.iter().enumerate() {
            per_partition[i] = Some(block.term(t, method, n_inner));
        }
    }
    let per_partition: Vec<(Partition, MomentEstimate)> = family.members.iter().cloned().zip(per_partition.into_iter().map(|e| e.expect("every partition evaluated"))).collect();
    let per_pattern = merge_patterns(&family)
        .into_iter()
        .map(|pat| {
            let value = compensated_sum(pat.members.iter().map(|&i| per_partition[i].1.value));
            let se = pat.members.iter().map(|&i| per_partition[i].1.std_error).sum();
            let e = MomentEstimate::new(value, se, n_nodes, n_inner, method);
            (pat, e)
        })
        .collect();
    let j_groups = (orders.len() == 2).then(|| {
        (0..=orders[1])
            .map(|j| {
                let a = coefficient_a(&orders, &[j]).expect("orders validated");
                let rep = per_partition.iter().find(|(p, _)| p.len() == orders[0] + j).map(|p| p.1).expect("every j has a member");
                JGroup { j, a, representative: rep, weighted: rep.scaled(a as f64) }
            })
            .collect()
    });
    Ok(MixedMoment { total, orders, per_partition, per_pattern, j_groups })
}

/// [`mixed_moment`] for the pool's model.
pub fn density_mixed_moment(ustats: &[&UStatistic], pool: &MuPool, n_nodes: usize, seed: u64) -> Result<MixedMoment> {
    mixed_moment(ustats, &pool.model.reference, Some(pool), n_nodes, seed)
}

/// Both sides of
/// `E prod F_j(mu) = E prod F_j(eta) + sum_{n=1}^{q} (1/n!) ∫ T_n(prod F_j) T_n p dλ^n`,
/// `q = sum k_j`. `T_n(prod F_j)(y)` is estimated from `n_inner` Poisson
/// draws per node.
pub fn covariance_identity_check(ustats: &[&UStatistic], pool: &MuPool, n_nodes: usize, n_inner: usize, seed: u64) -> Result<(MomentEstimate, MomentEstimate)> {
    let q: usize = ustats.iter().map(|f| f.order()).sum();
    if q > 6 {
        return Err(Error::TooManyIndices(q));
    }
    let m = &pool.model.reference;
    let left = density_mixed_moment(ustats, pool, n_nodes, derive_seed(seed, "left", 0))?.total;
    let poisson = mixed_moment(ustats, m, None, n_nodes, derive_seed(seed, "poisson", 0))?.total;
    let product = |x: &[Particle]| ustats.iter().map(|f| eval_ustat(f, x)).product::<f64>();
    let n_inner = n_inner.max(1);
    let blocks: Vec<TermBlock> = (1..=q)
        .map(|n| {
            let inv = 1.0 / factorial(n) as f64;
            pooled_block(m, PoolFactor::Alternating(pool), n, 1, n_nodes, derive_seed(seed, "correction", n as u64), "correction", |y, rng, out| {
                let mut acc = 0.0;
                for _ in 0..n_inner {
                    let eta = m.sample_poisson(rng);
                    acc += crate::ustat::difference_functional(&product, &eta, y);
                }
                out[0] = inv * acc / n_inner as f64;
            })
        })
        .collect();
    let correction = sum_block(&blocks.iter().collect::<Vec<_>>(), Method::DensityMoment, pool.len());
    let right = MomentEstimate::new(poisson.value + correction.value, poisson.std_error.hypot(correction.std_error), poisson.n_outer + correction.n_outer, pool.len(), Method::Chaos);
    Ok((left, right))
}

/// `(1/k!)^2 A_j` for the square of an order-`k` statistic whose kernel is
/// `1/k!` times an indicator, listed for `j = 0..=k`.
pub fn square_term_weights(k: usize) -> Vec<f64> {
    let kf = factorial(k) as f64;
    (0..=k).map(|j| coefficient_a(&[k, k], &[j]).expect("valid orders") as f64 / (kf * kf)).collect()
}

/// Binomial-factorial weights `i! C(k, i)^2` of the variance expansion.
pub fn variance_weights(k: usize) -> Vec<u128> {
    (1..=k).map(|i| factorial(i) * binomial(k, i) * binomial(k, i)).collect()
}

/// Standard targets for a geometric model: component means, squares and the
/// all-component mixed moment.
pub fn suite_targets(kind: &ModelKind) -> Vec<String> {
    let names = kind.statistic_names();
    let mut out: Vec<String> = names.iter().map(|n| n.to_string()).collect();
    out.extend(names.iter().map(|n| format!("{n}{n}")));
    out.push(names.concat());
    out
}

/// Resolves a target such as `"LN"` into the model's U-statistics.
pub fn resolve_target(model: &GibbsModel, target: &str, extra: &[UStatistic]) -> Result<Vec<UStatistic>> {
    let all: Vec<UStatistic> = model_ustats(model).into_iter().chain(extra.iter().cloned()).collect();
    target
        .chars()
        .map(|c| all.iter().find(|u| u.name == c.to_string()).cloned().ok_or_else(|| Error::Constraint(format!("unknown statistic '{c}' in target {target}"))))
        .collect()
}

/// Every target of [`suite_targets`] through the density moment formula.
pub fn model_moment_suite(pool: &MuPool, n_nodes: usize, seed: u64) -> Result<Vec<(String, MixedMoment)>> {
    let model = &pool.model;
    suite_targets(&model.kind)
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let fs = resolve_target(model, &t, &[])?;
            let refs: Vec<&UStatistic> = fs.iter().collect();
            Ok((t, density_mixed_moment(&refs, pool, n_nodes, derive_seed(seed, "suite", i as u64))?))
        })
        .collect()
}

/// Mean of `prod F_i(x)` over sampled configurations with a batch-means
/// standard error.
pub fn sample_moment(ustats: &[&UStatistic], states: &[Configuration]) -> Result<MomentEstimate> {
    if states.is_empty() {
        return Err(Error::EmptySample);
    }
    let values: Vec<f64> = par_map(states.len(), |i| ustats.iter().map(|f| eval_ustat(f, &states[i])).product());
    let (m, se) = batch_mean_se(&values, POOL_BATCHES);
    Ok(MomentEstimate::new(m, se, states.len(), 0, Method::Simulation))
}

/// `H_m(x) = -log c_nu + (nu + m e_choice) . G(U_x)`.
pub fn log_functional_hm(model: &GibbsModel, choice: usize, m_power: f64, x: &[Particle], log_c: f64) -> f64 {
    let g = model.statistics(x).values;
    -log_c + g.iter().zip(&model.nu).enumerate().map(|(i, (g, nu))| (nu + if i == choice { m_power } else { 0.0 }) * g).sum::<f64>()
}

/// Both sides of `log E F^m(mu) ≥ E H_m(eta)` for `F = exp(G_choice)`. The
/// left side is an importance estimate; the right side is a Poisson sample
/// mean whose standard error includes that of `log c_nu`.
pub fn jensen_gap(model: &GibbsModel, choice: usize, m_power: f64, n_poisson: usize, seed: u64) -> Result<(MomentEstimate, MomentEstimate)> {
    if choice >= model.dim() {
        return Err(Error::Constraint(format!("statistic index {choice} out of range")));
    }
    if n_poisson < 2 {
        return Err(Error::EmptySample);
    }
    let log_f = |x: &[Particle]| model.statistics(x).values[choice];
    let left = importance_log_moment(model, &log_f, m_power, n_poisson, derive_seed(seed, "jensen-left", 0))?;
    let log_c = log_normalizing_constant_estimate(model, n_poisson, derive_seed(seed, "jensen-c", 0));
    let chunks = n_poisson.div_ceil(NODE_CHUNK);
    let values: Vec<f64> = par_map(chunks, |c| {
        let mut rng = rng_for(seed, "jensen-right", c as u64);
        let len = NODE_CHUNK.min(n_poisson - c * NODE_CHUNK);
        (0..len).map(|_| log_functional_hm(model, choice, m_power, &model.reference.sample_poisson(&mut rng), 0.0)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let (mu, se) = mean_se(&values);
    let right = MomentEstimate::new(mu - log_c.value, se.hypot(log_c.std_error), n_poisson, 0, Method::Simulation);
    Ok((left, right))
}

/// Draws `n` Poisson configurations from `m` with one stream per chunk.
pub fn poisson_sample(m: &IntensityMeasure, n: usize, seed: u64) -> Vec<Configuration> {
    let chunks = n.div_ceil(NODE_CHUNK);
    par_map(chunks, |c| {
        let mut rng = rng_for(seed, "poisson", c as u64);
        let len = NODE_CHUNK.min(n - c * NODE_CHUNK);
        (0..len).map(|_| m.sample_poisson(&mut rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{covariance_with_se, variance_with_se};
    use crate::process::{Domain, ParticleKind};
    use crate::seeds::rng_from_seed;
    use crate::ustat::kernels::*;

    fn points(rho: f64) -> IntensityMeasure {
        IntensityMeasure::uniform(Domain::unit_square(1.0, ParticleKind::Point), rho).unwrap()
    }

    fn segments(rho: f64) -> IntensityMeasure {
        IntensityMeasure::uniform(Domain::unit_square(0.5, ParticleKind::Segment), rho).unwrap()
    }

    fn central_box() -> UStatistic {
        box_count(vec![0.25, 0.25], vec![0.75, 0.75])
    }

    fn strauss_pool(beta: f64, gamma: f64, n: usize, seed: u64) -> MuPool {
        let model = GibbsModel::strauss(points(1.0), beta, gamma, 0.05 * 2f64.sqrt()).unwrap();
        MuPool::sample(&model, &ChainParams::new(1000, 40, n / 4, 0.2, seed).unwrap(), 4).unwrap()
    }

    #[test]
    fn indicator_mean_and_variance() {
        let m = points(1.0);
        let c = central_box();
        let mean = poisson_mean_ustat(&c, &m, 20_000, 1).unwrap();
        assert!((mean.value - 0.25).abs() < 3.0 * mean.std_error, "{mean}");
        let var = poisson_variance_ustat(&c, &m, 20_000, 1, 2).unwrap();
        assert!((var.value - 0.25).abs() < 3.0 * var.std_error, "{var}");
        let scaled = poisson_variance_ustat(&c.scaled(3.0), &m, 20_000, 1, 2).unwrap();
        assert!((scaled.value - 9.0 * var.value).abs() < 1e-9);
    }

    #[test]
    fn constant_kernel_mean_is_exact() {
        let m = points(3.0);
        let one = UStatistic::new("one", 2, true, |_: &[Particle]| 1.0).unwrap();
        let e = poisson_mean_ustat(&one, &m, 100, 3).unwrap();
        assert!((e.value - 9.0).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
    }

    #[test]
    fn disjoint_supports_have_zero_covariance() {
        let m = points(5.0);
        let a = box_count(vec![0.0, 0.0], vec![0.4, 0.4]);
        let b = box_count(vec![0.6, 0.6], vec![1.0, 1.0]);
        let c = poisson_covariance_chaos(&a, &b, &m, 1000, 1, 4).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn segment_moments_match_simulation() {
        let m = segments(8.0);
        let (l, n) = (segment_length(), segment_crossings());
        let sims = poisson_sample(&m, 4000, 5);
        let ls: Vec<f64> = sims.iter().map(|x| eval_ustat(&l, x)).collect();
        let ns: Vec<f64> = sims.iter().map(|x| eval_ustat(&n, x)).collect();
        let en = poisson_mean_ustat(&n, &m, 20_000, 6).unwrap();
        let (sm, sse) = mean_se(&ns);
        assert!(en.agrees_with(&MomentEstimate::new(sm, sse, 0, 0, Method::Simulation), 3.0), "{en} vs {sm} ± {sse}");
        let vn = poisson_variance_ustat(&n, &m, 20_000, 4, 7).unwrap();
        let (sv, svse) = variance_with_se(&ns);
        assert!((vn.value - sv).abs() < 3.0 * vn.std_error.hypot(svse), "{vn} vs {sv} ± {svse}");
        let cln = poisson_covariance_chaos(&l, &n, &m, 20_000, 4, 8).unwrap();
        let (sc, scse) = covariance_with_se(&ls, &ns);
        assert!((cln.value - sc).abs() < 3.0 * cln.std_error.hypot(scse), "{cln} vs {sc} ± {scse}");
        let vchaos = poisson_covariance_chaos(&n, &n, &m, 20_000, 4, 9).unwrap();
        assert!(vchaos.agrees_with(&vn, 3.0));
    }

    #[test]
    fn series_special_cases() {
        let m = points(3.0);
        let one = poisson_series_expectation(&|_: &[Particle]| 1.0, &m, 30, 10, 1, 1e-6).unwrap();
        assert!((one.estimate.value - 1.0).abs() < 1e-6, "{:?}", one);
        assert!(one.warning.is_none());
        let count = poisson_series_expectation(&|x: &[Particle]| x.len() as f64, &m, 30, 10, 1, 1e-6).unwrap();
        assert!((count.estimate.value - 3.0).abs() < 1e-5);
        let short = poisson_series_expectation(&|_: &[Particle]| 1.0, &m, 2, 10, 1, 1e-6).unwrap();
        assert!(short.warning.is_some());
    }

    #[test]
    fn series_matches_normalizing_constant() {
        let m = segments(5.0);
        let model = GibbsModel::segment(m.clone(), 1.5, 0.0).unwrap();
        let s = poisson_series_expectation(&|x: &[Particle]| model.unnormalized_log_density(x).exp(), &m, 30, 4000, 10, 1e-4).unwrap();
        let c = crate::mcmc::normalizing_constant_estimate(&model, 40_000, 11);
        assert!(s.estimate.agrees_with(&c, 3.0), "{} vs {c}", s.estimate);
        // closed form exp(∫(e^{nu1 l} - 1) dλ)
        let exact = (5.0 * (((1.5f64 * 0.5).exp() - 1.0) / 0.75 - 1.0)).exp();
        assert!((s.estimate.value - exact).abs() < 3.0 * s.estimate.std_error + s.tail_bound);
    }

    #[test]
    fn trivial_model_kernel_cancels() {
        let m = segments(10.0);
        let model = GibbsModel::segment(m.clone(), 0.0, 0.0).unwrap();
        let pool = MuPool::new(model, poisson_sample(&m, 200, 1)).unwrap();
        let mut rng = rng_from_seed(12);
        for n in 1..=3 {
            let y = m.sample_particles(n, &mut rng);
            let t = kernel_tn_density(&y, &pool).unwrap();
            assert_eq!((t.value, t.std_error), (0.0, 0.0));
        }
    }

    #[test]
    fn first_order_kernel_is_intensity_minus_one() {
        let pool = strauss_pool(20.0, 0.5, 800, 13);
        let y = [Particle::Point([0.3, 0.4, 0.0])];
        let t1 = kernel_tn_density(&y, &pool).unwrap();
        let l = pool.conditional_intensity_mean(&y);
        assert!((t1.value - (l.value - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn strauss_second_kernel_vs_importance() {
        // T_2 p(u, v) = E[D^2_{u,v} p(eta)]; p(eta) via self-normalized weights
        let model = GibbsModel::strauss(points(1.0), 20.0, 0.5, 0.05 * 2f64.sqrt()).unwrap();
        let pool = MuPool::sample(&model, &ChainParams::new(1000, 40, 1500, 0.2, 14).unwrap(), 4).unwrap();
        let (u, v) = (Particle::Point([0.3, 0.3, 0.0]), Particle::Point([0.33, 0.31, 0.0]));
        let t2 = kernel_tn_density(&[u, v], &pool).unwrap();
        let f = |x: &[Particle]| alternating_intensity(&model, &[u, v], x);
        let is = crate::mcmc::importance_estimate(&model, &f, 1, 20_000, 15).unwrap();
        assert!(t2.agrees_with(&is, 3.0), "{t2} vs {is}");
    }

    #[test]
    fn density_reduces_to_poisson_when_trivial() {
        let m = segments(10.0);
        let model = GibbsModel::segment(m.clone(), 0.0, 0.0).unwrap();
        let pool = MuPool::new(model, poisson_sample(&m, 100, 16)).unwrap();
        let n = segment_crossings();
        let d = density_mean_ustat(&n, &pool, 5000, 17).unwrap();
        let p = poisson_mean_ustat(&n, &m, 5000, 17).unwrap();
        assert!(d.agrees_with(&p, 3.0), "{d} vs {p}");
    }

    #[test]
    fn strauss_gamma_one_moments() {
        let pool = strauss_pool(20.0, 1.0, 400, 18);
        let c = central_box();
        let m1 = density_mean_ustat(&c, &pool, 4000, 19).unwrap();
        assert!((m1.value - 5.0).abs() < 3.0 * m1.std_error, "{m1}");
        let m2 = density_mixed_moment(&[&c, &c], &pool, 4000, 20).unwrap();
        assert!((m2.total.value - 30.0).abs() < 3.0 * m2.total.std_error, "{}", m2.total);
    }

    #[test]
    fn node_stride_agrees_with_full_pool() {
        let pool = strauss_pool(20.0, 0.5, 800, 26);
        let c = central_box();
        let full = density_mixed_moment(&[&c, &c], &pool, 4000, 27).unwrap().total;
        let strided = pool.clone().with_node_stride(8);
        assert_eq!(strided.node_stride(), 8);
        let s = density_mixed_moment(&[&c, &c], &strided, 32_000, 28).unwrap().total;
        assert!(s.agrees_with(&full, 3.0), "{s} vs {full}");
        assert_eq!(pool.clone().with_node_stride(10_000).node_stride(), 40);
    }

    #[test]
    fn j_grouping_equals_partition_sum() {
        let m = segments(10.0);
        let model = GibbsModel::segment(m.clone(), 0.2, -0.5).unwrap();
        let pool = MuPool::sample(&model, &ChainParams::new(500, 20, 100, 0.2, 21).unwrap(), 2).unwrap();
        let (l, n) = (segment_length(), segment_crossings());
        for fs in [vec![&l, &n], vec![&n, &n]] {
            let r = density_mixed_moment(&fs, &pool, 3000, 22).unwrap();
            let j = r.j_group_total().unwrap();
            let p = r.partition_total();
            assert!((j - p).abs() <= 1e-9 * p.abs().max(1e-300), "{j} vs {p}");
            assert!((r.total.value - p).abs() <= 1e-9 * p.abs());
        }
    }

    #[test]
    fn plate_square_weights() {
        let w = square_term_weights(3);
        let expected = [1.0 / 6.0, 0.5, 0.25, 1.0 / 36.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(variance_weights(2), vec![4, 2]);
    }

    #[test]
    fn suite_targets_by_model() {
        assert_eq!(suite_targets(&ModelKind::Segment), vec!["L", "N", "LL", "NN", "LN"]);
        assert_eq!(suite_targets(&ModelKind::Plate), vec!["S", "L", "N", "SS", "LL", "NN", "SLN"]);
        let sln = resolve_target(&GibbsModel::plate(IntensityMeasure::uniform(Domain::unit_cube(0.5, ParticleKind::Plate), 2.0).unwrap(), [0.0; 3]).unwrap(), "SLN", &[]).unwrap();
        let r = mixed_moment(&sln.iter().collect::<Vec<_>>(), &IntensityMeasure::uniform(Domain::unit_cube(0.5, ParticleKind::Plate), 2.0).unwrap(), None, 10, 1).unwrap();
        assert_eq!(r.per_pattern.len(), 10);
        assert_eq!(r.per_partition.len(), 60);
        assert!(resolve_target(&GibbsModel::segment(segments(1.0), 0.0, 0.0).unwrap(), "LX", &[]).is_err());
    }

    #[test]
    fn hm_linearity() {
        let m = segments(10.0);
        let model = GibbsModel::segment(m.clone(), 0.3, -0.5).unwrap();
        let mut rng = rng_from_seed(23);
        let x = m.sample_poisson(&mut rng);
        let h0 = log_functional_hm(&model, 0, 0.0, &x, 0.7);
        assert!((h0 - (model.unnormalized_log_density(&x) - 0.7)).abs() < 1e-12);
        let h2 = log_functional_hm(&model, 0, 2.0, &x, 0.7);
        assert!((h2 - h0 - 2.0 * model.statistics(&x).values[0]).abs() < 1e-12);
        let zero = GibbsModel::segment(m, 0.0, 0.0).unwrap();
        assert!((log_functional_hm(&zero, 0, 1.0, &x, 0.0) - zero.statistics(&x).values[0]).abs() < 1e-12);
    }

    #[test]
    fn jensen_equality_for_constants() {
        let m = segments(10.0);
        let zero = GibbsModel::segment(m, 0.0, 0.0).unwrap();
        let (l, r) = jensen_gap(&zero, 0, 0.0, 1000, 24).unwrap();
        assert_eq!((l.value, r.value), (0.0, 0.0));
    }

    #[test]
    fn jensen_holds_for_segments() {
        let model = GibbsModel::segment(segments(10.0), 0.2, -0.5).unwrap();
        let (l, r) = jensen_gap(&model, 1, 1.0, 5000, 25).unwrap();
        assert!(l.value >= r.value - 3.0 * l.std_error.hypot(r.std_error), "{l} vs {r}");
    }
}

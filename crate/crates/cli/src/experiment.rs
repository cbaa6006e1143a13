//! Runs the estimator suites described by an [`ExperimentConfig`].

use std::time::{Duration, Instant};

use gibbs_ustat::clt::{asymptotic_covariance, level_sweep, unit_means};
use gibbs_ustat::mcmc::{importance_estimate, run_chains, ChainOutput, ChainParams};
use gibbs_ustat::moments::{density_mixed_moment, mixed_moment, resolve_target, sample_moment, MuPool};
use gibbs_ustat::process::{GibbsModel, Particle};
use gibbs_ustat::seeds::derive_seed;
use gibbs_ustat::ustat::{eval_ustat, model_ustats, UStatistic};
use gibbs_ustat::{Method, MomentEstimate};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// One CSV row of `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub target: String,
    pub method: String,
    pub value: f64,
    pub std_error: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
    /// Left empty unless timing is requested, so that reruns are byte-identical.
    pub wall_time_s: Option<f64>,
    pub config_digest: String,
    pub error: Option<String>,
}

/// One CSV row of `clt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltRecord {
    pub level: f64,
    pub component: String,
    pub empirical_var: f64,
    pub analytic_c: f64,
    pub frobenius_err: f64,
    pub ks_stat: f64,
    pub ks_p: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub timing: bool,
}

fn chain_params(cfg: &ExperimentConfig, model: &GibbsModel, label: &str) -> ChainParams {
    let s = &cfg.sampler;
    let seed = derive_seed(cfg.seed, label, 0);
    let thinning = s.thinning.unwrap_or_else(|| ChainParams::defaults_for(model, s.n_samples, seed).thinning);
    ChainParams { burn_in: s.burn_in, thinning, n_samples: s.n_samples, move_prob: s.move_prob, seed, record_trace: false }
}

/// Chains for the `sample` subcommand, with a per-step trace.
pub fn run_sampler(cfg: &ExperimentConfig) -> gibbs_ustat::Result<(GibbsModel, ChainOutput)> {
    let model = cfg.build_model()?;
    let params = ChainParams { record_trace: true, ..chain_params(cfg, &model, "sample") };
    let out = run_chains(&model, &params, cfg.sampler.n_chains)?;
    Ok((model, out))
}

struct Recorder<'a> {
    digest: String,
    opts: RunOptions,
    rows: &'a mut Vec<ResultRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, target: &str, label: &str, seed: u64, elapsed: Duration, r: gibbs_ustat::Result<MomentEstimate>) {
        let wall = self.opts.timing.then_some(elapsed.as_secs_f64());
        let row = match r {
            Ok(e) => ResultRecord {
                target: target.to_string(),
                method: e.method.as_str().to_string(),
                value: e.value,
                std_error: e.std_error,
                n_outer: e.n_outer,
                n_inner: e.n_inner,
                seed,
                wall_time_s: wall,
                config_digest: self.digest.clone(),
                error: None,
            },
            Err(err) => ResultRecord {
                target: target.to_string(),
                method: label.to_string(),
                value: f64::NAN,
                std_error: f64::NAN,
                n_outer: 0,
                n_inner: 0,
                seed,
                wall_time_s: wall,
                config_digest: self.digest.clone(),
                error: Some(err.to_string()),
            },
        };
        self.rows.push(row);
    }
}

/// Every target through the density moment formula (pooled conditional
/// intensities), the plain Poisson formula when `nu = 0`, MCMC simulation and
/// importance sampling. Failures are recorded per target and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> gibbs_ustat::Result<Vec<ResultRecord>> {
    let model = cfg.build_model()?;
    let extra = cfg.extra_ustats();
    let mut rows = Vec::new();
    let mut rec = Recorder { digest: cfg.digest(), opts, rows: &mut rows };
    let est = &cfg.estimator;

    let t0 = Instant::now();
    let pool_params = chain_params(cfg, &model, "pool");
    let pool = MuPool::sample(&model, &pool_params, cfg.sampler.n_chains).map(|p| p.with_node_stride(est.pool_stride));
    let sim_params = chain_params(cfg, &model, "simulation");
    let sim = run_chains(&model, &sim_params, cfg.sampler.n_chains);
    let pool_secs = t0.elapsed();
    let poisson = model.nu.iter().all(|v| *v == 0.0);

    for (i, target) in cfg.targets().iter().enumerate() {
        let fs = match resolve_target(&model, target, &extra) {
            Ok(fs) => fs,
            Err(e) => {
                rec.push(target, "resolve", 0, Duration::ZERO, Err(e));
                continue;
            }
        };
        let refs: Vec<&UStatistic> = fs.iter().collect();
        let formula_label = if refs.len() == 1 { Method::DensityMean } else { Method::DensityMoment };

        let t = Instant::now();
        let seed = derive_seed(cfg.seed, "formula", i as u64);
        let r = pool.as_ref().map_err(Clone::clone).and_then(|p| density_mixed_moment(&refs, p, est.n_nodes, seed)).map(|m| MomentEstimate { method: formula_label, ..m.total });
        rec.push(target, formula_label.as_str(), seed, t.elapsed() + pool_secs, r);

        if poisson {
            let t = Instant::now();
            let seed = derive_seed(cfg.seed, "poisson", i as u64);
            let r = mixed_moment(&refs, &model.reference, None, est.n_nodes, seed).map(|m| m.total);
            rec.push(target, Method::Slivnyak.as_str(), seed, t.elapsed(), r);
        }

        let t = Instant::now();
        let r = sim.as_ref().map_err(Clone::clone).and_then(|s| sample_moment(&refs, &s.states));
        rec.push(target, Method::Simulation.as_str(), sim_params.seed, t.elapsed() + pool_secs, r);

        let t = Instant::now();
        let seed = derive_seed(cfg.seed, "importance", i as u64);
        let product = |x: &[Particle]| refs.iter().map(|f| eval_ustat(f, x)).product::<f64>();
        let r = importance_estimate(&model, &product, 1, est.n_replicates, seed);
        rec.push(target, Method::Importance.as_str(), seed, t.elapsed(), r);
    }
    Ok(rows)
}

/// Rescaled-statistic diagnostics of the reference Poisson process at every
/// level, against the asymptotic covariance of the model's statistics.
pub fn run_clt(cfg: &ExperimentConfig) -> gibbs_ustat::Result<Vec<CltRecord>> {
    let model = cfg.build_model()?;
    let m = &model.reference;
    let fs = model_ustats(&model);
    let refs: Vec<&UStatistic> = fs.iter().collect();
    let c = &cfg.clt;
    let means = unit_means(&refs, m, c.n_nodes, derive_seed(cfg.seed, "clt-means", 0))?;
    let cov = asymptotic_covariance(&refs, m, c.n_nodes, c.n_inner, derive_seed(cfg.seed, "clt-cov", 0))?;
    let reports = level_sweep(&refs, m, &c.levels, c.replicates, &means, &cov, derive_seed(cfg.seed, "clt-levels", 0))?;
    let mut rows = Vec::new();
    for r in &reports {
        for (f, d) in fs.iter().zip(&r.components) {
            rows.push(CltRecord {
                level: r.level,
                component: f.name.clone(),
                empirical_var: d.empirical_var,
                analytic_c: d.analytic_var,
                frobenius_err: r.frobenius_err,
                ks_stat: d.ks_stat,
                ks_p: d.ks_p,
            });
        }
    }
    Ok(rows)
}

/// Serializes rows as CSV with a header.
pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

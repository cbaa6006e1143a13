//! Configuration, orchestration and CSV reporting for the `gibbs-ustat`
//! command line tool.

pub mod checks;
pub mod config;
pub mod experiment;

use gibbs_ustat::ustat::{coefficient_table, enumerate_partition_family};
use serde::Serialize;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};
pub use experiment::{run_clt, run_experiment, run_sampler, to_csv, CltRecord, ResultRecord, RunOptions};

/// Runs `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool").install(f)
}

/// One CSV row of `partitions`. The last row for each orders tuple has
/// `j_vector = "*"` and the family cardinality in `a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRecord {
    pub orders: String,
    pub j_vector: String,
    pub a: u128,
    pub block_count: Option<usize>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn partition_rows(orders: &[usize]) -> gibbs_ustat::Result<Vec<PartitionRecord>> {
    let mut sorted = orders.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let o = join(&sorted);
    let mut rows: Vec<PartitionRecord> = coefficient_table(&sorted)?
        .into_iter()
        .map(|r| PartitionRecord { orders: o.clone(), j_vector: join(&r.j), a: r.a, block_count: Some(r.blocks) })
        .collect();
    let family = enumerate_partition_family(&sorted)?;
    rows.push(PartitionRecord { orders: o, j_vector: "*".into(), a: family.len() as u128, block_count: None });
    Ok(rows)
}

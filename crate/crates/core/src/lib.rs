//! Moments of U-statistics of finite point processes that have a density
//! with respect to a Poisson process.
//!
//! The crate covers interacting segment processes in the plane, interacting
//! circular plates in space and Strauss point processes. For each it
//! provides the statistic vector `G`, conditional intensities of every
//! order, birth-death-move sampling, and Monte Carlo evaluation of the
//! integral moment identities together with independent simulation and
//! importance-sampling estimates to check them against.

pub mod clt;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod io;
pub mod mcmc;
pub mod moments;
pub mod process;
pub mod seeds;
pub mod ustat;

pub use error::{Error, Result};
pub use estimate::{Method, MomentEstimate};

/// `(0..n).map(f)` collected in index order, run on the rayon pool when the
/// `parallel` feature is on. Results never depend on the number of threads.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

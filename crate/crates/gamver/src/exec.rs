use gamver_core::ParallelMap;
use rayon::prelude::*;

use crate::error::CliError;

/// Runs work on the current rayon pool; output order always follows the index.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl ParallelMap for Rayon {
    fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Runs `f` inside a pool of `jobs` threads (`None` lets rayon decide).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::param("jobs", "must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::param("jobs", e.to_string()))?;
    Ok(pool.install(f))
}

//! Execution strategy for embarrassingly parallel loops.
//!
//! The core never spawns threads. Callers that want parallelism pass an
//! implementation backed by a thread pool; results are always returned in
//! index order so output is independent of the worker count.

use alloc::vec::Vec;

pub trait ParallelMap: Sync {
    /// Evaluates `f(0), f(1), ..., f(n - 1)` and returns the results in order.
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ParallelMap for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

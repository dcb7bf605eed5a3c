//! Seeded fan-out over independent tasks.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};

use holstein_core::rng::task_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::HarnessError;

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    /// Thread count; the global pool when `None`.
    pub workers: Option<usize>,
    /// Task forced to fail, to exercise fault isolation.
    pub poison: Option<usize>,
    /// Report completed tasks on stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Ensemble<T> {
    /// Successful results by task index, in index order.
    pub results: Vec<(usize, T)>,
    pub failures: Vec<TaskFailure>,
    pub seeds: Vec<u64>,
}

impl<T> Ensemble<T> {
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.results.iter().map(|r| &r.1)
    }
}

/// Runs `task(index, seed)` for `index < n` with `seed = task_seed(master, index)`.
///
/// Errors and panics are recorded per task; the remaining tasks still run.
/// The collected order is the index order regardless of scheduling.
pub fn run_ensemble<T, F>(n: usize, master: u64, opts: &EnsembleOptions, task: F) -> Result<Ensemble<T>, HarnessError>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T, String> + Sync,
{
    let seeds: Vec<u64> = (0..n as u64).map(|i| task_seed(master, i)).collect();
    let done = AtomicUsize::new(0);
    let one = |i: usize| -> Result<T, String> {
        let out = if opts.poison == Some(i) {
            Err("forced solver failure".to_string())
        } else {
            catch_unwind(AssertUnwindSafe(|| task(i, seeds[i]))).unwrap_or_else(|p| Err(panic_message(p)))
        };
        if opts.progress {
            eprintln!("task {}/{n} done", done.fetch_add(1, Ordering::Relaxed) + 1);
        }
        out
    };
    let run = || (0..n).into_par_iter().map(one).collect::<Vec<_>>();
    let outcomes = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| HarnessError::Config {
                key: "--workers".into(),
                reason: e.to_string(),
            })?
            .install(run),
        None => run(),
    };
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (index, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(v) => results.push((index, v)),
            Err(message) => failures.push(TaskFailure {
                index,
                seed: seeds[index],
                message,
            }),
        }
    }
    Ok(Ensemble {
        results,
        failures,
        seeds,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    let text = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("panic: {text}")
}

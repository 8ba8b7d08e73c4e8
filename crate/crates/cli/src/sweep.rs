//! A small fixed-size worker pool for sweep runs. `DU_THREADS` caps the
//! parallelism; results come back in task order regardless of completion
//! order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker count: DU_THREADS when set, otherwise the available parallelism.
pub fn worker_count(tasks: usize) -> usize {
    let default = std::thread::available_parallelism()
        .map(std::num::NonZeroUsize::get)
        .unwrap_or(1);
    let cap = std::env::var("DU_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(default);
    cap.min(tasks).max(1)
}

/// Run every task on the pool and collect results in input order.
pub fn run_parallel<T, F>(tasks: Vec<F>) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let n = tasks.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = worker_count(n);
    if workers == 1 {
        return tasks.into_iter().map(|f| f()).collect();
    }
    let next = AtomicUsize::new(0);
    let tasks: Vec<Mutex<Option<F>>> = tasks.into_iter().map(|f| Mutex::new(Some(f))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let task = tasks[idx].lock().unwrap().take().expect("task taken once");
                let out = task();
                *results[idx].lock().unwrap() = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("task completed"))
        .collect()
}

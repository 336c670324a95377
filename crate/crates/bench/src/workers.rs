use crate::error::{Error, Result};

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "CANOPY_BENCH_WORKERS";

/// `CANOPY_BENCH_WORKERS` when set to a positive integer, else `configured`,
/// else the available parallelism.
pub fn resolve_workers(configured: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(configured)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))
}

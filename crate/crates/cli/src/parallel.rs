//! Thread pools for sweeps. Work items are collected in input order, so
//! results do not depend on the thread count.

use rayon::prelude::*;

/// Caps the number of worker threads used by any sweep.
pub const THREADS_ENV: &str = "RICCI_MMP_THREADS";

pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Pool with `requested` threads (default: all cores), capped by the
/// environment.
pub fn pool(requested: Option<usize>) -> rayon::ThreadPool {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut threads = requested.filter(|&n| n > 0).unwrap_or(available);
    if let Some(cap) = thread_cap() {
        threads = threads.min(cap);
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

/// Maps in parallel on the current pool and keeps input order.
pub fn map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

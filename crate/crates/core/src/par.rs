//! Ordered data-parallel map. With the `parallel` feature the work runs on
//! the current rayon pool; without it, on the calling thread. Results are
//! always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..len`, preserving order.
pub fn map_range<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Runs `f` with at most `workers` threads. `0` keeps the ambient pool.
/// Without the `parallel` feature the worker count is ignored.
pub fn with_workers<T, F>(workers: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// True when built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

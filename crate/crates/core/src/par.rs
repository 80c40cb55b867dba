//! Order-preserving data-parallel maps.
//!
//! With the `parallel` feature (default) [`map`] runs on the rayon pool; without
//! it, it is the sequential [`map_seq`]. Results always come back in input order,
//! and callers reduce them sequentially, so outputs are bit-identical either way.

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ASR_NUM_THREADS";

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_seq(items, f)
}

pub fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Explicit execution choice, for comparing both paths in one build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Exec {
    /// Rayon when compiled in, otherwise sequential.
    #[default]
    Parallel,
    Sequential,
}

pub fn map_with<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Exec::Parallel => map(items, f),
        Exec::Sequential => map_seq(items, f),
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Reads `ASR_NUM_THREADS` and sizes the global pool accordingly. Returns the
/// requested count, if any. A pool that is already initialised is left alone.
pub fn configure_threads_from_env() -> Option<usize> {
    let n = std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)?;
    #[cfg(feature = "parallel")]
    {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::debug!("global thread pool already initialised; {THREADS_ENV} ignored");
        }
    }
    Some(n)
}

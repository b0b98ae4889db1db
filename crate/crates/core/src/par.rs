//! Order-preserving data-parallel maps.
//!
//! With the `parallel` feature these run on rayon; without it they fall back
//! to a plain sequential iterator. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items` on the global pool.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items` with at most `workers` items in flight, for work
/// that blocks on I/O (LLM calls). `workers <= 1` runs inline.
#[cfg(feature = "parallel")]
pub fn map_bounded<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .with_max_len(1)
                .map(|(i, t)| f(i, t))
                .collect()
        }),
        Err(e) => {
            log::warn!("could not build worker pool ({e}); running sequentially");
            items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_bounded<T, R, F>(items: &[T], _workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Whether this build runs the parallel paths.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

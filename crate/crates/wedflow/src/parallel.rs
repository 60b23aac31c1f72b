//! Data-parallel map helpers.
//!
//! With the `parallel` feature (default) index maps run on the rayon pool;
//! without it the same code compiles to sequential loops. Reductions are never
//! parallelized: callers collect per-index values in index order and fold
//! sequentially, so results are bitwise identical across backends and thread
//! counts.

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant of [`indexed_map`], kept unconditionally so the
/// bench suite can pit the two backends against each other in one build.
pub fn indexed_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Caps the global worker pool at `n` threads. Returns `false` when the pool
/// was already initialized (first caller wins) or the crate was built without
/// the `parallel` feature. Results do not depend on the thread count either
/// way; this only bounds resource use.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .is_ok()
}

/// Sequential build: thread caps are a no-op.
#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) -> bool {
    false
}

/// Fallible map over `0..n` in index order; the first error wins
/// deterministically (lowest index).
#[cfg(feature = "parallel")]
pub fn try_indexed_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    use rayon::prelude::*;
    let results: Vec<Result<T, E>> = (0..n).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

/// Fallible map over `0..n` in index order; the first error wins.
#[cfg(not(feature = "parallel"))]
pub fn try_indexed_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_map_preserves_order() {
        let v = indexed_map(5, |i| i * i);
        assert_eq!(v, vec![0, 1, 4, 9, 16]);
        assert_eq!(v, indexed_map_seq(5, |i| i * i));
    }

    #[test]
    fn try_indexed_map_reports_lowest_index_error() {
        let r: Result<Vec<usize>, usize> =
            try_indexed_map(10, |i| if i >= 3 { Err(i) } else { Ok(i) });
        assert_eq!(r.unwrap_err(), 3);
    }
}

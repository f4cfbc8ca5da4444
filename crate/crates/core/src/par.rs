//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these fan out over rayon; without it they are plain
//! loops. Outputs are always in index order so downstream reductions see the same
//! sequence of values regardless of scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, preserving order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Map `f` over a slice, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Split `0..n` into contiguous chunks of at most `chunk` and map each chunk.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    map_range(count, |c| f(c * chunk..((c + 1) * chunk).min(n)))
}

/// Run `f` with batch work confined to a single worker thread.
///
/// Results do not depend on scheduling either way; this only removes thread-count
/// effects from timing and from any future reduction that is not order-fixed.
pub fn pinned<T, F>(f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

/// Pairwise sum with a shape fixed by the input length only.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            tree_sum(&values[..mid]) + tree_sum(&values[mid..])
        }
    }
}

/// Elementwise pairwise sum of equally sized vectors, fixed shape.
pub fn tree_sum_vecs(vectors: &[Vec<f64>]) -> Vec<f64> {
    match vectors.len() {
        0 => Vec::new(),
        1 => vectors[0].clone(),
        n => {
            let mid = n / 2;
            let mut left = tree_sum_vecs(&vectors[..mid]);
            let right = tree_sum_vecs(&vectors[mid..]);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

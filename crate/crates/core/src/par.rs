//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the loops below run on the rayon pool; without
//! it they are plain iterators. Reductions are always split into fixed-size
//! chunks whose partial sums are combined left to right, so results are
//! bit-identical across thread counts and across both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for reductions.
pub const CHUNK: usize = 2048;

/// `out[i] = op(i)` for every index.
pub fn fill<F>(out: &mut [f64], op: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut().enumerate().for_each(|(i, o)| *o = op(i));
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().enumerate().for_each(|(i, o)| *o = op(i));
}

/// Deterministic chunked sum of `term(i)` for `i in 0..n`.
pub fn sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).map(&term).sum::<f64>()
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<f64> = (0..chunks).map(partial).collect();
    parts.into_iter().sum()
}

/// Deterministic chunked sum of a fixed-length vector-valued term.
pub fn sum_vec<const K: usize, F>(n: usize, term: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut acc = [0.0; K];
        for i in lo..hi {
            let t = term(i);
            for k in 0..K {
                acc[k] += t[k];
            }
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<[f64; K]> = (0..chunks).into_par_iter().map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<[f64; K]> = (0..chunks).map(partial).collect();
    let mut acc = [0.0; K];
    for p in parts {
        for k in 0..K {
            acc[k] += p[k];
        }
    }
    acc
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(a.len(), |i| a[i] * b[i])
}

/// Order-preserving map over independent tasks (seeds, sweep points).
pub fn map_tasks<T, R, F>(items: &[T], op: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(op).collect();
    #[cfg(not(feature = "parallel"))]
    return items.iter().map(op).collect();
}

/// Sizes the global worker pool. Must run before any parallel work; without
/// the `parallel` feature only `1` is accepted.
pub fn configure_threads(n: usize) -> crate::error::Result<()> {
    #[cfg(feature = "parallel")]
    return rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::error::Error::Usage(format!("thread pool: {e}")));
    #[cfg(not(feature = "parallel"))]
    return if n <= 1 {
        Ok(())
    } else {
        Err(crate::error::Error::Usage("built without the parallel feature".into()))
    };
}

/// Number of worker threads the helpers above will use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    return 1;
}

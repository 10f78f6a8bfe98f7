//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] silently
//! runs sequentially. Reductions always combine fixed-size chunks in index
//! order so that results are bit-identical across thread counts and modes.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for deterministic reductions.
pub const REDUCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually fan out over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly across threads. Output order is index order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fills `out[i] = f(i)` chunk-wise.
pub fn fill_chunks<T, F>(exec: Execution, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(ci, slice)| f(ci * chunk, slice));
        return;
    }
    let _ = exec;
    out.chunks_mut(chunk)
        .enumerate()
        .for_each(|(ci, slice)| f(ci * chunk, slice));
}

/// Deterministic chunked reduction over `0..n`.
///
/// Each chunk of [`REDUCE_CHUNK`] indices is folded sequentially starting from
/// `identity()`, then the chunk partials are combined left to right.
pub fn chunked_reduce<A, Fold, Combine, Id>(
    exec: Execution,
    n: usize,
    identity: Id,
    fold: Fold,
    combine: Combine,
) -> A
where
    A: Send,
    Id: Fn() -> A + Sync + Send,
    Fold: Fn(A, usize) -> A + Sync + Send,
    Combine: Fn(A, A) -> A,
{
    let n_chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_range(exec, n_chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).fold(identity(), &fold)
    });
    partials.into_iter().fold(identity(), combine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let n = 10_000;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e3;
        let seq = chunked_reduce(Execution::Sequential, n, || 0.0, |a, i| a + f(i), |a, b| a + b);
        let par = chunked_reduce(Execution::Parallel, n, || 0.0, |a, i| a + f(i), |a, b| a + b);
        assert_eq!(seq.to_bits(), par.to_bits());

        let a = map_range(Execution::Sequential, 1000, |i| i * 3);
        let b = map_range(Execution::Parallel, 1000, |i| i * 3);
        assert_eq!(a, b);
    }

    #[test]
    fn fill_chunks_covers_all() {
        let mut v = vec![0usize; 1001];
        fill_chunks(Execution::Parallel, &mut v, 64, |start, s| {
            for (k, x) in s.iter_mut().enumerate() {
                *x = start + k;
            }
        });
        assert!(v.iter().enumerate().all(|(i, x)| i == *x));
    }

    #[test]
    fn empty_reduce_is_identity() {
        let s = chunked_reduce(Execution::Parallel, 0, || 5.0, |a, _| a + 1.0, |a: f64, b| a + b - 5.0);
        assert_eq!(s, 5.0);
    }
}

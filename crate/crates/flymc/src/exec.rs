//! Deterministic chunked execution.
//!
//! Sums over the dataset (collapsed-bound accumulation, full-posterior
//! evaluation) run over fixed-size chunks whose partials are merged in a
//! fixed pairwise order. The chunk layout and merge tree depend only on the
//! input length, never on the thread count, so the sequential fallback and
//! the rayon path produce bitwise identical results. Pairwise merging also
//! keeps rounding error logarithmic in the number of chunks, which matters
//! once datasets reach the 1e5+ range.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk length for data sweeps. Invariant: never derived from the
/// worker count, otherwise results would depend on the machine.
pub const CHUNK_SIZE: usize = 1024;

/// Below this many elements the parallel path is never taken.
pub const PARALLEL_MIN: usize = 8192;

/// How a data sweep should execute. `Auto` resolves via [`resolve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Auto,
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

/// Resolved execution choice for an input of length `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Resolved {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

fn resolve(mode: ExecMode, n: usize) -> Resolved {
    match mode {
        ExecMode::Sequential => Resolved::Sequential,
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => Resolved::Parallel,
        ExecMode::Auto => {
            #[cfg(feature = "parallel")]
            if n >= PARALLEL_MIN {
                return Resolved::Parallel;
            }
            let _ = n;
            Resolved::Sequential
        }
    }
}

/// Maps `chunk_map` over fixed chunks of `0..n` and returns the partials in
/// chunk order. The chunk boundaries are the same in every mode.
pub fn chunked_partials<T, F>(n: usize, mode: ExecMode, chunk_map: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    if n == 0 {
        return Vec::new();
    }
    let n_chunks = n.div_ceil(CHUNK_SIZE);
    let bounds = |c: usize| {
        let start = c * CHUNK_SIZE;
        start..(start + CHUNK_SIZE).min(n)
    };
    match resolve(mode, n) {
        Resolved::Sequential => (0..n_chunks).map(|c| chunk_map(bounds(c))).collect(),
        #[cfg(feature = "parallel")]
        Resolved::Parallel => (0..n_chunks)
            .into_par_iter()
            .map(|c| chunk_map(bounds(c)))
            .collect(),
    }
}

/// Merges partials pairwise: adjacent pairs are combined level by level until
/// one value remains. The merge order is a function of `parts.len()` only.
pub fn fold_pairwise<T>(mut parts: Vec<T>, mut merge: impl FnMut(T, T) -> T) -> Option<T> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Pairwise sum of a sweep producing one f64 per index, via fixed chunks.
pub fn sum_chunked<F>(n: usize, mode: ExecMode, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts = chunked_partials(n, mode, |r| r.map(&term).sum::<f64>());
    fold_pairwise(parts, |a, b| a + b).unwrap_or(0.0)
}

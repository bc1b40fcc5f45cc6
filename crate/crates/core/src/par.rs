//! Thin switch between rayon and plain iterators.
//!
//! Every helper returns results in index order, so callers that reduce the
//! output sequentially get bit-identical numbers with or without the
//! `parallel` feature and for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, possibly across threads.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Applies `f` to consecutive chunks of `len` items, `chunk` at a time.
/// Chunk boundaries depend only on `len` and `chunk`.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    F: Fn(std::ops::Range<usize>) -> T,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    (0..n_chunks)
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` with the helpers above limited to `threads` workers.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

/// Without the `parallel` feature everything is already single-threaded.
#[cfg(not(feature = "parallel"))]
pub fn with_threads<T>(_threads: usize, f: impl FnOnce() -> T) -> T {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(10, 3, |r| (r.start, r.end));
        assert_eq!(parts, vec![(0, 3), (3, 6), (6, 9), (9, 10)]);
        assert!(map_chunks(0, 4, |r| r.len()).is_empty());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let sum = |n| {
            with_threads(n, || {
                map_chunks(1000, 7, |r| r.map(|i| (i as f64).sqrt()).sum::<f64>())
            })
        };
        assert_eq!(sum(1), sum(4));
    }

    #[test]
    fn range_preserves_order() {
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}

//! Data-parallel helpers. Every reduction has a fixed shape, so results are
//! bitwise identical across thread counts and with the `parallel` feature off.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Pairwise tree reduction over a slice. The tree shape depends only on the
/// slice length, never on thread count.
pub fn tree_reduce<T: Copy, F: Fn(T, T) -> T + Copy>(xs: &[T], identity: T, combine: F) -> T {
    match xs.len() {
        0 => identity,
        1 => xs[0],
        n => {
            let mid = n / 2;
            let left = tree_reduce(&xs[..mid], identity, combine);
            let right = tree_reduce(&xs[mid..], identity, combine);
            combine(left, right)
        }
    }
}

/// Splits `0..n` into fixed-size chunks, folds each chunk with `fold`, then
/// tree-reduces the per-chunk results. Chunk boundaries depend only on `n`.
pub fn fold_chunked<T, F, G>(n: usize, chunk: usize, fold: F, identity: T, combine: G) -> T
where
    T: Copy + Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
    G: Fn(T, T) -> T + Copy,
{
    assert!(chunk > 0);
    let chunks = n.div_ceil(chunk);
    let partials = map_indexed(chunks, |c| {
        let lo = c * chunk;
        let hi = usize::min(lo + chunk, n);
        fold(lo..hi)
    });
    tree_reduce(&partials, identity, combine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_reduce_sums_every_length() {
        for n in 0..40usize {
            let xs: Vec<u64> = (0..n as u64).collect();
            assert_eq!(tree_reduce(&xs, 0, |a, b| a + b), (0..n as u64).sum());
        }
    }

    #[test]
    fn chunked_fold_matches_direct_sum() {
        let direct: f64 = (0..1000).map(|i| (i as f64).sqrt()).sum();
        let folded = fold_chunked(
            1000,
            64,
            |r| r.map(|i| (i as f64).sqrt()).sum::<f64>(),
            0.0,
            |a, b| a + b,
        );
        assert!((direct - folded).abs() < 1e-9);
    }

    #[test]
    fn chunk_shape_fixed_by_length() {
        // Same chunk size must give the same bits no matter how map_indexed runs.
        let a = fold_chunked(997, 32, |r| r.map(|i| 1.0 / (1.0 + i as f64)).sum::<f64>(), 0.0, |x, y| x + y);
        let b = fold_chunked(997, 32, |r| r.map(|i| 1.0 / (1.0 + i as f64)).sum::<f64>(), 0.0, |x, y| x + y);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

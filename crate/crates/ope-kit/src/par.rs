//! Execution backend: rayon when the `parallel` feature is enabled, plain
//! loops otherwise. Maps preserve index order and reductions always fold in
//! index order, so both backends produce bit-identical results — the feature
//! only changes where the map body runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every index in `0..n`, output in index order.
pub(crate) fn indexed_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sum of `f(i)` over `0..n`, folded in index order in both backends.
pub(crate) fn indexed_sum(n: usize, f: impl Fn(usize) -> f64 + Send + Sync) -> f64 {
    indexed_map(n, f).into_iter().sum()
}

/// Sizes the global rayon pool from the `OPE_KIT_THREADS` environment
/// variable. Unset, empty, or unparsable values leave the default pool; a
/// second call (or an already-built pool) is a no-op. Does nothing in the
/// sequential build, which ignores thread counts entirely.
pub fn configure_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(raw) = std::env::var("OPE_KIT_THREADS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = indexed_map(100, |i| 2 * i);
        assert_eq!(v.len(), 100);
        for (i, &x) in v.iter().enumerate() {
            assert_eq!(x, 2 * i);
        }
    }

    #[test]
    fn sum_folds_in_index_order() {
        // The fold order is pinned: the result must equal the sequential
        // left-to-right sum exactly, not merely approximately.
        let f = |i: usize| ((i as f64) * 0.1).sin() / (i as f64 + 1.0);
        let expected: f64 = (0..1000).map(f).sum();
        assert_eq!(indexed_sum(1000, f), expected);
    }
}

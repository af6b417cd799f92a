//! Data-parallel kernels with run-to-run deterministic reductions.
//!
//! Grid loops are embarrassingly parallel (disjoint writes per point), so the
//! only place thread count could leak into results is a floating-point
//! reduction. Sums are therefore chunked at a fixed block size and combined in
//! a fixed pairwise tree, independent of how many workers produced the
//! partials. With the `parallel` feature disabled everything degrades to the
//! sequential equivalents.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction block; result bytes must not depend on thread count.
pub const SUM_BLOCK: usize = 1024;

/// Fill `out[i] = f(i)` over the whole slice.
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(SUM_BLOCK).enumerate().for_each(|(b, chunk)| {
            let base = b * SUM_BLOCK;
            for (k, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + k);
            }
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
    }
}

/// Run `f(point_index, &mut row)` over a set of equally sized mutable rows
/// (one scratch row per point, e.g. all components at that point).
pub fn for_each_row<F>(rows: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    assert_eq!(rows.len() % row_len, 0);
    #[cfg(feature = "parallel")]
    {
        rows.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, row) in rows.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}

fn chunk_sums<F>(len: usize, term: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let nblocks = len.div_ceil(SUM_BLOCK);
    let mut partials = vec![0.0; nblocks];
    #[cfg(feature = "parallel")]
    {
        partials.par_iter_mut().enumerate().for_each(|(b, slot)| {
            let lo = b * SUM_BLOCK;
            let hi = (lo + SUM_BLOCK).min(len);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += term(i);
            }
            *slot = acc;
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (b, slot) in partials.iter_mut().enumerate() {
            let lo = b * SUM_BLOCK;
            let hi = (lo + SUM_BLOCK).min(len);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += term(i);
            }
            *slot = acc;
        }
    }
    partials
}

/// Pairwise tree over the partials; shape fixed by `len` alone.
fn pairwise(p: &mut [f64]) -> f64 {
    let mut m = p.len();
    if m == 0 {
        return 0.0;
    }
    while m > 1 {
        let half = m.div_ceil(2);
        for i in 0..m / 2 {
            p[i] = p[2 * i] + p[2 * i + 1];
        }
        if m % 2 == 1 {
            p[m / 2] = p[m - 1];
        }
        m = half;
    }
    p[0]
}

/// Deterministic sum of `term(i)` for `i in 0..len`.
pub fn sum_indexed<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let mut partials = chunk_sums(len, term);
    pairwise(&mut partials)
}

/// Deterministic sum of a slice.
pub fn sum(v: &[f64]) -> f64 {
    sum_indexed(v.len(), |i| v[i])
}

/// Max of `term(i)`; max is order-independent so no special tree is needed.
pub fn max_indexed<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len)
            .into_par_iter()
            .map(&term)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut m = f64::NEG_INFINITY;
        for i in 0..len {
            m = m.max(term(i));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_smooth_data() {
        let v: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((sum(&v) - naive).abs() < 1e-9);
    }

    #[test]
    fn sum_is_identical_for_any_worker_count() {
        // The tree depends only on len, so two evaluations must agree bitwise.
        let v: Vec<f64> = (0..50_000).map(|i| (i as f64).sqrt().fract() - 0.5).collect();
        let a = sum(&v);
        let b = sum(&v);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn max_indexed_finds_max() {
        let v = [1.0, -3.0, 7.5, 2.0];
        assert_eq!(max_indexed(v.len(), |i| v[i]), 7.5);
    }
}

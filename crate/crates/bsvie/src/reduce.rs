//! Deterministic reductions.
//!
//! Every mean and sum that feeds a reported number goes through the pairwise
//! reduction below. The summation tree depends only on the slice length, so
//! results are bit-identical at any rayon worker count. Pairwise splitting at
//! the midpoint also makes group means over power-of-two blocks commute
//! bitwise with means of their halves (division by two is exact), which the
//! prefix-group estimator relies on.

/// Pairwise sum with a fixed, length-determined reduction tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Pairwise sum of `f(x)` over a slice without materialising the mapped values.
pub fn pairwise_sum_by<T, F: Fn(&T) -> f64 + Copy>(xs: &[T], f: F) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => f(&xs[0]),
        n => {
            let mid = n / 2;
            pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
        }
    }
}

/// Pairwise sum of `f(i)` over an index range, same tree as `pairwise_sum`.
pub fn pairwise_sum_range<F: Fn(usize) -> f64 + Copy>(lo: usize, hi: usize, f: F) -> f64 {
    match hi.saturating_sub(lo) {
        0 => 0.0,
        1 => f(lo),
        n => {
            let mid = lo + n / 2;
            pairwise_sum_range(lo, mid, f) + pairwise_sum_range(mid, hi, f)
        }
    }
}

/// Mean over a slice using the pairwise tree.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

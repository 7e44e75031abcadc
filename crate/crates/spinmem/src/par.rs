//! Execution policy and deterministic reductions.
//!
//! Work is always split into the same fixed chunks whatever the thread
//! count, and partial results are combined by a fixed pairwise tree. The
//! sequential and the rayon path therefore produce identical bits.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    /// Parallel when the `parallel` feature is enabled.
    #[default]
    Auto,
    Sequential,
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Exec::Sequential
    }
}

/// Apply `f` to every element of `items`, collecting results in order.
pub fn map_mut<T, R, F>(exec: Exec, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter_mut().map(f).collect();
    }
    let _ = exec;
    items.iter_mut().map(f).collect()
}

/// Evaluate `f(i)` for `i in 0..n`, collecting results in index order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Pairwise tree reduction of fixed-width partial sums.
pub fn tree_sum<const K: usize>(parts: &[[f64; K]]) -> [f64; K] {
    match parts.len() {
        0 => [0.0; K],
        1 => parts[0],
        n => {
            let (a, b) = parts.split_at(n / 2);
            let (a, b) = (tree_sum(a), tree_sum(b));
            std::array::from_fn(|k| a[k] + b[k])
        }
    }
}

/// Pairwise tree sum of scalars.
pub fn tree_sum1(parts: &[f64]) -> f64 {
    match parts.len() {
        0 => 0.0,
        1 => parts[0],
        n => {
            let (a, b) = parts.split_at(n / 2);
            tree_sum1(a) + tree_sum1(b)
        }
    }
}

/// Deterministic sum of a long slice: fixed 1024-element chunks, each
/// summed pairwise, then a tree over chunks.
pub fn det_sum(exec: Exec, xs: &[f64]) -> f64 {
    const CH: usize = 1024;
    let n = xs.len().div_ceil(CH);
    let parts = map_range(exec, n, |i| {
        tree_sum1(&xs[i * CH..((i + 1) * CH).min(xs.len())])
    });
    tree_sum1(&parts)
}

//! Data-parallel map helpers with a sequential fallback.
//!
//! Per-sample work (loss evaluation, gradients, influence scores, QP solves)
//! is independent across samples. We fan out with rayon when the `parallel`
//! feature is enabled and fall back to a plain loop otherwise. Outputs are
//! collected in input order and all reductions happen sequentially afterwards,
//! so results are bit-identical regardless of thread count or feature flags.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_slice<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O,
{
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_range<O, F>(n: usize, f: F) -> Vec<O>
where
    F: Fn(usize) -> O,
{
    (0..n).map(f).collect()
}

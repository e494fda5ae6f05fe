//! Tiny fan-out helpers. With the `parallel` feature these dispatch onto the
//! rayon pool; without it they run plain loops. Callers must make each task
//! self-contained (own RNG stream, no shared mutability) so both modes give
//! identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f)` collected in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map every index through `f` and fold the results with `combine`.
/// `combine` must be associative and commutative; the reduction order is
/// unspecified under the `parallel` feature.
#[cfg(feature = "parallel")]
pub fn map_reduce<T, F, C>(n: usize, identity: impl Fn() -> T + Sync + Send, f: F, combine: C) -> T
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(f)
        .reduce(&identity, &combine)
}

#[cfg(not(feature = "parallel"))]
pub fn map_reduce<T, F, C>(n: usize, identity: impl Fn() -> T, f: F, combine: C) -> T
where
    F: Fn(usize) -> T,
    C: Fn(T, T) -> T,
{
    (0..n).map(f).fold(identity(), &combine)
}

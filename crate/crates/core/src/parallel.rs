//! Data-parallel helpers that compile to plain iteration when the
//! `parallel` feature is off.
//!
//! Work is always split into the same fixed-size chunks and results are
//! returned in input order, so reductions over them are bit-identical
//! whichever [`Execution`] mode ran them.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when built with the `parallel` feature,
    /// sequential otherwise.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `items.iter().map(f).collect()`, possibly across threads.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Applies `f` to consecutive chunks of `chunk` items, returning one result
/// per chunk in order.
pub fn map_chunks<T, R, F>(exec: Execution, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_chunks(chunk).map(f).collect();
    }
    let _ = exec;
    items.chunks(chunk).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(Execution::Sequential, &xs, |x| x * x);
        let b = map(Execution::Parallel, &xs, |x| x * x);
        assert_eq!(a, b);
        let sum = |c: &[u64]| c.iter().sum::<u64>();
        assert_eq!(map_chunks(Execution::Sequential, &xs, 7, sum), map_chunks(Execution::Parallel, &xs, 7, sum));
        assert_eq!(map_chunks(Execution::Parallel, &xs, 7, sum).len(), 143);
    }
}

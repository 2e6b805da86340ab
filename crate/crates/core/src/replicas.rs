//! Replica banks: independent runs keyed by replica index, executed either
//! on the rayon pool or sequentially. Results always come back in index
//! order, so aggregation never depends on scheduling.

use crate::streams::MasterSeed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the current rayon pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_ordered<I, T, F>(items: &[I], exec: Execution, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `f(index, seed)` for replicas `first..first + count`, where the seed
/// of replica `i` is `base.replica(i)`.
pub fn run_bank<T, F>(base: MasterSeed, first: u64, count: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, MasterSeed) -> T + Sync + Send,
{
    let idx: Vec<u64> = (first..first + count as u64).collect();
    map_ordered(&idx, exec, |&i| f(i, base.replica(i)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let base = MasterSeed(99);
        let f = |i: u64, s: MasterSeed| (i, s.0.rotate_left(7) ^ i);
        let a = run_bank(base, 3, 100, Execution::Sequential, f);
        let b = run_bank(base, 3, 100, Execution::Parallel, f);
        assert_eq!(a, b);
        assert_eq!(a[0].0, 3);
        assert_eq!(a.len(), 100);
    }
}

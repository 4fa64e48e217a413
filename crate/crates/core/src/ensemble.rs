//! Monte Carlo fan-out over trajectory indices.
//!
//! Results always come back in index order, so output does not depend on the
//! execution mode or on how work was scheduled.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Data-parallel over trajectories; sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Applies `f` to `0..count`, preserving order; the first error wins.
pub fn map_trajectories<T, F>(count: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..count).map(f).collect(),
        Execution::Parallel => parallel_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Seed of trajectory `k` under the `seed_base + k` policy.
pub fn trajectory_seed(seed_base: u64, k: usize) -> u64 {
    seed_base.wrapping_add(k as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn modes_agree_and_keep_order() {
        let f = |k: usize| Ok((k * k) as u64);
        let a = map_trajectories(100, Execution::Sequential, f).unwrap();
        let b = map_trajectories(100, Execution::Parallel, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }

    #[test]
    fn errors_propagate() {
        let r = map_trajectories(10, Execution::Parallel, |k| {
            if k == 3 {
                Err(Error::Analysis("boom".into()))
            } else {
                Ok(k)
            }
        });
        assert!(r.is_err());
    }
}

//! Execution policy for the data-parallel loops.
//!
//! Every parallel loop in the crate is an order-preserving map or an exact
//! reduction (min/max with index tie-breaks), so sequential and parallel
//! runs produce bit-identical results. Without the `parallel` feature the
//! `Parallel` policy silently runs sequentially.

use serde::{Deserialize, Serialize};

/// Slices shorter than this are always swept sequentially.
pub(crate) const MIN_PARALLEL_LEN: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this policy will actually fan out to the thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..len).map(f).collect()`, fanned out when the policy allows and the
/// range is long enough.
pub(crate) fn map_range<T, F>(exec: Execution, len: usize, min_len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() && len >= min_len {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = (exec, min_len);
    (0..len).map(f).collect()
}

/// Folds `0..len` in contiguous chunks and merges the chunk accumulators.
///
/// `merge` must be associative and must not depend on grouping for the
/// result to be reproducible across policies; every caller uses exact
/// min/max style merges.
pub(crate) fn fold_range<A, I, F, M>(
    exec: Execution,
    len: usize,
    chunk: usize,
    identity: I,
    fold: F,
    merge: M,
) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, usize) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() && len > chunk {
            use rayon::prelude::*;
            let n_chunks = len.div_ceil(chunk);
            return (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let end = ((c + 1) * chunk).min(len);
                    (c * chunk..end).fold(identity(), &fold)
                })
                .reduce(&identity, &merge);
        }
    }
    let _ = (exec, &merge);
    (0..len).fold(identity(), fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree_on_map_and_fold() {
        let f = |i: usize| ((i as f64) * 0.37).sin();
        let a = map_range(Execution::Sequential, 10_000, 1, f);
        let b = map_range(Execution::Parallel, 10_000, 1, f);
        assert_eq!(a, b);

        let min = |exec| {
            fold_range(
                exec,
                10_000,
                64,
                || f64::INFINITY,
                |acc, i| acc.min(f(i)),
                f64::min,
            )
        };
        assert_eq!(min(Execution::Sequential), min(Execution::Parallel));
    }
}

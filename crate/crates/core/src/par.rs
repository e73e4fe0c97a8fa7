//! Execution strategy for the data-parallel batch loops (replications,
//! seed sweeps, oracle batches, grid scans).
//!
//! With the `parallel` feature (default) batches fan out over rayon's global
//! pool. Without it, or with [`Execution::Sequential`], everything runs on the
//! calling thread. Results are always returned in input order, so output does
//! not depend on the execution mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
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

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Ordered map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Ordered map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Minimum of `f` over `0..n` by `key`, ties resolved to the lowest index.
    pub fn min_by_range<R, F>(self, n: usize, f: F) -> Option<(usize, R)>
    where
        R: Send + PartialOrd,
        F: Fn(usize) -> R + Sync + Send,
    {
        let pick = |a: (usize, R), b: (usize, R)| {
            if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                b
            } else {
                a
            }
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(|k| (k, f(k))).reduce_with(pick);
        }
        (0..n).map(|k| (k, f(k))).reduce(pick)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Execution::Sequential.map(&xs, |x| x * x);
        let b = Execution::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        let m1 = Execution::Sequential.min_by_range(100, |k| (k as i64 - 40).abs());
        let m2 = Execution::Parallel.min_by_range(100, |k| (k as i64 - 40).abs());
        assert_eq!(m1, Some((40, 0)));
        assert_eq!(m1, m2);
    }

    #[test]
    fn min_ties_go_low() {
        let m = Execution::Parallel.min_by_range(64, |k| k % 8);
        assert_eq!(m, Some((0, 0)));
    }
}

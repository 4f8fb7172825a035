//! Batches of independent seeded trials. With the `parallel` feature the
//! batch runs on the rayon pool; results are always in seed order.

/// Runs `trial(seed)` for `seed` in `first..first + count`.
pub fn run_trials<T, F>(first: u64, count: u64, trial: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (first..first + count).into_par_iter().map(trial).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_trials_sequential(first, count, trial)
    }
}

pub fn run_trials_sequential<T, F>(first: u64, count: u64, trial: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (first..first + count).map(trial).collect()
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

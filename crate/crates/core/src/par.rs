//! Data-parallel helpers. Without the `parallel` feature, or with a budget of
//! one thread, everything runs sequentially on the caller's thread.

/// Number of worker threads; zero means every available core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ThreadBudget(usize);

impl ThreadBudget {
    pub fn new(threads: usize) -> Self {
        Self(threads)
    }

    pub fn sequential() -> Self {
        Self(1)
    }

    pub fn max() -> Self {
        Self(0)
    }

    /// Concrete thread count.
    pub fn resolve(self) -> usize {
        match self.0 {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self.0 != 1
    }
}

/// Runs `f` inside a pool sized to `budget`.
pub fn install<R: Send>(budget: ThreadBudget, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if budget.is_parallel() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new()
            .num_threads(budget.resolve())
            .build()
        {
            return pool.install(f);
        }
    }
    let _ = budget;
    f()
}

/// `f(0), f(1), ..., f(n - 1)` in order.
pub fn map_range<R, F>(parallel: bool, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

pub fn join<A, B, RA, RB>(parallel: bool, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return rayon::join(a, b);
    }
    let _ = parallel;
    (a(), b())
}

//! Task fan-out over independent sweep points.
//!
//! With the `parallel` feature the tasks run on a dedicated rayon pool of the
//! requested size; without it they run in order on the calling thread. Either
//! way results come back in input order.

/// Applies `f` to every task and returns the results in input order.
#[cfg(feature = "parallel")]
pub fn map_tasks<T, R, F>(tasks: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 || tasks.len() <= 1 {
        return tasks.into_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| tasks.into_par_iter().map(&f).collect()),
        Err(_) => tasks.into_iter().map(f).collect(),
    }
}

/// Applies `f` to every task and returns the results in input order.
#[cfg(not(feature = "parallel"))]
pub fn map_tasks<T, R, F>(tasks: Vec<T>, _workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    tasks.into_iter().map(f).collect()
}

/// Whether this build distributes tasks over threads.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

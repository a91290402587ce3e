//! Data-parallel helpers. With the `parallel` feature these run on rayon;
//! without it every helper degrades to a plain sequential loop with the
//! same results and ordering.

/// Maps `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs one job per item on a dedicated pool of `items.len()` threads.
///
/// Meant for blocking jobs (shard workers waiting on sockets or sleeps),
/// which must not starve the global pool.
#[cfg(feature = "parallel")]
pub fn run_blocking<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(items.len())
        .thread_name(|i| format!("shard-{i}"))
        .build()
    {
        Ok(pool) => pool.install(|| items.into_par_iter().with_max_len(1).map(f).collect()),
        Err(e) => {
            log::warn!("could not build shard pool ({e}); running sequentially");
            items.into_iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn run_blocking<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// True when the crate was built with the `parallel` feature.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

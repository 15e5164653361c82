//! Data-parallel helpers with a deterministic sequential fallback.
//!
//! Results are always produced in input order, so anything built from them
//! (triplet lists, summed vectors) is bit-identical regardless of the thread
//! count or of whether the `parallel` feature is enabled.

use std::sync::atomic::{AtomicBool, Ordering};

/// Work items handed to one task.
pub const CHUNK: usize = 128;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces sequential execution even when the `parallel` feature is enabled.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, F>(items: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|&i| f(i)).collect::<Vec<T>>())
            .collect::<Vec<Vec<T>>>()
            .into_iter()
            .flatten()
            .collect();
    }
    items.iter().map(|&i| f(i)).collect()
}

/// Runs two closures, concurrently when parallelism is enabled.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return rayon::join(a, b);
    }
    (a(), b())
}

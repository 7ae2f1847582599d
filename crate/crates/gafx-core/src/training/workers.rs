//! Worker threading for decode/preprocess fan-out.
//!
//! The optimization step itself is single-threaded and strictly ordered;
//! only per-clip preparation (pure functions on distinct inputs) runs on
//! workers, so results are independent of the thread count. `GAFX_THREADS`
//! caps the pool.

/// Worker-thread cap: `GAFX_THREADS` when set, otherwise the smaller of the
/// available parallelism and 4.
pub fn worker_threads() -> usize {
    if let Ok(v) = std::env::var("GAFX_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(4)
}

/// Maps `f` over `items` on up to [`worker_threads`] scoped threads,
/// preserving order. Falls back to an in-place loop for tiny batches.
pub fn parallel_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let threads = worker_threads().min(items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let jobs: Vec<(usize, T)> = items.into_iter().enumerate().collect();
    let queue = std::sync::Mutex::new(jobs);
    let slot_refs = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop();
                match job {
                    Some((i, item)) => {
                        let r = f(item);
                        slot_refs.lock().expect("slots lock")[i] = Some(r);
                    }
                    None => break,
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("all jobs ran")).collect()
}

//! Clip-level worker pool with deterministic, input-ordered results.
//! `STSC_THREADS` caps the worker count; default is hardware concurrency.

use crate::error::Result;

pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("STSC_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Applies `f` to every item, possibly in parallel, returning results in
/// input order. The first error (by input index) wins.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let workers = worker_count().min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut buckets: Vec<Vec<(usize, Result<R>)>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| {
                let f = &f;
                scope.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(worker)
                        .step_by(workers)
                        .map(|(i, item)| (i, f(item)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        buckets = handles.into_iter().map(|h| h.join().unwrap()).collect();
    });
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    for bucket in buckets {
        for (i, r) in bucket {
            slots[i] = Some(r);
        }
    }
    slots.into_iter().map(|s| s.unwrap()).collect()
}

//! Fan-out of independent per-index work over scoped threads.

use crate::ops;

/// Worker count from `FFBS_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("FFBS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Evaluates `f(0..n)` in index order using up to `threads` workers. Operation
/// counts performed by workers are credited to the calling thread.
pub fn map_indices<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let (mut chunks, counted): (Vec<Vec<T>>, Vec<u64>) = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                scope.spawn(move || {
                    let start = w * n / threads;
                    let end = (w + 1) * n / threads;
                    ops::measure(|| (start..end).map(f).collect::<Vec<T>>())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .unzip()
    });
    ops::add(counted.iter().sum());
    let mut out = Vec::with_capacity(n);
    for c in chunks.iter_mut() {
        out.append(c);
    }
    out
}

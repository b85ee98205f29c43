//! Deterministic data parallelism over disjoint output slices.
//!
//! Results never depend on the worker count: every reduction happens inside a
//! single output element (or is finalized serially in a fixed order by the
//! caller), so `PACGRID_THREADS=1` and the default parallel run produce
//! bit-identical numbers.

use std::sync::OnceLock;

static THREADS: OnceLock<usize> = OnceLock::new();

/// Worker count: `PACGRID_THREADS` if set (minimum 1), else available parallelism.
pub fn max_threads() -> usize {
    *THREADS.get_or_init(|| {
        if let Ok(v) = std::env::var("PACGRID_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                return n.max(1);
            }
        }
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

/// Split `out` into per-task chunks of `chunk_len` and run `f(task_index, chunk)`
/// on a pool of scoped threads. Chunks are disjoint, so no synchronization is
/// needed; task order within a worker is ascending, and no cross-task reduction
/// occurs.
pub fn for_each_chunk<F>(out: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    assert!(chunk_len > 0 && out.len().is_multiple_of(chunk_len));
    let tasks = out.len() / chunk_len;
    let threads = max_threads().min(tasks.max(1));
    if threads <= 1 || tasks <= 1 {
        for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
        return;
    }
    // Contiguous blocks of tasks per worker.
    let per = tasks.div_ceil(threads);
    std::thread::scope(|scope| {
        for (block, chunk_block) in out.chunks_mut(per * chunk_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (k, chunk) in chunk_block.chunks_mut(chunk_len).enumerate() {
                    f(block * per + k, chunk);
                }
            });
        }
    });
}

/// Run `f(task_index) -> T` for `tasks` indices and collect results in index
/// order. Used for per-row partial reductions that the caller then folds
/// serially (fixed order regardless of worker count).
pub fn map_tasks<T, F>(tasks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = max_threads().min(tasks.max(1));
    if threads <= 1 || tasks <= 1 {
        return (0..tasks).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..tasks).map(|_| None).collect();
    let per = tasks.div_ceil(threads);
    std::thread::scope(|scope| {
        for (block, slot_block) in out.chunks_mut(per).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (k, slot) in slot_block.iter_mut().enumerate() {
                    *slot = Some(f(block * per + k));
                }
            });
        }
    });
    out.into_iter().map(|s| s.unwrap()).collect()
}

//! Deterministic chunked parallelism.
//!
//! Work is split into a fixed set of chunks that does not depend on the
//! worker count; workers pick up chunks by atomic counter, each chunk writes
//! into its own slot, and callers combine slots in chunk order. Results are
//! therefore bit-identical for any worker count, including 1.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Global worker count for the process (set once by the CLI / harness).
static WORKERS: AtomicUsize = AtomicUsize::new(1);

pub fn set_workers(n: usize) {
    WORKERS.store(n.max(1), Ordering::SeqCst);
}

pub fn workers() -> usize {
    WORKERS.load(Ordering::SeqCst)
}

/// Run `f(chunk_index)` for 0..n_chunks and return the results in chunk
/// order. `f` must be pure per chunk.
pub fn map_chunks<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let n_workers = workers().min(n_chunks.max(1));
    if n_workers <= 1 || n_chunks <= 1 {
        return (0..n_chunks).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n_chunks).map(|_| None).collect();
    let next = AtomicUsize::new(0);
    let slots_ptr = SendPtr(slots.as_mut_ptr());
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            let f = &f;
            let next = &next;
            let slots_ptr = &slots_ptr;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n_chunks {
                    break;
                }
                let value = f(i);
                // Safety: each index i is claimed by exactly one worker and
                // the scope outlives all writes.
                unsafe { *slots_ptr.0.add(i) = Some(value) };
            });
        }
    });
    slots.into_iter().map(|s| s.expect("chunk not computed")).collect()
}

struct SendPtr<T>(*mut T);
unsafe impl<T: Send> Send for SendPtr<T> {}
unsafe impl<T: Send> Sync for SendPtr<T> {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_are_ordered_and_worker_independent() {
        let one: Vec<usize> = map_chunks(17, |i| i * i);
        set_workers(4);
        let four: Vec<usize> = map_chunks(17, |i| i * i);
        set_workers(1);
        assert_eq!(one, four);
        assert_eq!(one[5], 25);
    }
}

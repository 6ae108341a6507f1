use rayon::prelude::*;

/// `(0..len).map(f)` on up to `threads` workers; output order is index order
/// regardless of scheduling.
pub(crate) fn map_indexed<T, F>(threads: usize, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 || len <= 1 {
        return (0..len).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| (0..len).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            (0..len).map(f).collect()
        }
    }
}

//! Index-parallel map with a sequential fallback.
//!
//! With the `parallel` feature off everything runs on the calling thread,
//! which is what the benches compare against. Results are always returned
//! in index order, so callers aggregate deterministically.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f)` collected in order; fans out over rayon when `parallel`
/// is set and the feature is enabled.
pub fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    (0..n).map(f).collect()
}

pub fn available() -> bool {
    cfg!(feature = "parallel")
}

//! Execution strategy for data-parallel loops.
//!
//! Every parallel loop in the crate is an order-preserving indexed map: the
//! result vector is assembled by index and any reduction happens afterwards
//! in a fixed sequential order. Results are therefore bit-identical whether
//! the map runs on one thread or many, and identical to the build without
//! the `parallel` feature.
//!
//! [`set_sequential`] additionally forces every loop onto the calling
//! thread at runtime, which backs the command-line determinism switch and
//! lets benchmarks compare both strategies within one binary.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all parallel loops to run sequentially (process-wide).
pub fn set_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::Relaxed);
}

/// Whether sequential execution is currently forced.
pub fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Maps `f` over `0..n` into a vector, in parallel when available.
#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    // Nested calls (a parallel loop inside a task that is already on the
    // rayon pool) stay sequential to avoid pool starvation.
    if sequential_forced() || rayon::current_thread_index().is_some() {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Maps `f` over `0..n` into a vector on the calling thread.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference version of [`map_collect`], kept unconditionally so
/// benchmarks and tests can compare strategies.
pub fn map_collect_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_maps_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() / ((i as f64) + 0.5);
        let par: Vec<f64> = map_collect(1000, f);
        let seq: Vec<f64> = map_collect_seq(1000, f);
        assert_eq!(par, seq);
    }

    #[test]
    fn forced_sequential_mode_round_trips() {
        set_sequential(true);
        assert!(sequential_forced());
        let v = map_collect(8, |i| i * i);
        assert_eq!(v, vec![0, 1, 4, 9, 16, 25, 36, 49]);
        set_sequential(false);
        assert!(!sequential_forced());
    }
}

//! Process-wide execution mode.
//!
//! `Serial` runs every element loop and every factorization on one thread and
//! is bitwise reproducible. `Parallel` distributes element kernels and the
//! sparse LU over the rayon pool; element contributions are still summed in
//! element order, so assembled operators do not depend on the mode.

use std::sync::atomic::{AtomicU8, Ordering};

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Serial,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(0);

pub fn set_mode(mode: ExecMode) {
    MODE.store(mode as u8, Ordering::Relaxed);
    sync_faer();
}

/// Aligns faer's global parallelism with the current mode.
pub(crate) fn sync_faer() {
    faer::set_global_parallelism(match mode() {
        ExecMode::Serial => faer::Par::Seq,
        ExecMode::Parallel => faer::Par::rayon(0),
    });
}

pub fn mode() -> ExecMode {
    match MODE.load(Ordering::Relaxed) {
        0 => ExecMode::Serial,
        _ => ExecMode::Parallel,
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode() {
        ExecMode::Serial => (0..n).map(f).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

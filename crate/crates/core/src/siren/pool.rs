//! Recycled scratch buffers for the layer tapes.
//!
//! Tapes are large and short-lived; handing the same allocations back and
//! forth avoids re-faulting fresh pages on every batch.

use std::sync::Mutex;

const MAX_POOLED: usize = 512;

static POOL: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());

/// A buffer of exactly `len` elements. Contents are unspecified; callers
/// must overwrite every element they read.
pub(crate) fn take(len: usize) -> Vec<f64> {
    let reused = {
        let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
        let best = pool
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= len)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i);
        best.map(|i| pool.swap_remove(i))
    };
    match reused {
        Some(mut v) => {
            v.resize(len, 0.0);
            v.truncate(len);
            v
        }
        None => vec![0.0; len],
    }
}

/// A zero-filled buffer of `len` elements.
pub(crate) fn take_zeroed(len: usize) -> Vec<f64> {
    let mut v = take(len);
    v.fill(0.0);
    v
}

pub(crate) fn give(v: Vec<f64>) {
    if v.capacity() == 0 {
        return;
    }
    let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
    if pool.len() < MAX_POOLED {
        pool.push(v);
    }
}

//! Per-thread pool of large `f64` buffers. Bound propagation allocates and
//! drops several megabytes per box; recycling keeps those pages resident.

use std::cell::RefCell;

const KEEP: usize = 12;
const MIN_LEN: usize = 1 << 12;

thread_local! {
    static FREE: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A buffer of `len` zeros.
pub(crate) fn zeros(len: usize) -> Vec<f64> {
    let mut v = take(len);
    v.resize(len, 0.0);
    v
}

/// A buffer of `len` values with unspecified contents, for outputs that are
/// fully overwritten.
pub(crate) fn scratch(len: usize) -> Vec<f64> {
    let mut v = pop(len).unwrap_or_else(|| Vec::with_capacity(len));
    if v.len() >= len {
        v.truncate(len);
    } else {
        v.resize(len, 0.0);
    }
    v
}

/// An empty buffer with capacity for at least `len` values.
pub(crate) fn take(len: usize) -> Vec<f64> {
    match pop(len) {
        Some(mut v) => {
            v.clear();
            v
        }
        None => Vec::with_capacity(len),
    }
}

fn pop(len: usize) -> Option<Vec<f64>> {
    if len < MIN_LEN {
        return None;
    }
    FREE.with(|f| {
        let mut f = f.borrow_mut();
        let best = f
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= len)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i);
        best.map(|i| f.swap_remove(i))
    })
}

pub(crate) fn recycle(v: Vec<f64>) {
    if v.capacity() < MIN_LEN {
        return;
    }
    FREE.with(|f| {
        let mut f = f.borrow_mut();
        f.push(v);
        if f.len() > KEEP {
            let smallest = (0..f.len())
                .min_by_key(|&i| f[i].capacity())
                .expect("non-empty");
            f.swap_remove(smallest);
        }
    });
}

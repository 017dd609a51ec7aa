//! Thread-local floating-point operation counter.
//!
//! The sparse kernels bump this counter once per inner multiply-add so that
//! asymptotic cost can be asserted independently of wall-clock time.

use std::cell::Cell;

thread_local! {
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn add(n: u64) {
    COUNT.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Current count on this thread.
pub fn read() -> u64 {
    COUNT.with(Cell::get)
}

pub fn reset() {
    COUNT.with(|c| c.set(0));
}

/// Runs `f` and returns its result with the number of counted operations it performed.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let start = read();
    let out = f();
    (out, read().wrapping_sub(start))
}

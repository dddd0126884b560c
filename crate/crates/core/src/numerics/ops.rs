use std::cell::Cell;

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

/// Record `n` scalar arithmetic operations against the current thread.
#[inline]
pub fn count_ops(n: u64) {
    OPS.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Run `f` and return its result with the number of operations it recorded.
pub fn measure_ops<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let start = OPS.with(|c| c.get());
    let out = f();
    let end = OPS.with(|c| c.get());
    (out, end.wrapping_sub(start))
}

//! Branch signatures for kink-aware finite differences.
//!
//! Piecewise operations (ReLU masks, max-pool argmax, clamps) report the
//! branch they took while a trace is active. A finite-difference probe whose
//! two evaluations disagree on the signature straddles a kink and is skipped.
//! Tracing is thread-local and off by default.

use std::cell::Cell;

thread_local! {
    static TRACE: Cell<Option<u64>> = const { Cell::new(None) };
}

#[inline]
pub fn enabled() -> bool {
    TRACE.with(|t| t.get().is_some())
}

/// Mixes a branch identifier into the active trace, if any. The closure is
/// only evaluated while tracing.
#[inline]
pub fn record(f: impl FnOnce() -> u64) {
    TRACE.with(|t| {
        if let Some(acc) = t.get() {
            let h = f();
            t.set(Some((acc.rotate_left(7) ^ h).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        }
    });
}

/// Hashes a boolean mask.
pub fn mask_hash(bits: impl Iterator<Item = bool>) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in bits {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01B3);
    }
    h
}

/// Runs `f` with tracing enabled and returns its result with the signature.
pub fn traced<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = TRACE.with(|t| t.replace(Some(0)));
    let r = f();
    let sig = TRACE.with(|t| t.replace(prev)).unwrap_or(0);
    (r, sig)
}

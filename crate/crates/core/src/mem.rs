//! Allocator tuning for the training hot path.
//!
//! A training step allocates several tens-of-megabytes activation buffers
//! and frees them again before the next step. With glibc's default malloc
//! those buffers go through `mmap`/`munmap` each time, so every step pays
//! thousands of page faults for memory it used one step earlier. Raising
//! the mmap threshold keeps the buffers on the heap, where the free list
//! hands the same pages straight back.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Keep large allocations on the heap instead of per-allocation `mmap`.
///
/// Idempotent and cheap, so every long-running entry point (training,
/// cross-validation, the CLI) can call it unconditionally. Non-glibc
/// platforms ignore the hint.
pub fn tune_allocator() {
    TUNE.call_once(|| {
        #[cfg(target_os = "linux")]
        // SAFETY: mallopt only adjusts allocator parameters; both values are
        // plain integers and the call has no memory-safety obligations.
        unsafe {
            const GIB: libc::c_int = 1 << 30;
            libc::mallopt(libc::M_MMAP_THRESHOLD, GIB);
            libc::mallopt(libc::M_TRIM_THRESHOLD, GIB);
        }
    });
}

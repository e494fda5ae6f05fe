//! Global allocator instrumentation for the `bench` subcommand.
//!
//! Wraps the system allocator with two atomic counters: live bytes and the
//! high-water mark since the last reset. Only `alloc` and `dealloc` are
//! overridden, so the default `realloc`/`alloc_zeroed` route through them and
//! every byte is counted. The two relaxed atomics cost nanoseconds per call,
//! which is noise next to the matrix work being timed.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

pub struct CountingAlloc;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static BASE: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            let live = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(live, Ordering::Relaxed);
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

/// Start a fresh high-water measurement from the current live size.
pub fn reset_peak() {
    let live = LIVE.load(Ordering::Relaxed);
    BASE.store(live, Ordering::Relaxed);
    PEAK.store(live, Ordering::Relaxed);
}

/// Bytes the heap grew above its size at the last reset, at the worst point
/// since then. Unaffected by frees that happen before the read.
pub fn peak_above_reset() -> u64 {
    let base = BASE.load(Ordering::Relaxed);
    PEAK.load(Ordering::Relaxed).saturating_sub(base) as u64
}

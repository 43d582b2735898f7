//! glibc malloc settings for the training loop.
//!
//! Each update builds and drops a tape of a few thousand buffers, many of
//! them above glibc's default mmap threshold. With default settings the
//! freed pages go back to the kernel and are faulted in again on the next
//! update, which on desk-sized models costs about as much as the
//! arithmetic. Raising the thresholds keeps those pages in the heap.

/// Applies the settings once per process; a no-op off glibc.
pub fn keep_heap_warm() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator parameters; it is called
            // once, before the training loop allocates.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
                libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
                libc::mallopt(libc::M_TOP_PAD, 64 << 20);
            }
        });
    }
}

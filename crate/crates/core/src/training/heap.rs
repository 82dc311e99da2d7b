//! Every training step allocates and frees the same few-megabyte buffers.
//! By default glibc serves those with fresh `mmap`s and unmaps them on free,
//! so every step pays for zero-filling page faults again. Keeping them on
//! the heap makes steps roughly 20% faster on small machines.

use std::sync::Once;

pub(crate) fn retain_freed_buffers() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator thresholds; it is called
        // once, before the trainer allocates its step buffers.
        unsafe {
            // 32 MiB is the largest mmap threshold glibc accepts.
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        }
    });
}

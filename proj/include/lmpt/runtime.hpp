#pragma once

namespace lmpt {

/// Keeps large temporaries on the heap instead of fresh mmap pages. Training
/// allocates and frees many multi-megabyte buffers per step; with glibc's
/// defaults most of the time goes to page faults. No-op on other libcs.
void tune_allocator();

}  // namespace lmpt

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fedseries {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training allocates and frees the same activation-sized buffers every step,
/// and with glibc's defaults each one becomes an mmap/munmap pair.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace fedseries

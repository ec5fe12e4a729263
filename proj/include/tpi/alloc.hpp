#ifndef TPI_ALLOC_HPP_
#define TPI_ALLOC_HPP_

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tpi {

/// Keeps batch-sized temporaries on the heap instead of fresh mmap/munmap
/// pairs per allocation. No-op outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace tpi

#endif  // TPI_ALLOC_HPP_

#pragma once

#include <cstddef>
#include <functional>

namespace bitsift {

// Intra-op worker cap, read once from BITSIFT_THREADS (default 1).
std::size_t intra_op_threads();

// Runs fn(i) for i in [0,n). When more than one worker is allowed the index
// range is split into contiguous chunks, one thread per chunk; every element
// is still computed by exactly one thread in its natural order, so results
// are bitwise identical for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace bitsift

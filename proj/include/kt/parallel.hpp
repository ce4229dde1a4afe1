#pragma once

#include <cstddef>
#include <functional>

namespace kt {

// Runs body(k) for k in [0, n) on up to `threads` workers with a static
// partition. Each index must write only its own output slot, which keeps
// results independent of the thread count. The exception from the lowest
// failing index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace kt

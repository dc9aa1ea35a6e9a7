#pragma once

#include <cstddef>
#include <functional>

namespace cfpolicy {

// Worker cap shared by all parallel loops (the CLI's --threads). Loops only
// ever write to per-index slots, so results do not depend on the count.
void set_thread_count(int threads);
int thread_count();

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace cfpolicy

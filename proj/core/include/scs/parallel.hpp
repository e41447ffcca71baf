#pragma once

#include <cstddef>
#include <functional>

namespace scs {

// Runs body(i) for i in [0, count) on at most `jobs` threads. Work is
// claimed by index, so callers that write into slot i and reduce afterwards
// in index order get results independent of `jobs`. The exception
// from the lowest failing index is rethrown after all workers join.
void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& body);

}  // namespace scs

#pragma once

#include <cstddef>
#include <functional>

namespace nlsid {

/// Worker count used by parallel loops; 0 means hardware concurrency.
void set_thread_count(unsigned n);
[[nodiscard]] unsigned thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() threads. Exceptions are rethrown
/// (the one from the lowest index wins) after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nlsid

#pragma once

#include <functional>

namespace formlink {

int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n). Indices are split into contiguous chunks and
/// each index is executed by exactly one thread, so any computation whose
/// per-index work is pure produces results independent of the thread count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace formlink

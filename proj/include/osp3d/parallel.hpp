#pragma once

#include <cstddef>
#include <functional>

namespace osp3d {

// Process-wide worker count used by the data-parallel loops. 0 selects
// std::thread::hardware_concurrency().
void set_thread_count(int n);
int thread_count();

// Calls fn(i) for every i in [0, n). Work items are claimed dynamically, so
// callers must write only to slots owned by i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace osp3d

#pragma once

#include <cstddef>
#include <functional>

namespace fna {

// Worker cap: hardware concurrency, further limited by FNA_THREADS.
std::size_t max_threads();

// Overrides the worker cap for the lifetime of the scope (per thread).
class ThreadCap {
 public:
  explicit ThreadCap(std::size_t threads);
  ~ThreadCap();
  ThreadCap(const ThreadCap&) = delete;
  ThreadCap& operator=(const ThreadCap&) = delete;

 private:
  std::size_t previous_;
};

// Splits [0, count) into contiguous chunks and runs body(begin, end) on each.
// Runs inline when the cap is 1 or work is below min_work.
void parallel_for_rows(std::size_t count, std::size_t work_per_row,
                       const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace fna

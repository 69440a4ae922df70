#include "fna/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fna {
namespace {

std::size_t env_thread_cap() {
  std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FNA_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) hw = std::min<std::size_t>(hw, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
    }
  }
  return hw;
}

thread_local std::size_t tls_cap = 0;  // 0: use the environment cap

constexpr std::size_t kMinParallelWork = std::size_t{1} << 22;

}  // namespace

std::size_t max_threads() {
  static const std::size_t cap = env_thread_cap();
  return tls_cap ? std::min(tls_cap, cap) : cap;
}

ThreadCap::ThreadCap(std::size_t threads) : previous_(tls_cap) { tls_cap = std::max<std::size_t>(1, threads); }
ThreadCap::~ThreadCap() { tls_cap = previous_; }

void parallel_for_rows(std::size_t count, std::size_t work_per_row,
                       const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t threads = std::min(max_threads(), count);
  if (threads <= 1 || count * work_per_row < kMinParallelWork) {
    body(0, count);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads - 1);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(count, chunk));
}

}  // namespace fna

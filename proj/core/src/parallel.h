#ifndef NCM_SRC_PARALLEL_H_
#define NCM_SRC_PARALLEL_H_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ncm::internal {

// Calls fn(i) for every i in [0, n) on up to `threads` workers. Callers must
// write results into per-index slots; the first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    const std::size_t count = std::min(threads, n);
    workers.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace ncm::internal

#endif  // NCM_SRC_PARALLEL_H_

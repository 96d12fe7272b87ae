#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hashfield::detail {

// Blocked parallel loop; fn(block_index, begin, end). threads <= 1 runs inline.
inline void parallel_blocks(std::size_t n, int threads,
                            const std::function<void(int, std::size_t, std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    fn(0, 0, n);
    return;
  }
  const std::size_t tc = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  const std::size_t chunk = (n + tc - 1) / tc;
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (std::size_t t = 0; t < tc; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, t, begin, end] {
      try {
        fn(static_cast<int>(t), begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace hashfield::detail

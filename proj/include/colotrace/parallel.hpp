#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace colotrace {

// 0 means one thread per hardware core.
inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(begin, end, chunk) over `threads` contiguous chunks of [0, n).
// Chunk boundaries depend only on n and threads. The first exception thrown
// by any chunk is rethrown after all chunks finish.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, threads);
  std::size_t chunks = std::min<std::size_t>(threads, std::max<std::size_t>(n, 1));
  if (chunks <= 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
      std::size_t begin = n * c / chunks;
      std::size_t end = n * (c + 1) / chunks;
      workers.emplace_back([&, begin, end, c] {
        try {
          fn(begin, end, c);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace colotrace

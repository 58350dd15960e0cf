#pragma once

#include <thread>
#include <vector>

namespace unitext {

// Fixed contiguous chunking; callers reduce per-chunk results in chunk
// order so the outcome is deterministic for a given thread count.
template <typename Fn>
void parallel_chunks(std::size_t n, int threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    if (n > 0) fn(std::size_t{0}, n, 0);
    return;
  }
  const int nchunks = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  const std::size_t per = (n + nchunks - 1) / nchunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nchunks));
  for (int c = 0; c < nchunks; ++c) {
    const std::size_t b = static_cast<std::size_t>(c) * per;
    const std::size_t e = std::min(n, b + per);
    if (b >= e) break;
    pool.emplace_back([=]() { fn(b, e, c); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace unitext

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bfpa {

// Worker count: BFPA_THREADS if set, else hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("BFPA_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size chunks.
// Chunk boundaries depend only on n, never on the worker count, and each chunk
// writes results into its own slot; callers reduce slots in chunk order. That
// makes any accumulation bit-identical for 1 or N threads.
template <class Fn>
void for_each_chunk(std::int64_t n, Fn&& fn, std::int64_t chunk = 1 << 14) {
  if (n <= 0) return;
  const std::int64_t nchunks = (n + chunk - 1) / chunk;
  int workers = worker_count();
  if (workers <= 1 || nchunks == 1) {
    for (std::int64_t c = 0; c < nchunks; ++c)
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto run = [&] {
    try {
      for (std::int64_t c = next.fetch_add(1);
           c < nchunks && !failed.load(std::memory_order_relaxed);
           c = next.fetch_add(1))
        fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
      failed.store(true, std::memory_order_relaxed);
    }
  };
  std::vector<std::thread> pool;
  int spawn = static_cast<int>(std::min<std::int64_t>(workers, nchunks));
  pool.reserve(static_cast<std::size_t>(spawn));
  for (int i = 0; i < spawn - 1; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Deterministic sum of a per-draw statistic: partial sums per chunk, reduced
// in chunk order.
template <class Fn>
double sum_over_draws(std::int64_t n, Fn&& per_draw) {
  const std::int64_t chunk = 1 << 14;
  const std::int64_t nchunks = n > 0 ? (n + chunk - 1) / chunk : 0;
  std::vector<double> partial(static_cast<std::size_t>(nchunks), 0.0);
  for_each_chunk(
      n,
      [&](std::int64_t c, std::int64_t b, std::int64_t e) {
        double acc = 0.0;
        for (std::int64_t i = b; i < e; ++i) acc += per_draw(i);
        partial[static_cast<std::size_t>(c)] = acc;
      },
      chunk);
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace bfpa

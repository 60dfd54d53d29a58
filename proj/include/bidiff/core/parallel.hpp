#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace bidiff {

/// Worker count: hardware concurrency, capped by BIDIFF_THREADS when set.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BIDIFF_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    } catch (...) {
    }
  }
  return n;
}

/// Calls fn(i) for i in [begin, end). Work is split into contiguous blocks;
/// fn must only write to state owned by index i.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn) {
  if (end <= begin) return;
  const std::size_t count = end - begin;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), count));
  if (workers <= 1 || count < 64) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

/// Deterministic sum: partials are formed over fixed-size blocks and added in
/// block order, so the result does not depend on the worker count.
template <typename Fn>
double ordered_sum(std::size_t count, Fn&& term, std::size_t block = 4096) {
  const std::size_t blocks = (count + block - 1) / block;
  std::vector<double> partial(blocks, 0.0);
  parallel_for(0, blocks, [&](std::size_t b) {
    double s = 0.0;
    const std::size_t hi = std::min(count, (b + 1) * block);
    for (std::size_t i = b * block; i < hi; ++i) s += term(i);
    partial[b] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace bidiff

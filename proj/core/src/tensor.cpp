#include "m2at/tensor.hpp"

#include <atomic>
#include <thread>

namespace m2at {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
std::atomic<std::size_t> g_threads{0};

std::size_t effective_threads() {
  const std::size_t n = g_threads.load(std::memory_order_relaxed);
  if (n != 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}
}  // namespace

void set_num_threads(std::size_t n) { g_threads.store(n, std::memory_order_relaxed); }

std::size_t num_threads() { return effective_threads(); }

void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& chunk_fn) {
  if (count == 0) return;
  const std::size_t nt = effective_threads();
  if (nt <= 1 || count < 2 * nt) {
    chunk_fn(0, count);
    return;
  }
  const std::size_t chunk = (count + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&chunk_fn, lo, hi] { chunk_fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace m2at

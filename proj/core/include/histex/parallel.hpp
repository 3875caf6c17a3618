#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace histex {

/// Work is split into a fixed number of contiguous lanes. The lane partition depends only on
/// `n` and `lanes`, never on the hardware thread count, so any per-lane reduction performed in
/// lane order is bitwise reproducible.
struct LaneRange {
  std::size_t lane;
  std::size_t begin;
  std::size_t end;
};

inline std::vector<LaneRange> partition_lanes(std::size_t n, std::size_t lanes) {
  lanes = std::max<std::size_t>(1, std::min(lanes, std::max<std::size_t>(n, 1)));
  std::vector<LaneRange> out;
  out.reserve(lanes);
  for (std::size_t l = 0; l < lanes; ++l) out.push_back({l, n * l / lanes, n * (l + 1) / lanes});
  return out;
}

inline std::size_t hardware_threads() {
  return std::max<unsigned>(1, std::thread::hardware_concurrency());
}

/// Runs fn(LaneRange) for every lane using at most hardware_threads() threads.
template <typename Fn>
void run_lanes(const std::vector<LaneRange>& ranges, Fn&& fn) {
  const std::size_t threads = std::min(hardware_threads(), ranges.size());
  if (threads <= 1) {
    for (const auto& r : ranges) fn(r);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < ranges.size(); i += threads) fn(ranges[i]);
    });
  }
}

}  // namespace histex

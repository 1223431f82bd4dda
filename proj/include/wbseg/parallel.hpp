/*
 * wbseg : weakly-supervised soft-label segmentation for whole-body DWI
 *
 * Copyright 2026 the wbseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace wbseg {

/// Worker count: WBSEG_WORKERS env var, else hardware concurrency, min 1.
inline int default_workers() {
  if (const char* env = std::getenv("WBSEG_WORKERS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace detail {
// Chunk size fixed so that partial results (and their combination order)
// do not depend on the worker count.
constexpr std::int64_t kChunk = 1 << 14;
}  // namespace detail

/// Run fn(begin, end) over disjoint chunks of [0, n). Each chunk writes only
/// its own output range, so the result is deterministic for any worker count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn, int workers = default_workers()) {
  if (n <= 0) return;
  const std::int64_t chunks = (n + detail::kChunk - 1) / detail::kChunk;
  if (workers <= 1 || chunks <= 1) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::atomic<std::int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1);
      if (c >= chunks) return;
      const std::int64_t b = c * detail::kChunk;
      fn(b, std::min(n, b + detail::kChunk));
    }
  };
  std::vector<std::thread> pool;
  const int nt = static_cast<int>(std::min<std::int64_t>(workers, chunks));
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

/// Sum fn(i) over [0, n) with a fixed chunking and in-order combination of
/// the partial sums; bitwise reproducible for any worker count.
template <typename Fn>
double parallel_sum(std::int64_t n, Fn&& fn, int workers = default_workers()) {
  if (n <= 0) return 0.0;
  const std::int64_t chunks = (n + detail::kChunk - 1) / detail::kChunk;
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(
      n,
      [&](std::int64_t b, std::int64_t e) {
        double s = 0.0;
        for (std::int64_t i = b; i < e; ++i) s += fn(i);
        partial[static_cast<std::size_t>(b / detail::kChunk)] = s;
      },
      workers);
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

/// Run independent jobs with at most `workers` in flight; results keep the
/// submission order.
template <typename Job>
void run_jobs(std::vector<Job>& jobs, int workers = default_workers()) {
  if (jobs.empty()) return;
  if (workers <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      jobs[i]();
    }
  };
  std::vector<std::thread> pool;
  const int nt = static_cast<int>(std::min<std::size_t>(workers, jobs.size()));
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace wbseg

// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace gifnet {

namespace {

constexpr int64_t kMinGrain = 2048;  // below this, run inline
constexpr int kMaxChunks = 16;

int detect_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("GIFNET_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) n = std::min<long>(n, cap);
  }
  return n;
}

}  // namespace

int thread_count() {
  static const int n = detect_threads();
  return n;
}

int chunk_count(int64_t n) {
  if (n < 2 * kMinGrain) return 1;
  return static_cast<int>(std::min<int64_t>(kMaxChunks, n / kMinGrain));
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int chunks = chunk_count(n);
  if (chunks == 1) {
    fn(0, n);
    return;
  }
  // The chunk boundaries below are a pure function of n; only the assignment
  // of chunks to threads varies with the worker count.
  std::atomic<int> next{0};
  auto run = [&]() {
    for (;;) {
      int c = next.fetch_add(1);
      if (c >= chunks) break;
      int64_t begin = n * c / chunks;
      int64_t end = n * (c + 1) / chunks;
      if (begin < end) fn(begin, end);
    }
  };
  const int workers = std::min(thread_count(), chunks);
  std::vector<std::thread> pool;
  if (workers > 1) {
    pool.reserve(static_cast<size_t>(workers) - 1);
    for (int i = 1; i < workers; ++i) pool.emplace_back(run);
  }
  run();
  for (auto& t : pool) t.join();
}

}  // namespace gifnet

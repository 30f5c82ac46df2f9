// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace gifnet {

// Number of worker threads used by parallel_for. Defaults to the hardware
// concurrency, capped by the GIFNET_THREADS environment variable (read once).
int thread_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Chunk boundaries depend
// only on n, never on the thread count, so any per-chunk partial results can
// be combined in chunk order to give thread-count-independent output.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// Number of chunks parallel_for will use for a given n (for sizing per-chunk
// scratch buffers).
int chunk_count(int64_t n);

}  // namespace gifnet

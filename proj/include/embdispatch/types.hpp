/*
 * Copyright (c) 2026, the embdispatch authors.
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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace embdispatch {

/// Flat embedding identifier. Rows of all embedding tables share one id
/// space; cost accounting depends only on identity, never on table layout.
using EmbeddingId = std::uint32_t;

using WorkerId = int;

/// One training input: the ordered, duplicate-free set of embedding ids a
/// sample touches. Dense features carry no transmission cost and are not
/// represented.
struct EmbeddingSample {
  std::vector<EmbeddingId> ids;

  bool empty() const { return ids.empty(); }
  std::size_t size() const { return ids.size(); }
};

/// Builds a sample from raw ids: deduplicates (first occurrence wins,
/// order preserved) and rejects empty input.
inline EmbeddingSample make_sample(const std::vector<EmbeddingId>& raw_ids) {
  if (raw_ids.empty()) {
    throw std::invalid_argument("embedding sample must contain at least one id");
  }
  EmbeddingSample sample;
  sample.ids.reserve(raw_ids.size());
  std::unordered_set<EmbeddingId> seen;
  seen.reserve(raw_ids.size() * 2);
  for (EmbeddingId id : raw_ids) {
    if (seen.insert(id).second) {
      sample.ids.push_back(id);
    }
  }
  return sample;
}

/// Cost of moving one embedding over one link, in seconds. Kept as real
/// time so heterogeneous-bandwidth setups need no unit normalization.
struct TransmitCost {
  double seconds = 0.0;
};

/// Static description of the training cluster: worker count, per-worker
/// batch size, link bandwidths, embedding transfer size, cache capacity,
/// and the exact/heuristic split fraction used by the hybrid dispatcher.
struct ClusterConfig {
  int n = 8;                          // worker count
  int m = 128;                        // batch size per worker
  std::vector<double> bandwidths_bps; // worker <-> PS link, bits per second
  std::uint64_t d_tran_bytes = 2048;  // one embedding transfer (dim * 4 bytes)
  std::size_t cache_capacity = 0;     // cached embeddings per worker
  double alpha = 1.0;                 // fraction of samples solved exactly

  std::size_t samples_per_iteration() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(m);
  }
};

/// Validates the config against a workload whose longest sample holds
/// `max_sample_len` ids. Throws std::invalid_argument on violation; a
/// worker's cache must always hold at least one full micro-batch.
inline void validate(const ClusterConfig& cfg, std::size_t max_sample_len) {
  if (cfg.n < 1) throw std::invalid_argument("worker count must be >= 1");
  if (cfg.n > 64) throw std::invalid_argument("at most 64 workers supported");
  if (cfg.m < 1) throw std::invalid_argument("batch size per worker must be >= 1");
  if (cfg.bandwidths_bps.size() != static_cast<std::size_t>(cfg.n)) {
    throw std::invalid_argument("need one bandwidth per worker");
  }
  for (double bw : cfg.bandwidths_bps) {
    if (!(bw > 0.0)) throw std::invalid_argument("bandwidths must be positive");
  }
  if (cfg.d_tran_bytes == 0) throw std::invalid_argument("d_tran must be positive");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) {
    throw std::invalid_argument("alpha must lie in [0, 1]");
  }
  const std::size_t micro_batch = static_cast<std::size_t>(cfg.m) * max_sample_len;
  if (cfg.cache_capacity < micro_batch) {
    throw std::invalid_argument(
        "cache capacity " + std::to_string(cfg.cache_capacity) +
        " cannot hold one micro-batch of " + std::to_string(micro_batch) +
        " embeddings");
  }
}

/// Unit transmission cost for `worker`: d_tran bytes over its link, one
/// direction. Pull and push of one embedding cost the same.
inline TransmitCost unit_cost(const ClusterConfig& cfg, WorkerId worker) {
  if (worker < 0 || worker >= cfg.n ||
      static_cast<std::size_t>(worker) >= cfg.bandwidths_bps.size()) {
    throw std::invalid_argument("worker id " + std::to_string(worker) +
                                " out of range");
  }
  return TransmitCost{static_cast<double>(cfg.d_tran_bytes) * 8.0 /
                      cfg.bandwidths_bps[worker]};
}

/// Mask of worker ids; ClusterConfig::n is capped at 64 so one word is
/// always enough.
using WorkerMask = std::uint64_t;

inline WorkerMask worker_bit(WorkerId w) { return WorkerMask{1} << w; }

inline int mask_count(WorkerMask m) { return __builtin_popcountll(m); }

inline bool mask_has(WorkerMask m, WorkerId w) { return (m & worker_bit(w)) != 0; }

/// Global synchronization state of one embedding.
///
/// `owners` are workers holding a trained-but-unpushed copy; while any
/// exist the PS value is stale and exactly the owners hold the latest
/// value. Once owners is empty the PS is authoritative and `latest` lists
/// the workers whose cached copy still matches it. `resident` tracks raw
/// cache residency regardless of version.
struct EmbeddingState {
  WorkerMask owners = 0;
  WorkerMask latest = 0;
  WorkerMask resident = 0;

  bool owned_by(WorkerId w) const { return mask_has(owners, w); }
  bool latest_on(WorkerId w) const { return mask_has(latest, w); }
  bool resident_on(WorkerId w) const { return mask_has(resident, w); }

  /// owners must hold latest copies, latest copies must be resident, and
  /// a non-empty owner set pins the latest set to exactly the owners.
  bool consistent() const {
    if ((owners & ~latest) != 0) return false;
    if ((latest & ~resident) != 0) return false;
    if (owners != 0 && latest != owners) return false;
    return true;
  }
};

}  // namespace embdispatch

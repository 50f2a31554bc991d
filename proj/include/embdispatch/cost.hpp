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

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "embdispatch/types.hpp"

namespace embdispatch {

/// Dispatch-time view of the cluster: the synchronization state of every
/// embedding touched so far plus each worker's resident-id set. Read-only
/// while a cost matrix is built.
struct Snapshot {
  std::unordered_map<EmbeddingId, EmbeddingState> states;
  std::vector<std::vector<EmbeddingId>> resident_ids;

  /// Unknown embeddings are latest at the PS with no owners.
  EmbeddingState state_of(EmbeddingId id) const {
    auto it = states.find(id);
    return it == states.end() ? EmbeddingState{} : it->second;
  }
};

/// (m*n) x n table of expected transmission costs in seconds; row i gives
/// the cost of training sample row_ids[i] on each worker.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;        // row-major
  std::vector<std::size_t> row_ids;  // original sample indices

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

/// Optional per-embedding transfer size in bytes, replacing the uniform
/// d_tran when embedding dimensions vary.
using SizeLookupFn = std::function<std::uint64_t(EmbeddingId)>;

namespace detail {

inline double transfer_seconds(const ClusterConfig& cfg, WorkerId worker,
                               EmbeddingId id, const SizeLookupFn& size_of) {
  const double bytes = size_of ? static_cast<double>(size_of(id))
                               : static_cast<double>(cfg.d_tran_bytes);
  return bytes * 8.0 / cfg.bandwidths_bps[worker];
}

}  // namespace detail

/// Expected cost of training `sample` on `worker`: each embedding whose
/// latest copy the worker lacks charges one miss pull on the worker's
/// link plus one update push per other owner; a latest-resident embedding
/// contributes nothing.
inline double expected_cost(const EmbeddingSample& sample, WorkerId worker,
                            const Snapshot& snap, const ClusterConfig& cfg,
                            const SizeLookupFn& size_of = nullptr) {
  if (worker < 0 || worker >= cfg.n) {
    throw std::invalid_argument("worker id out of range");
  }
  double cost = 0.0;
  for (EmbeddingId id : sample.ids) {
    const EmbeddingState st = snap.state_of(id);
    if (st.latest_on(worker)) continue;
    cost += detail::transfer_seconds(cfg, worker, id, size_of);
    WorkerMask others = st.owners & ~worker_bit(worker);
    while (others != 0) {
      const WorkerId j = __builtin_ctzll(others);
      others &= others - 1;
      cost += detail::transfer_seconds(cfg, j, id, size_of);
    }
  }
  return cost;
}

/// Full expected-cost matrix for one iteration's m*n samples. Rows are
/// independent: sharing between samples is intentionally not modeled
/// here, the matrix is a per-sample expectation.
inline CostMatrix build_matrix(const std::vector<EmbeddingSample>& samples,
                               const Snapshot& snap, const ClusterConfig& cfg,
                               const SizeLookupFn& size_of = nullptr) {
  if (samples.size() != cfg.samples_per_iteration()) {
    throw std::invalid_argument(
        "expected " + std::to_string(cfg.samples_per_iteration()) +
        " samples, got " + std::to_string(samples.size()));
  }
  CostMatrix matrix;
  matrix.rows = samples.size();
  matrix.cols = static_cast<std::size_t>(cfg.n);
  matrix.values.resize(matrix.rows * matrix.cols);
  matrix.row_ids.resize(matrix.rows);
  for (std::size_t i = 0; i < matrix.rows; ++i) {
    matrix.row_ids[i] = i;
    for (WorkerId j = 0; j < cfg.n; ++j) {
      matrix.at(i, j) = expected_cost(samples[i], j, snap, cfg, size_of);
    }
  }
  return matrix;
}

/// Gap between the second-smallest and smallest entry of a row; the
/// partition criterion deciding which rows deserve the exact solver.
/// A single-column row has no alternative, so its gap is 0.
inline double row_gap_key(const CostMatrix& matrix, std::size_t row) {
  if (matrix.cols == 0) throw std::invalid_argument("row is empty");
  if (row >= matrix.rows) throw std::invalid_argument("row index out of range");
  if (matrix.cols == 1) return 0.0;
  double smallest = std::numeric_limits<double>::infinity();
  double second = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < matrix.cols; ++c) {
    const double v = matrix.at(row, c);
    if (v < smallest) {
      second = smallest;
      smallest = v;
    } else if (v < second) {
      second = v;
    }
  }
  return second - smallest;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("failed to format double");
  return std::string(buf, ptr);
}

}  // namespace detail

/// Plain-text matrix format: first line `rows cols`, then row-major
/// values. Doubles are written shortest-round-trip so files re-read
/// bit-exactly.
inline void write_matrix(std::ostream& os, const CostMatrix& matrix) {
  os << matrix.rows << ' ' << matrix.cols << '\n';
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c = 0; c < matrix.cols; ++c) {
      if (c != 0) os << ' ';
      os << detail::format_double(matrix.at(r, c));
    }
    os << '\n';
  }
}

inline CostMatrix read_matrix(std::istream& is) {
  CostMatrix matrix;
  if (!(is >> matrix.rows >> matrix.cols)) {
    throw std::runtime_error("matrix file: missing 'rows cols' header");
  }
  if (matrix.rows == 0 || matrix.cols == 0) {
    throw std::runtime_error("matrix file: dimensions must be positive");
  }
  matrix.values.resize(matrix.rows * matrix.cols);
  for (std::size_t i = 0; i < matrix.values.size(); ++i) {
    if (!(is >> matrix.values[i])) {
      throw std::runtime_error("matrix file: expected " +
                               std::to_string(matrix.values.size()) +
                               " values, got " + std::to_string(i));
    }
    if (!std::isfinite(matrix.values[i]) || matrix.values[i] < 0.0) {
      throw std::runtime_error("matrix file: values must be finite and non-negative");
    }
  }
  matrix.row_ids.resize(matrix.rows);
  for (std::size_t i = 0; i < matrix.rows; ++i) matrix.row_ids[i] = i;
  return matrix;
}

}  // namespace embdispatch

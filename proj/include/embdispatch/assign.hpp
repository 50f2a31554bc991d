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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "embdispatch/cost.hpp"
#include "embdispatch/types.hpp"

namespace embdispatch {

/// Sample -> worker map for one iteration; a valid decision gives every
/// worker exactly m samples.
struct DispatchDecision {
  std::vector<WorkerId> worker_of_sample;

  void validate(const ClusterConfig& cfg) const {
    if (worker_of_sample.size() != cfg.samples_per_iteration()) {
      throw std::invalid_argument("decision does not cover m*n samples");
    }
    std::vector<int> load(cfg.n, 0);
    for (WorkerId w : worker_of_sample) {
      if (w < 0 || w >= cfg.n) throw std::invalid_argument("worker id out of range");
      ++load[w];
    }
    for (WorkerId j = 0; j < cfg.n; ++j) {
      if (load[j] != cfg.m) {
        throw std::invalid_argument("worker " + std::to_string(j) + " received " +
                                    std::to_string(load[j]) + " samples, expected " +
                                    std::to_string(cfg.m));
      }
    }
  }
};

/// Square input to the exact solver: the top rows of a cost matrix with
/// each worker's column replicated once per unit of workload it may take.
struct SquareCost {
  std::size_t order = 0;
  std::vector<double> values;  // order x order, row-major
  std::vector<WorkerId> col_to_worker;

  double at(std::size_t r, std::size_t c) const { return values[r * order + c]; }
};

struct AssignmentResult {
  std::vector<std::size_t> col_of_row;
  double total_cost = 0.0;
};

/// Exact minimum-cost perfect matching via shortest augmenting paths with
/// dual potentials, O(k^3). Costs are scaled to 64-bit integers
/// (seconds * 1e12, saturating) so the augmenting phase never cycles on
/// floating-point ties; the reported total is recomputed from the
/// original values.
inline AssignmentResult hungarian(const SquareCost& sq) {
  const std::size_t k = sq.order;
  if (k < 1) throw std::invalid_argument("solver needs at least one row");
  if (sq.values.size() != k * k) {
    throw std::invalid_argument("cost matrix must be square");
  }
  for (double v : sq.values) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("costs must be finite and non-negative");
    }
  }

  const std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
  // Keep k * (a few reduced costs) clear of overflow even at full scale.
  const std::int64_t cap = kInf / (8 * static_cast<std::int64_t>(k + 1));
  std::vector<std::int64_t> cost(k * k);
  for (std::size_t i = 0; i < sq.values.size(); ++i) {
    const std::int64_t scaled =
        static_cast<std::int64_t>(std::llround(sq.values[i] * 1e12));
    cost[i] = std::min(scaled, cap);
  }

  // 1-based arrays; p[j] is the row matched to column j, column 0 is the
  // virtual start of each augmenting search.
  std::vector<std::int64_t> u(k + 1, 0), v(k + 1, 0);
  std::vector<std::size_t> p(k + 1, 0), way(k + 1, 0);
  std::vector<std::int64_t> minv(k + 1);
  std::vector<char> used(k + 1);
  for (std::size_t i = 1; i <= k; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      const std::int64_t* row = cost.data() + (i0 - 1) * k;
      for (std::size_t j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= k; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else if (minv[j] != kInf) {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  AssignmentResult result;
  result.col_of_row.resize(k);
  for (std::size_t j = 1; j <= k; ++j) {
    result.col_of_row[p[j] - 1] = j - 1;
  }
  for (std::size_t i = 0; i < k; ++i) {
    result.total_cost += sq.at(i, result.col_of_row[i]);
  }
  return result;
}

/// Capacity-bounded greedy: rows are processed in the given order, each
/// going to its cheapest worker that still has workload left; equal costs
/// resolve to the lowest worker index.
inline std::vector<std::pair<std::size_t, WorkerId>> greedy_dispatch(
    const CostMatrix& matrix, const std::vector<std::size_t>& rows,
    std::vector<int> capacity) {
  if (capacity.size() != matrix.cols) {
    throw std::invalid_argument("need one capacity per worker");
  }
  const long total =
      std::accumulate(capacity.begin(), capacity.end(), 0L);
  if (total != static_cast<long>(rows.size())) {
    throw std::invalid_argument("capacities must sum to the number of rows");
  }
  std::vector<std::pair<std::size_t, WorkerId>> partial;
  partial.reserve(rows.size());
  for (std::size_t row : rows) {
    if (row >= matrix.rows) throw std::invalid_argument("row index out of range");
    WorkerId best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < matrix.cols; ++j) {
      if (capacity[j] <= 0) continue;
      const double c = matrix.at(row, j);
      if (c < best_cost) {
        best_cost = c;
        best = static_cast<WorkerId>(j);
      }
    }
    if (best < 0) throw std::logic_error("capacities exhausted before rows");
    --capacity[best];
    partial.emplace_back(row, best);
  }
  return partial;
}

/// Row order for the hybrid: descending min2-min gap, original index
/// breaking ties, so rows that punish a wrong greedy pick hardest reach
/// the exact solver first.
inline std::vector<std::size_t> rows_by_gap(const CostMatrix& matrix) {
  std::vector<double> gap(matrix.rows);
  for (std::size_t r = 0; r < matrix.rows; ++r) gap[r] = row_gap_key(matrix, r);
  std::vector<std::size_t> order(matrix.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (gap[a] != gap[b]) return gap[a] > gap[b];
    return a < b;
  });
  return order;
}

namespace detail {

// floor(m * alpha) with a nudge for binary representation of alpha
// (0.3 * 10 must count as 3 expanded columns, not 2).
inline int exact_multiplicity(int m, double alpha) {
  const int mult = static_cast<int>(std::floor(m * alpha + 1e-9));
  return std::clamp(mult, 0, m);
}

}  // namespace detail

/// Expands the chosen rows into a square instance: worker j owns columns
/// [j*mult, (j+1)*mult), one per unit of workload the exact block may
/// assign to it.
inline SquareCost expand_columns(const CostMatrix& matrix,
                                 const std::vector<std::size_t>& rows, int mult) {
  SquareCost sq;
  sq.order = rows.size();
  if (sq.order != matrix.cols * static_cast<std::size_t>(mult)) {
    throw std::invalid_argument("row count must equal cols * multiplicity");
  }
  sq.values.resize(sq.order * sq.order);
  sq.col_to_worker.resize(sq.order);
  for (std::size_t c = 0; c < sq.order; ++c) {
    sq.col_to_worker[c] = static_cast<WorkerId>(c / static_cast<std::size_t>(mult));
  }
  for (std::size_t r = 0; r < sq.order; ++r) {
    for (std::size_t c = 0; c < sq.order; ++c) {
      sq.values[r * sq.order + c] = matrix.at(rows[r], sq.col_to_worker[c]);
    }
  }
  return sq;
}

/// Hybrid dispatcher: rows sorted by min2-min gap; the top n*floor(m*alpha)
/// rows are solved exactly on the column-expanded square matrix, the rest
/// go to the capacity-bounded greedy. alpha=1 is the pure exact solver,
/// alpha=0 pure greedy.
inline DispatchDecision ecomix(const CostMatrix& matrix, const ClusterConfig& cfg) {
  if (matrix.rows != cfg.samples_per_iteration() ||
      matrix.cols != static_cast<std::size_t>(cfg.n)) {
    throw std::invalid_argument("matrix shape does not match cluster config");
  }
  const std::vector<std::size_t> order = rows_by_gap(matrix);
  const int mult = detail::exact_multiplicity(cfg.m, cfg.alpha);
  const std::size_t exact_rows = static_cast<std::size_t>(cfg.n) *
                                 static_cast<std::size_t>(mult);

  DispatchDecision decision;
  decision.worker_of_sample.assign(matrix.rows, -1);

  const auto sample_of_row = [&](std::size_t row) {
    return matrix.row_ids.empty() ? row : matrix.row_ids[row];
  };

  if (mult > 0) {
    const std::vector<std::size_t> block(order.begin(),
                                         order.begin() + exact_rows);
    const SquareCost sq = expand_columns(matrix, block, mult);
    const AssignmentResult solved = hungarian(sq);
    for (std::size_t r = 0; r < block.size(); ++r) {
      decision.worker_of_sample[sample_of_row(block[r])] =
          sq.col_to_worker[solved.col_of_row[r]];
    }
  }

  if (exact_rows < matrix.rows) {
    const std::vector<std::size_t> rest(order.begin() + exact_rows, order.end());
    std::vector<int> capacity(matrix.cols, cfg.m - mult);
    for (const auto& [row, worker] : greedy_dispatch(matrix, rest, capacity)) {
      decision.worker_of_sample[sample_of_row(row)] = worker;
    }
  }

  decision.validate(cfg);
  return decision;
}

/// Expected total of a decision under a matrix, summed in sample order.
inline double decision_cost(const CostMatrix& matrix,
                            const DispatchDecision& decision) {
  if (decision.worker_of_sample.size() != matrix.rows) {
    throw std::invalid_argument("decision and matrix disagree on sample count");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < matrix.rows; ++i) {
    total += matrix.at(i, decision.worker_of_sample[i]);
  }
  return total;
}

/// Uniformly random balanced assignment; the experimental control.
inline DispatchDecision baseline_random(std::size_t sample_count,
                                        const ClusterConfig& cfg,
                                        std::uint64_t seed) {
  if (sample_count != cfg.samples_per_iteration()) {
    throw std::invalid_argument("sample count must be m*n");
  }
  std::vector<std::size_t> perm(sample_count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Explicit Fisher-Yates: std::shuffle is not pinned down by the
  // standard, and decisions must replay bit-identically from a seed.
  std::mt19937_64 rng(seed);
  for (std::size_t i = sample_count - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  DispatchDecision decision;
  decision.worker_of_sample.assign(sample_count, -1);
  for (std::size_t pos = 0; pos < sample_count; ++pos) {
    decision.worker_of_sample[perm[pos]] =
        static_cast<WorkerId>(pos / static_cast<std::size_t>(cfg.m));
  }
  decision.validate(cfg);
  return decision;
}

/// Static striping, sample i to worker i mod n.
inline DispatchDecision baseline_roundrobin(std::size_t sample_count,
                                            const ClusterConfig& cfg) {
  if (sample_count != cfg.samples_per_iteration()) {
    throw std::invalid_argument("sample count must be m*n");
  }
  DispatchDecision decision;
  decision.worker_of_sample.resize(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) {
    decision.worker_of_sample[i] = static_cast<WorkerId>(i % cfg.n);
  }
  decision.validate(cfg);
  return decision;
}

/// Relevance-score baseline: each sample scores a worker by how many of
/// its embeddings are latest-resident there, and samples go to their
/// best-scoring worker with workload left. Samples with the strongest
/// affinity commit first; score ties fall to the least-loaded then
/// lowest-indexed worker, which degrades to round-robin on cold caches.
inline DispatchDecision baseline_hitgreedy(
    const std::vector<EmbeddingSample>& samples, const Snapshot& snap,
    const ClusterConfig& cfg) {
  if (samples.size() != cfg.samples_per_iteration()) {
    throw std::invalid_argument("sample count must be m*n");
  }
  const std::size_t count = samples.size();
  std::vector<std::vector<int>> score(count, std::vector<int>(cfg.n, 0));
  std::vector<int> best_score(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    for (EmbeddingId id : samples[i].ids) {
      const EmbeddingState st = snap.state_of(id);
      WorkerMask holders = st.latest;
      while (holders != 0) {
        const WorkerId j = __builtin_ctzll(holders);
        holders &= holders - 1;
        ++score[i][j];
      }
    }
    best_score[i] = *std::max_element(score[i].begin(), score[i].end());
  }

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (best_score[a] != best_score[b]) return best_score[a] > best_score[b];
    return a < b;
  });

  DispatchDecision decision;
  decision.worker_of_sample.assign(count, -1);
  std::vector<int> remaining(cfg.n, cfg.m);
  for (std::size_t i : order) {
    WorkerId best = -1;
    for (WorkerId j = 0; j < cfg.n; ++j) {
      if (remaining[j] <= 0) continue;
      if (best < 0 || score[i][j] > score[i][best] ||
          (score[i][j] == score[i][best] && remaining[j] > remaining[best])) {
        best = j;
      }
    }
    --remaining[best];
    decision.worker_of_sample[i] = best;
  }
  decision.validate(cfg);
  return decision;
}

/// Decision file format: one `sample_index worker_id` line per sample,
/// then a `total_expected_cost <seconds>` summary line.
inline void write_decision(std::ostream& os, const DispatchDecision& decision,
                           double total_expected_cost) {
  for (std::size_t i = 0; i < decision.worker_of_sample.size(); ++i) {
    os << i << ' ' << decision.worker_of_sample[i] << '\n';
  }
  os << "total_expected_cost " << detail::format_double(total_expected_cost)
     << '\n';
}

}  // namespace embdispatch

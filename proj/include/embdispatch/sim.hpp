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

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "embdispatch/assign.hpp"
#include "embdispatch/cache.hpp"
#include "embdispatch/cost.hpp"
#include "embdispatch/types.hpp"
#include "embdispatch/workload.hpp"

namespace embdispatch {

/// Everything one simulated iteration produced: operation counts and
/// costs per worker and in total, lookup/hit tallies, and how long the
/// dispatch decision took (matrix construction timed separately).
struct IterationReport {
  std::size_t iteration = 0;
  std::string mechanism;
  std::vector<std::uint64_t> miss_pull_w, update_push_w, evict_push_w;
  std::vector<double> cost_w;
  std::uint64_t miss_pull = 0, update_push = 0, evict_push = 0;
  double cost_s = 0.0;
  std::uint64_t hits = 0, lookups = 0;
  double decision_s = 0.0;
  double matrix_s = 0.0;
  double expected_cost_s = 0.0;
  bool has_expected = false;
};

/// The BSP engine: per-worker caches plus the global per-embedding
/// synchronization state, advanced one balanced iteration at a time.
class SimState {
 public:
  explicit SimState(const ClusterConfig& cfg) : cfg_(cfg), clock_(0) {
    caches_.reserve(cfg.n);
    for (WorkerId j = 0; j < cfg.n; ++j) caches_.emplace_back(cfg.cache_capacity);
  }

  const ClusterConfig& config() const { return cfg_; }
  std::uint64_t clock() const { return clock_; }
  const WorkerCache& cache(WorkerId j) const { return caches_.at(j); }

  EmbeddingState state_of(EmbeddingId id) const {
    auto it = global_.find(id);
    return it == global_.end() ? EmbeddingState{} : it->second;
  }

  /// Dispatch-time view: embedding states plus per-worker resident sets.
  Snapshot snapshot() const {
    Snapshot snap;
    snap.states = global_;
    snap.resident_ids.resize(cfg_.n);
    for (WorkerId j = 0; j < cfg_.n; ++j) {
      snap.resident_ids[j].reserve(caches_[j].size());
      for (const auto& [id, entry] : caches_[j].entries()) {
        snap.resident_ids[j].push_back(id);
      }
    }
    return snap;
  }

  /// Runs one iteration: update pushes for embeddings another worker now
  /// needs, then per-worker lookups with evictions and miss pulls, then
  /// ownership handover to this iteration's trainers.
  IterationReport step(const std::vector<EmbeddingSample>& samples,
                       const DispatchDecision& decision) {
    decision.validate(cfg_);
    if (samples.size() != cfg_.samples_per_iteration()) {
      throw std::invalid_argument("expected m*n samples");
    }

    IterationReport rep;
    rep.iteration = clock_;
    rep.miss_pull_w.assign(cfg_.n, 0);
    rep.update_push_w.assign(cfg_.n, 0);
    rep.evict_push_w.assign(cfg_.n, 0);
    rep.cost_w.assign(cfg_.n, 0.0);

    // Per-worker needs in first-occurrence order, occurrence counts, and
    // the per-embedding set of training workers.
    std::vector<std::vector<EmbeddingId>> need_order(cfg_.n);
    std::vector<std::unordered_map<EmbeddingId, std::uint32_t>> need_count(cfg_.n);
    std::unordered_map<EmbeddingId, WorkerMask> trainers;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const WorkerId j = decision.worker_of_sample[i];
      for (EmbeddingId id : samples[i].ids) {
        ++rep.lookups;
        auto [it, fresh] = need_count[j].try_emplace(id, 0u);
        ++it->second;
        if (fresh) {
          need_order[j].push_back(id);
          trainers[id] |= worker_bit(j);
        }
      }
    }

    // Phase 1: on-demand update push. An owner whose embedding some other
    // worker needs this iteration pushes its gradient; if a sole owner
    // remains (it alone needs the embedding), every synced copy elsewhere
    // is stale relative to that unpushed gradient.
    for (const auto& [id, need_mask] : trainers) {
      auto it = global_.find(id);
      if (it == global_.end() || it->second.owners == 0) continue;
      EmbeddingState& st = it->second;
      WorkerMask pushers = 0;
      WorkerMask owners = st.owners;
      while (owners != 0) {
        const WorkerId w = __builtin_ctzll(owners);
        owners &= owners - 1;
        if ((need_mask & ~worker_bit(w)) != 0) pushers |= worker_bit(w);
      }
      if (pushers == 0) continue;
      WorkerMask iter_mask = pushers;
      while (iter_mask != 0) {
        const WorkerId w = __builtin_ctzll(iter_mask);
        iter_mask &= iter_mask - 1;
        ++rep.update_push_w[w];
      }
      st.owners &= ~pushers;
      if (st.owners != 0) {
        WorkerMask stale = st.latest & ~st.owners;
        while (stale != 0) {
          const WorkerId w = __builtin_ctzll(stale);
          stale &= stale - 1;
          caches_[w].set_version(id, false);
        }
        st.latest = st.owners;
      }
      // Otherwise the PS is now authoritative and every pusher's copy
      // stays flagged latest.
    }

    // Phase 2: lookups. The iteration's working set is pinned so an
    // eviction can never displace an embedding this micro-batch trains.
    for (WorkerId j = 0; j < cfg_.n; ++j) {
      WorkerCache& cache = caches_[j];
      WorkerCache::PinnedSet pinned;
      pinned.reserve(need_count[j].size() * 2);
      for (const auto& [id, occ] : need_count[j]) pinned.insert(id);

      const auto owner_is_self = [&](EmbeddingId victim) {
        auto vit = global_.find(victim);
        return vit != global_.end() && vit->second.owned_by(j);
      };

      for (EmbeddingId id : need_order[j]) {
        EmbeddingState& st = global_[id];
        if (st.latest_on(j)) {
          rep.hits += need_count[j][id];
          cache.touch(id, true, clock_);
          continue;
        }
        if (!st.resident_on(j) && cache.full()) {
          for (const auto& [victim, push] :
               cache.evict_for(1, owner_is_self, &pinned)) {
            if (push) ++rep.evict_push_w[j];
            EmbeddingState& vst = global_[victim];
            vst.owners &= ~worker_bit(j);
            vst.latest &= ~worker_bit(j);
            vst.resident &= ~worker_bit(j);
          }
        }
        ++rep.miss_pull_w[j];
        cache.touch(id, true, clock_);
        st.latest |= worker_bit(j);
        st.resident |= worker_bit(j);
      }
    }

    // Phase 3: training hands ownership of each embedding to the workers
    // that trained it; any other resident copy is now outdated.
    for (const auto& [id, mask] : trainers) {
      EmbeddingState& st = global_[id];
      WorkerMask stale = st.latest & ~mask;
      while (stale != 0) {
        const WorkerId w = __builtin_ctzll(stale);
        stale &= stale - 1;
        caches_[w].set_version(id, false);
      }
      st.owners = mask;
      st.latest = mask;
    }

    ++clock_;

    for (WorkerId j = 0; j < cfg_.n; ++j) {
      rep.miss_pull += rep.miss_pull_w[j];
      rep.update_push += rep.update_push_w[j];
      rep.evict_push += rep.evict_push_w[j];
      const std::uint64_t ops =
          rep.miss_pull_w[j] + rep.update_push_w[j] + rep.evict_push_w[j];
      rep.cost_w[j] = static_cast<double>(ops) * unit_cost(cfg_, j).seconds;
      rep.cost_s += rep.cost_w[j];
    }
    return rep;
  }

  /// Cross-checks cache contents against the global state; throws on the
  /// first violation. Meant for debug runs and tests.
  void validate_consistency() const {
    for (WorkerId j = 0; j < cfg_.n; ++j) {
      for (const auto& [id, entry] : caches_[j].entries()) {
        const EmbeddingState st = state_of(id);
        if (!st.resident_on(j)) {
          throw std::logic_error("cache entry missing from global resident set");
        }
        if (entry.version_latest != st.latest_on(j)) {
          throw std::logic_error("version flag diverged from global state");
        }
      }
    }
    for (const auto& [id, st] : global_) {
      if (!st.consistent()) {
        throw std::logic_error("embedding state invariant violated for id " +
                               std::to_string(id));
      }
      WorkerMask resident = st.resident;
      while (resident != 0) {
        const WorkerId w = __builtin_ctzll(resident);
        resident &= resident - 1;
        if (!caches_[w].resident(id)) {
          throw std::logic_error("global resident bit without a cache entry");
        }
      }
    }
  }

  /// Test hook: places an embedding on a worker with the given role.
  /// Keeps cache and global state in lockstep.
  void seed_entry(EmbeddingId id, WorkerId worker, bool latest, bool owner) {
    if (owner && !latest) {
      throw std::invalid_argument("an owner's copy is always latest");
    }
    caches_.at(worker).touch(id, latest, clock_);
    EmbeddingState& st = global_[id];
    st.resident |= worker_bit(worker);
    if (latest) st.latest |= worker_bit(worker);
    if (owner) st.owners |= worker_bit(worker);
  }

 private:
  ClusterConfig cfg_;
  std::vector<WorkerCache> caches_;
  std::unordered_map<EmbeddingId, EmbeddingState> global_;
  std::uint64_t clock_;
};

/// A dispatch mechanism a run can be driven by.
struct Mechanism {
  enum class Kind { kEcoMix, kRandom, kRoundRobin, kHitGreedy };
  Kind kind = Kind::kEcoMix;
  double alpha = 1.0;

  std::string name() const {
    switch (kind) {
      case Kind::kRandom: return "random";
      case Kind::kRoundRobin: return "roundrobin";
      case Kind::kHitGreedy: return "hitgreedy";
      case Kind::kEcoMix: break;
    }
    return "ecomix:" + detail::format_double(alpha);
  }

  bool needs_snapshot() const {
    return kind == Kind::kEcoMix || kind == Kind::kHitGreedy;
  }
  bool needs_matrix() const { return kind == Kind::kEcoMix; }

  /// Parses "ecomix:<alpha>", "ecomix", "random", "roundrobin",
  /// "hitgreedy".
  static Mechanism parse(const std::string& text) {
    Mechanism mech;
    if (text == "random") {
      mech.kind = Kind::kRandom;
    } else if (text == "roundrobin") {
      mech.kind = Kind::kRoundRobin;
    } else if (text == "hitgreedy") {
      mech.kind = Kind::kHitGreedy;
    } else if (text == "ecomix" || text.rfind("ecomix:", 0) == 0) {
      mech.kind = Kind::kEcoMix;
      if (text.size() > 7) {
        try {
          mech.alpha = std::stod(text.substr(7));
        } catch (const std::exception&) {
          throw std::invalid_argument("bad alpha in mechanism '" + text + "'");
        }
      }
      if (mech.alpha < 0.0 || mech.alpha > 1.0) {
        throw std::invalid_argument("alpha must lie in [0, 1]");
      }
    } else {
      throw std::invalid_argument("unknown mechanism '" + text + "'");
    }
    return mech;
  }
};

struct RunOptions {
  std::size_t warmup = 10;
  double training_budget_s = 0.0;  // 0 disables the check
  bool validate_state = false;
  std::uint64_t random_seed = 1;  // decision stream for the random baseline
};

/// Post-warmup aggregates for one mechanism run.
struct RunSummary {
  std::string mechanism;
  std::size_t iterations = 0;
  std::size_t measured_iterations = 0;
  std::uint64_t miss_pull = 0, update_push = 0, evict_push = 0;
  std::uint64_t hits = 0, lookups = 0;
  double cost_s = 0.0;
  double expected_cost_s = 0.0;
  bool has_expected = false;
  double decision_s_total = 0.0;
  double decision_s_max = 0.0;
  double matrix_s_total = 0.0;
  std::size_t budget_violations = 0;
  // Per-worker post-warmup totals, for the bandwidth-class breakdown.
  std::vector<std::uint64_t> miss_pull_w, update_push_w, evict_push_w;
  std::vector<std::uint64_t> ops_w;

  double hit_ratio() const {
    return lookups == 0 ? 0.0
                        : static_cast<double>(hits) / static_cast<double>(lookups);
  }
  std::uint64_t ops_total() const { return miss_pull + update_push + evict_push; }
};

struct RunResult {
  Mechanism mechanism;
  std::vector<IterationReport> reports;
  RunSummary summary;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t iteration) {
  // splitmix64 step over seed ^ iteration
  std::uint64_t z = (seed ^ (iteration * 0x9e3779b97f4a7c15ull)) + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// One dispatch decision for the given mechanism. The matrix is only
/// consulted by the hybrid, the snapshot only by snapshot-aware
/// mechanisms.
inline DispatchDecision dispatch_with(const Mechanism& mech,
                                      const std::vector<EmbeddingSample>& samples,
                                      const Snapshot& snap,
                                      const CostMatrix& matrix,
                                      const ClusterConfig& cfg,
                                      std::uint64_t iteration,
                                      std::uint64_t random_seed) {
  switch (mech.kind) {
    case Mechanism::Kind::kEcoMix: {
      ClusterConfig tuned = cfg;
      tuned.alpha = mech.alpha;
      return ecomix(matrix, tuned);
    }
    case Mechanism::Kind::kRandom:
      return baseline_random(samples.size(), cfg,
                             detail::mix_seed(random_seed, iteration));
    case Mechanism::Kind::kRoundRobin:
      return baseline_roundrobin(samples.size(), cfg);
    case Mechanism::Kind::kHitGreedy:
      return baseline_hitgreedy(samples, snap, cfg);
  }
  throw std::logic_error("unreachable");
}

/// Drives a full run of one mechanism over a stream: snapshot, matrix,
/// decision, then the simulated iteration. Decision latency wraps only
/// the dispatcher call.
inline RunResult run(SampleStream& stream, const Mechanism& mech,
                     const ClusterConfig& cfg, const RunOptions& opt) {
  using clock = std::chrono::steady_clock;
  RunResult result;
  result.mechanism = mech;
  result.summary.mechanism = mech.name();
  result.summary.miss_pull_w.assign(cfg.n, 0);
  result.summary.update_push_w.assign(cfg.n, 0);
  result.summary.evict_push_w.assign(cfg.n, 0);
  result.summary.ops_w.assign(cfg.n, 0);

  SimState state(cfg);
  std::vector<EmbeddingSample> samples;
  std::size_t iteration = 0;
  while (stream.next_iteration(samples)) {
    if (samples.size() != cfg.samples_per_iteration()) {
      throw std::invalid_argument("stream underrun: iteration is short of samples");
    }
    Snapshot snap;
    CostMatrix matrix;
    double matrix_s = 0.0;
    if (mech.needs_snapshot()) snap = state.snapshot();
    if (mech.needs_matrix()) {
      const auto t0 = clock::now();
      matrix = build_matrix(samples, snap, cfg);
      matrix_s = std::chrono::duration<double>(clock::now() - t0).count();
    }

    const auto t1 = clock::now();
    const DispatchDecision decision = dispatch_with(
        mech, samples, snap, matrix, cfg, iteration, opt.random_seed);
    const double decision_s =
        std::chrono::duration<double>(clock::now() - t1).count();

    IterationReport rep = state.step(samples, decision);
    rep.mechanism = mech.name();
    rep.decision_s = decision_s;
    rep.matrix_s = matrix_s;
    if (mech.needs_matrix()) {
      rep.expected_cost_s = decision_cost(matrix, decision);
      rep.has_expected = true;
    }
    if (opt.validate_state) state.validate_consistency();

    if (iteration >= opt.warmup) {
      RunSummary& s = result.summary;
      ++s.measured_iterations;
      s.miss_pull += rep.miss_pull;
      s.update_push += rep.update_push;
      s.evict_push += rep.evict_push;
      s.hits += rep.hits;
      s.lookups += rep.lookups;
      s.cost_s += rep.cost_s;
      if (rep.has_expected) {
        s.expected_cost_s += rep.expected_cost_s;
        s.has_expected = true;
      }
      s.matrix_s_total += rep.matrix_s;
      for (WorkerId j = 0; j < cfg.n; ++j) {
        s.miss_pull_w[j] += rep.miss_pull_w[j];
        s.update_push_w[j] += rep.update_push_w[j];
        s.evict_push_w[j] += rep.evict_push_w[j];
        s.ops_w[j] +=
            rep.miss_pull_w[j] + rep.update_push_w[j] + rep.evict_push_w[j];
      }
    }
    result.summary.decision_s_total += rep.decision_s;
    result.summary.decision_s_max =
        std::max(result.summary.decision_s_max, rep.decision_s);
    if (opt.training_budget_s > 0.0 && rep.decision_s > opt.training_budget_s) {
      ++result.summary.budget_violations;
    }

    result.reports.push_back(std::move(rep));
    ++iteration;
  }
  result.summary.iterations = iteration;
  return result;
}

}  // namespace embdispatch

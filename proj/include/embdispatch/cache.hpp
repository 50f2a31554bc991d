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

#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "embdispatch/types.hpp"

namespace embdispatch {

/// One cached embedding. `version_latest` encodes latest=1 / outdated=0,
/// `mark` is the epoch counter assigned at dispatch time, `frequency`
/// counts accesses since insertion.
struct CacheEntry {
  EmbeddingId id = 0;
  bool version_latest = true;
  std::uint32_t mark = 1;
  std::uint32_t frequency = 1;
  std::uint64_t last_access = 0;
};

/// Eviction rank, ascending: outdated before latest, then mark, then
/// frequency. last_access and id only break remaining ties so victim
/// selection is a total order.
struct VictimKey {
  bool version_latest;
  std::uint32_t mark;
  std::uint32_t frequency;
  std::uint64_t last_access;
  EmbeddingId id;

  friend bool operator<(const VictimKey& a, const VictimKey& b) {
    return std::tie(a.version_latest, a.mark, a.frequency, a.last_access, a.id) <
           std::tie(b.version_latest, b.mark, b.frequency, b.last_access, b.id);
  }
};

inline VictimKey victim_key(const CacheEntry& e) {
  return VictimKey{e.version_latest, e.mark, e.frequency, e.last_access, e.id};
}

/// Which comparator drives victim selection. kPriorityRatio divides a
/// (version, mark, frequency) score by the per-embedding footprint so
/// non-uniform embedding sizes can be prioritized; default stays the
/// mark-based order.
enum class VictimPolicy { kMarkVersion, kPriorityRatio };

/// Per-worker embedding cache. Eviction is explicit (evict_for) so the
/// simulator can account evict pushes before any state mutation; touch
/// never evicts and refuses to insert into a full cache.
class WorkerCache {
 public:
  using FootprintFn = std::function<double(EmbeddingId)>;
  using NeedsPushFn = std::function<bool(EmbeddingId)>;
  using PinnedSet = std::unordered_set<EmbeddingId>;

  explicit WorkerCache(std::size_t capacity,
                       VictimPolicy policy = VictimPolicy::kMarkVersion,
                       FootprintFn footprint = nullptr)
      : capacity_(capacity), policy_(policy), footprint_(std::move(footprint)) {
    if (capacity_ == 0) throw std::invalid_argument("cache capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool full() const { return entries_.size() == capacity_; }
  std::size_t free_slots() const { return capacity_ - entries_.size(); }
  std::uint32_t current_mark() const { return current_mark_; }

  bool resident(EmbeddingId id) const { return entries_.count(id) != 0; }

  const CacheEntry* find(EmbeddingId id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  /// Insert or refresh `id`: mark set to the current epoch, frequency
  /// incremented (1 when new), recency and version flag updated. The
  /// caller must have made room first.
  void touch(EmbeddingId id, bool latest, std::uint64_t now) {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      if (full()) {
        throw std::logic_error("touch would insert into a full cache; evict first");
      }
      CacheEntry e{id, latest, current_mark_, 1, now};
      entries_.emplace(id, e);
      order_.insert(victim_key(e));
      ++at_current_mark_;
      return;
    }
    CacheEntry& e = it->second;
    order_.erase(victim_key(e));
    if (e.mark != current_mark_) ++at_current_mark_;
    e.mark = current_mark_;
    e.frequency += 1;
    e.last_access = now;
    e.version_latest = latest;
    order_.insert(victim_key(e));
  }

  /// Flips the version flag without counting an access; used when global
  /// synchronization invalidates or refreshes a resident copy.
  void set_version(EmbeddingId id, bool latest) {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      throw std::invalid_argument("set_version on non-resident embedding");
    }
    if (it->second.version_latest == latest) return;
    order_.erase(victim_key(it->second));
    it->second.version_latest = latest;
    order_.insert(victim_key(it->second));
  }

  /// Victim under the active policy. Requires a full cache: eviction
  /// choices only exist under capacity pressure.
  EmbeddingId select_victim() const {
    if (!full()) throw std::logic_error("select_victim requires a full cache");
    EmbeddingId victim;
    if (!pick_victim(nullptr, &victim)) {
      throw std::logic_error("no evictable entry");
    }
    return victim;
  }

  /// Frees slots until `needed` are available, skipping `pinned` ids
  /// (the in-flight micro-batch working set). Each victim is reported
  /// with whether its eviction forces a gradient push, decided by
  /// `needs_push`; the caller owns the matching global-state update.
  std::vector<std::pair<EmbeddingId, bool>> evict_for(
      std::size_t needed, const NeedsPushFn& needs_push,
      const PinnedSet* pinned = nullptr) {
    if (needed > capacity_) {
      throw std::invalid_argument("cannot free more slots than the capacity");
    }
    std::vector<std::pair<EmbeddingId, bool>> evicted;
    if (free_slots() >= needed) return evicted;
    maybe_advance_mark();
    while (free_slots() < needed) {
      EmbeddingId victim;
      if (!pick_victim(pinned, &victim)) {
        throw std::logic_error("every cache entry is pinned; cannot evict");
      }
      evicted.emplace_back(victim, needs_push ? needs_push(victim) : false);
      erase(victim);
    }
    return evicted;
  }

  void erase(EmbeddingId id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) return;
    if (it->second.mark == current_mark_) --at_current_mark_;
    order_.erase(victim_key(it->second));
    entries_.erase(it);
  }

  const std::unordered_map<EmbeddingId, CacheEntry>& entries() const {
    return entries_;
  }

 private:
  // Epoch advance: once the cache is full and every entry already carries
  // the current mark, the next insertion round opens a new epoch.
  void maybe_advance_mark() {
    if (full() && at_current_mark_ == entries_.size()) {
      ++current_mark_;
      at_current_mark_ = 0;
    }
  }

  bool pick_victim(const PinnedSet* pinned, EmbeddingId* out) const {
    if (policy_ == VictimPolicy::kMarkVersion) {
      for (const VictimKey& key : order_) {
        if (pinned != nullptr && pinned->count(key.id) != 0) continue;
        *out = key.id;
        return true;
      }
      return false;
    }
    // Priority-ratio policy: lowest (version+mark+frequency)/footprint
    // goes first; recency and id break ties. Scan is fine here, the
    // policy is an opt-in variant.
    bool found = false;
    double best_priority = 0.0;
    std::uint64_t best_recency = 0;
    EmbeddingId best_id = 0;
    for (const auto& [id, e] : entries_) {
      if (pinned != nullptr && pinned->count(id) != 0) continue;
      const double footprint = footprint_ ? footprint_(id) : 1.0;
      const double numerator =
          (e.version_latest ? 2.0 : 1.0) * static_cast<double>(e.mark) *
          static_cast<double>(e.frequency);
      const double priority = numerator / footprint;
      const bool better =
          !found || priority < best_priority ||
          (priority == best_priority &&
           (e.last_access < best_recency ||
            (e.last_access == best_recency && id < best_id)));
      if (better) {
        found = true;
        best_priority = priority;
        best_recency = e.last_access;
        best_id = id;
      }
    }
    *out = best_id;
    return found;
  }

  std::size_t capacity_;
  VictimPolicy policy_;
  FootprintFn footprint_;
  std::uint32_t current_mark_ = 1;
  std::size_t at_current_mark_ = 0;
  std::unordered_map<EmbeddingId, CacheEntry> entries_;
  std::set<VictimKey> order_;
};

}  // namespace embdispatch

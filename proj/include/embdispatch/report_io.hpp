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
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "embdispatch/sim.hpp"
#include "embdispatch/types.hpp"

namespace embdispatch {

/// One iteration as a JSON line. Field set is fixed; per_worker carries
/// the per-link breakdown.
inline std::string report_jsonl(const IterationReport& rep) {
  nlohmann::ordered_json line;
  line["iter"] = rep.iteration;
  line["mech"] = rep.mechanism;
  line["miss_pull"] = rep.miss_pull;
  line["update_push"] = rep.update_push;
  line["evict_push"] = rep.evict_push;
  line["cost_s"] = rep.cost_s;
  line["hits"] = rep.hits;
  line["lookups"] = rep.lookups;
  line["decision_s"] = rep.decision_s;
  line["per_worker"] = {
      {"miss_pull", rep.miss_pull_w},
      {"update_push", rep.update_push_w},
      {"evict_push", rep.evict_push_w},
      {"cost_s", rep.cost_w},
  };
  return line.dump();
}

namespace detail {

/// Workers grouped by link bandwidth, fastest class first.
struct BandwidthClass {
  double bps = 0.0;
  std::string label;
  std::vector<WorkerId> workers;
};

inline std::vector<BandwidthClass> bandwidth_classes(const ClusterConfig& cfg) {
  std::set<double, std::greater<double>> distinct(cfg.bandwidths_bps.begin(),
                                                  cfg.bandwidths_bps.end());
  std::vector<BandwidthClass> classes;
  for (double bps : distinct) {
    BandwidthClass cls;
    cls.bps = bps;
    cls.label = format_double(bps / 1e9) + "gbps";
    for (WorkerId j = 0; j < cfg.n; ++j) {
      if (cfg.bandwidths_bps[j] == bps) cls.workers.push_back(j);
    }
    classes.push_back(std::move(cls));
  }
  return classes;
}

}  // namespace detail

/// The comparison table: post-warmup aggregates per mechanism with cost
/// reduction against a named reference and the operation mix split by
/// bandwidth class.
inline std::string comparison_csv(const std::vector<RunResult>& results,
                                  const std::string& reference,
                                  const ClusterConfig& cfg) {
  if (results.empty()) throw std::invalid_argument("no runs to compare");
  const RunResult* ref = nullptr;
  for (const RunResult& r : results) {
    if (r.summary.mechanism == reference) ref = &r;
  }
  if (ref == nullptr) {
    throw std::invalid_argument("reference mechanism '" + reference +
                                "' is not among the runs");
  }
  for (const RunResult& r : results) {
    if (r.summary.iterations != ref->summary.iterations ||
        r.summary.lookups != ref->summary.lookups) {
      throw std::invalid_argument(
          "runs cover different workloads; comparison is meaningless");
    }
  }

  const auto classes = detail::bandwidth_classes(cfg);
  std::ostringstream csv;
  csv << "mechanism,iterations,measured_iterations,lookups,hits,hit_ratio,"
         "miss_pull,update_push,evict_push,ops,cost_s,expected_cost_s,"
         "cost_reduction_pct,decision_s_mean,decision_s_max,matrix_s_total,"
         "budget_violations";
  for (const auto& cls : classes) {
    csv << ",ops_frac_" << cls.label << ",miss_pull_frac_" << cls.label
        << ",update_push_frac_" << cls.label << ",evict_push_frac_"
        << cls.label;
  }
  csv << '\n';

  for (const RunResult& r : results) {
    const RunSummary& s = r.summary;
    const double reduction =
        ref->summary.cost_s == 0.0
            ? 0.0
            : (ref->summary.cost_s - s.cost_s) / ref->summary.cost_s * 100.0;
    const double mean_decision =
        s.iterations == 0 ? 0.0
                          : s.decision_s_total / static_cast<double>(s.iterations);
    csv << s.mechanism << ',' << s.iterations << ',' << s.measured_iterations
        << ',' << s.lookups << ',' << s.hits << ','
        << detail::format_double(s.hit_ratio()) << ',' << s.miss_pull << ','
        << s.update_push << ',' << s.evict_push << ',' << s.ops_total() << ','
        << detail::format_double(s.cost_s) << ','
        << (s.has_expected ? detail::format_double(s.expected_cost_s) : "") << ','
        << detail::format_double(reduction) << ','
        << detail::format_double(mean_decision) << ','
        << detail::format_double(s.decision_s_max) << ','
        << detail::format_double(s.matrix_s_total) << ',' << s.budget_violations;
    const double total_ops = static_cast<double>(s.ops_total());
    for (const auto& cls : classes) {
      std::uint64_t ops = 0, miss = 0, update = 0, evict = 0;
      for (WorkerId j : cls.workers) {
        ops += s.ops_w[j];
        miss += s.miss_pull_w[j];
        update += s.update_push_w[j];
        evict += s.evict_push_w[j];
      }
      const auto frac = [&](std::uint64_t count) {
        return total_ops == 0.0 ? 0.0 : static_cast<double>(count) / total_ops;
      };
      csv << ',' << detail::format_double(frac(ops)) << ','
          << detail::format_double(frac(miss)) << ','
          << detail::format_double(frac(update)) << ','
          << detail::format_double(frac(evict));
    }
    csv << '\n';
  }
  return csv.str();
}

/// Fraction of all post-warmup transmission operations performed by
/// workers in the fastest bandwidth class.
inline double fast_class_ops_fraction(const RunSummary& s,
                                      const ClusterConfig& cfg) {
  const auto classes = detail::bandwidth_classes(cfg);
  if (classes.empty()) return 0.0;
  std::uint64_t fast_ops = 0;
  for (WorkerId j : classes.front().workers) fast_ops += s.ops_w[j];
  const std::uint64_t total = s.ops_total();
  return total == 0 ? 0.0
                    : static_cast<double>(fast_ops) / static_cast<double>(total);
}

}  // namespace embdispatch

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

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "embdispatch/sim.hpp"
#include "embdispatch/types.hpp"
#include "embdispatch/workload.hpp"

namespace embdispatch {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace detail

/// Flat `section.key = value` text config. Lines starting with '#' are
/// comments; duplicate keys keep the last value.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin) {
    KeyValueConfig kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string stripped = detail::trim(line);
      if (stripped.empty()) continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                 ": expected 'key = value'");
      }
      const std::string key = detail::trim(stripped.substr(0, eq));
      const std::string value = detail::trim(stripped.substr(eq + 1));
      if (key.empty()) {
        throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                 ": empty key");
      }
      kv.values_[key] = value;
    }
    return kv;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "': expected integer, got '" +
                               it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "': expected number, got '" +
                               it->second + "'");
    }
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> items;
    auto it = values_.find(key);
    if (it == values_.end()) return items;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string trimmed = detail::trim(item);
      if (!trimmed.empty()) items.push_back(trimmed);
    }
    return items;
  }

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// A full experiment: cluster, workload source, mechanisms to compare,
/// and reporting knobs. Defaults reproduce the reference setup: 8 workers
/// half on 5 Gbps and half on 0.5 Gbps, batch 128, 512-float embeddings,
/// caches sized to 8% of the embedding population.
struct ExperimentConfig {
  ClusterConfig cluster;
  WorkloadSpec workload;
  bool use_trace = false;
  std::string trace_path;
  std::string schema_path;
  std::vector<Mechanism> mechanisms;
  std::string reference = "hitgreedy";
  std::size_t warmup = 10;
  double training_budget_s = 0.0;

  static ExperimentConfig defaults() {
    ExperimentConfig cfg;
    cfg.cluster.n = 8;
    cfg.cluster.m = 128;
    cfg.cluster.bandwidths_bps = {5e9, 5e9, 5e9, 5e9, 5e8, 5e8, 5e8, 5e8};
    cfg.cluster.d_tran_bytes = 512 * 4;
    cfg.cluster.alpha = 1.0;
    cfg.workload = WorkloadSpec{};
    cfg.cluster.cache_capacity = static_cast<std::size_t>(
        0.08 * static_cast<double>(cfg.workload.total_embeddings));
    cfg.mechanisms = {Mechanism::parse("ecomix:1"), Mechanism::parse("ecomix:0.5"),
                      Mechanism::parse("random"), Mechanism::parse("roundrobin"),
                      Mechanism::parse("hitgreedy")};
    return cfg;
  }

  static ExperimentConfig from_kv(const KeyValueConfig& kv) {
    ExperimentConfig cfg = defaults();

    cfg.cluster.n = static_cast<int>(kv.get_int("cluster.n", cfg.cluster.n));
    cfg.cluster.m = static_cast<int>(kv.get_int("cluster.m", cfg.cluster.m));
    if (kv.has("cluster.bw")) {
      cfg.cluster.bandwidths_bps.clear();
      for (const std::string& item : kv.get_list("cluster.bw")) {
        try {
          cfg.cluster.bandwidths_bps.push_back(std::stod(item));
        } catch (const std::exception&) {
          throw std::runtime_error("cluster.bw: bad bandwidth '" + item + "'");
        }
      }
      // A single value broadcasts to every worker.
      if (cfg.cluster.bandwidths_bps.size() == 1) {
        cfg.cluster.bandwidths_bps.assign(cfg.cluster.n,
                                          cfg.cluster.bandwidths_bps[0]);
      }
    } else if (cfg.cluster.n != 8) {
      throw std::runtime_error("cluster.bw is required when cluster.n != 8");
    }
    const long long dim = kv.get_int("cluster.embedding_dim", 512);
    if (dim < 1) throw std::runtime_error("cluster.embedding_dim must be positive");
    cfg.cluster.d_tran_bytes = static_cast<std::uint64_t>(
        kv.get_int("cluster.d_tran", dim * 4));
    cfg.cluster.alpha = kv.get_double("cluster.alpha", cfg.cluster.alpha);

    const std::string kind = kv.get_string("workload.kind", "zipf");
    if (kind == "zipf") {
      cfg.use_trace = false;
    } else if (kind == "trace") {
      cfg.use_trace = true;
      cfg.trace_path = kv.get_string("workload.trace", "");
      cfg.schema_path = kv.get_string("workload.schema", "");
      if (cfg.trace_path.empty()) {
        throw std::runtime_error("workload.kind=trace requires workload.trace");
      }
    } else {
      throw std::runtime_error("workload.kind must be 'zipf' or 'trace'");
    }
    cfg.workload.total_embeddings = static_cast<std::size_t>(
        kv.get_int("workload.total_embeddings", cfg.workload.total_embeddings));
    cfg.workload.sample_len = static_cast<std::size_t>(
        kv.get_int("workload.sample_len", cfg.workload.sample_len));
    cfg.workload.zipf_s = kv.get_double("workload.zipf_s", cfg.workload.zipf_s);
    cfg.workload.iterations = static_cast<std::size_t>(
        kv.get_int("workload.iterations", cfg.workload.iterations));
    cfg.workload.seed =
        static_cast<std::uint64_t>(kv.get_int("workload.seed", cfg.workload.seed));

    if (kv.has("cluster.cache_capacity")) {
      cfg.cluster.cache_capacity = static_cast<std::size_t>(
          kv.get_int("cluster.cache_capacity", 0));
    } else {
      const double ratio = kv.get_double("cluster.cache_ratio", 0.08);
      if (!(ratio > 0.0) || ratio > 1.0) {
        throw std::runtime_error("cluster.cache_ratio must lie in (0, 1]");
      }
      cfg.cluster.cache_capacity = static_cast<std::size_t>(
          std::floor(ratio * static_cast<double>(cfg.workload.total_embeddings)));
    }

    if (kv.has("run.mechanisms")) {
      cfg.mechanisms.clear();
      for (const std::string& item : kv.get_list("run.mechanisms")) {
        cfg.mechanisms.push_back(Mechanism::parse(item));
      }
    }
    cfg.reference = kv.get_string("run.reference", cfg.reference);
    cfg.warmup = static_cast<std::size_t>(kv.get_int("run.warmup", cfg.warmup));
    cfg.training_budget_s =
        kv.get_double("run.training_budget_s", cfg.training_budget_s);
    cfg.validate();
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    return from_kv(KeyValueConfig::load(path));
  }

  void validate() const {
    if (mechanisms.empty()) throw std::runtime_error("run.mechanisms is empty");
    bool ref_found = false;
    for (const Mechanism& m : mechanisms) {
      if (m.name() == reference) ref_found = true;
    }
    if (!ref_found) {
      throw std::runtime_error("run.reference '" + reference +
                               "' is not in run.mechanisms");
    }
    if (!use_trace) {
      embdispatch::validate(workload);
      if (warmup >= workload.iterations) {
        throw std::runtime_error("run.warmup must be smaller than the iteration count");
      }
      embdispatch::validate(cluster, workload.sample_len);
    } else {
      // Trace streams learn their sample length and iteration count at
      // load; those checks move there.
      if (cluster.n < 1 || cluster.m < 1) {
        throw std::runtime_error("cluster.n and cluster.m must be positive");
      }
    }
  }
};

}  // namespace embdispatch

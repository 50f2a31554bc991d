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
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "embdispatch/types.hpp"

namespace embdispatch {

/// Synthetic workload description: a Zipf-distributed id stream standing
/// in for hashed categorical traces.
struct WorkloadSpec {
  std::size_t total_embeddings = 50000;
  std::size_t sample_len = 26;
  double zipf_s = 1.05;
  std::size_t iterations = 200;
  std::uint64_t seed = 42;
};

inline void validate(const WorkloadSpec& spec) {
  if (spec.sample_len < 1) throw std::invalid_argument("sample_len must be >= 1");
  if (!(spec.zipf_s > 0.0)) throw std::invalid_argument("zipf_s must be positive");
  if (spec.total_embeddings < spec.sample_len) {
    throw std::invalid_argument("sample_len exceeds the embedding population");
  }
}

/// Draws ids in [0, n) with P(id) proportional to (id+1)^-s; id 0 is the
/// hottest. Inverse-CDF sampling keeps draws reproducible from the seed.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s, std::uint64_t seed) : rng_(seed) {
    if (n == 0) throw std::invalid_argument("population must be positive");
    cdf_.resize(n);
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -s);
      cdf_[r] = acc;
    }
    for (double& c : cdf_) c /= acc;
    cdf_.back() = 1.0;
  }

  EmbeddingId draw() {
    // 53 random bits -> uniform double in [0, 1).
    const double u =
        static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<EmbeddingId>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
  std::mt19937_64 rng_;
};

/// Source of per-iteration sample batches. reset() rewinds to the first
/// iteration so several mechanisms can replay the identical stream.
class SampleStream {
 public:
  virtual ~SampleStream() = default;
  /// Fills `out` with the next iteration's m*n samples; false at end.
  virtual bool next_iteration(std::vector<EmbeddingSample>& out) = 0;
  virtual void reset() = 0;
  virtual std::size_t max_sample_len() const = 0;
};

/// Zipf-driven generator: every iteration yields m*n samples of
/// `sample_len` distinct ids, duplicates rejected at draw time.
class ZipfStream final : public SampleStream {
 public:
  ZipfStream(const WorkloadSpec& spec, const ClusterConfig& cfg)
      : spec_(spec),
        per_iteration_(cfg.samples_per_iteration()),
        sampler_(spec.total_embeddings, spec.zipf_s, spec.seed) {
    validate(spec_);
  }

  bool next_iteration(std::vector<EmbeddingSample>& out) override {
    if (emitted_ >= spec_.iterations) return false;
    out.resize(per_iteration_);
    for (EmbeddingSample& sample : out) {
      sample.ids.clear();
      sample.ids.reserve(spec_.sample_len);
      while (sample.ids.size() < spec_.sample_len) {
        const EmbeddingId id = sampler_.draw();
        if (std::find(sample.ids.begin(), sample.ids.end(), id) ==
            sample.ids.end()) {
          sample.ids.push_back(id);
        }
      }
    }
    ++emitted_;
    return true;
  }

  void reset() override {
    sampler_ = ZipfSampler(spec_.total_embeddings, spec_.zipf_s, spec_.seed);
    emitted_ = 0;
  }

  std::size_t max_sample_len() const override { return spec_.sample_len; }

 private:
  WorkloadSpec spec_;
  std::size_t per_iteration_;
  ZipfSampler sampler_;
  std::size_t emitted_ = 0;
};

/// Table layout of a multi-table trace: per-table sizes flatten row ids
/// into the single id space by cumulative offsets.
struct TraceSchema {
  struct Table {
    std::string name;
    std::size_t size = 0;
  };
  std::vector<Table> tables;

  std::size_t total_embeddings() const {
    std::size_t total = 0;
    for (const Table& t : tables) total += t.size;
    return total;
  }
};

inline TraceSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file: " + path);
  TraceSchema schema;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    TraceSchema::Table table;
    if (!(ss >> table.name)) continue;  // blank line
    if (!(ss >> table.size) || table.size == 0) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 'table_name size'");
    }
    schema.tables.push_back(std::move(table));
  }
  if (schema.tables.empty()) {
    throw std::runtime_error("schema file declares no tables: " + path);
  }
  return schema;
}

/// Reads a plain-text trace: one sample per line, whitespace-separated
/// decimal ids. With a schema, field i is the row id of table i and is
/// offset into the flat space; duplicates within a line collapse. Lines
/// are grouped into iterations of m*n samples and a trailing partial
/// iteration is dropped with a warning.
class TraceStream final : public SampleStream {
 public:
  TraceStream(const std::string& path, const ClusterConfig& cfg,
              const TraceSchema* schema = nullptr,
              std::ostream* warnings = &std::cerr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);

    std::vector<std::size_t> offsets;
    if (schema != nullptr) {
      std::size_t acc = 0;
      for (const auto& table : schema->tables) {
        offsets.push_back(acc);
        acc += table.size;
      }
    }

    const std::size_t max_allowed = cfg.cache_capacity / static_cast<std::size_t>(cfg.m);
    std::string line;
    std::size_t line_no = 0;
    std::vector<EmbeddingId> raw;
    while (std::getline(in, line)) {
      ++line_no;
      raw.clear();
      std::istringstream ss(line);
      std::string token;
      while (ss >> token) {
        std::uint64_t value = 0;
        try {
          std::size_t consumed = 0;
          value = std::stoull(token, &consumed);
          if (consumed != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
          throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                   ": malformed id '" + token + "'");
        }
        raw.push_back(static_cast<EmbeddingId>(value));
      }
      if (raw.empty()) continue;  // blank line
      if (schema != nullptr) {
        if (raw.size() != offsets.size()) {
          throw std::runtime_error(
              path + ":" + std::to_string(line_no) + ": expected " +
              std::to_string(offsets.size()) + " fields per schema, got " +
              std::to_string(raw.size()));
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
          if (raw[i] >= schema->tables[i].size) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": row id " + std::to_string(raw[i]) +
                                     " exceeds table '" +
                                     schema->tables[i].name + "'");
          }
          raw[i] = static_cast<EmbeddingId>(raw[i] + offsets[i]);
        }
      }
      EmbeddingSample sample = make_sample(raw);
      if (max_allowed > 0 && sample.size() > max_allowed) {
        throw std::runtime_error(
            path + ":" + std::to_string(line_no) + ": sample of " +
            std::to_string(sample.size()) +
            " ids cannot fit the per-worker cache (capacity " +
            std::to_string(cfg.cache_capacity) + ", m " + std::to_string(cfg.m) +
            ")");
      }
      max_sample_len_ = std::max(max_sample_len_, sample.size());
      samples_.push_back(std::move(sample));
    }
    if (samples_.empty()) {
      throw std::runtime_error("trace file holds no samples: " + path);
    }

    per_iteration_ = cfg.samples_per_iteration();
    iterations_ = samples_.size() / per_iteration_;
    dropped_ = samples_.size() - iterations_ * per_iteration_;
    if (dropped_ != 0 && warnings != nullptr) {
      *warnings << "warning: " << path << ": dropping " << dropped_
                << " trailing sample(s) of a partial iteration\n";
    }
  }

  bool next_iteration(std::vector<EmbeddingSample>& out) override {
    if (cursor_ >= iterations_) return false;
    const auto begin = samples_.begin() +
                       static_cast<std::ptrdiff_t>(cursor_ * per_iteration_);
    out.assign(begin, begin + static_cast<std::ptrdiff_t>(per_iteration_));
    ++cursor_;
    return true;
  }

  void reset() override { cursor_ = 0; }

  std::size_t max_sample_len() const override { return max_sample_len_; }
  std::size_t iterations() const { return iterations_; }
  std::size_t dropped_samples() const { return dropped_; }

 private:
  std::vector<EmbeddingSample> samples_;
  std::size_t per_iteration_ = 0;
  std::size_t iterations_ = 0;
  std::size_t dropped_ = 0;
  std::size_t cursor_ = 0;
  std::size_t max_sample_len_ = 0;
};

/// Writes a stream in the trace format, one sample per line. The stream
/// is consumed from its current position.
inline std::size_t write_trace(std::ostream& os, SampleStream& stream) {
  std::vector<EmbeddingSample> batch;
  std::size_t lines = 0;
  while (stream.next_iteration(batch)) {
    for (const EmbeddingSample& sample : batch) {
      for (std::size_t i = 0; i < sample.ids.size(); ++i) {
        if (i != 0) os << ' ';
        os << sample.ids[i];
      }
      os << '\n';
      ++lines;
    }
  }
  return lines;
}

}  // namespace embdispatch

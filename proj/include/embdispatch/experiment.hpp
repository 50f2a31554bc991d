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
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "embdispatch/assign.hpp"
#include "embdispatch/config.hpp"
#include "embdispatch/report_io.hpp"
#include "embdispatch/sim.hpp"
#include "embdispatch/workload.hpp"

namespace embdispatch {

/// Writes the configured synthetic workload as a trace file; returns the
/// number of sample lines.
inline std::size_t cmd_generate(const ExperimentConfig& cfg,
                                const std::string& out_path) {
  if (cfg.use_trace) {
    throw std::runtime_error("generate needs a zipf workload spec");
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write trace file: " + out_path);
  ZipfStream stream(cfg.workload, cfg.cluster);
  const std::size_t lines = write_trace(out, stream);
  if (!out) throw std::runtime_error("write failed: " + out_path);
  return lines;
}

namespace detail {

inline std::unique_ptr<SampleStream> open_stream(const ExperimentConfig& cfg) {
  if (!cfg.use_trace) {
    return std::make_unique<ZipfStream>(cfg.workload, cfg.cluster);
  }
  std::unique_ptr<TraceSchema> schema;
  if (!cfg.schema_path.empty()) {
    schema = std::make_unique<TraceSchema>(load_schema(cfg.schema_path));
  }
  auto stream = std::make_unique<TraceStream>(cfg.trace_path, cfg.cluster,
                                              schema.get());
  // The stream knows the real sample lengths and iteration count now.
  embdispatch::validate(cfg.cluster, stream->max_sample_len());
  if (cfg.warmup >= stream->iterations()) {
    throw std::runtime_error("run.warmup must be smaller than the trace's iterations");
  }
  return stream;
}

inline std::string mechanism_file_stem(const std::string& name) {
  std::string stem = name;
  for (char& c : stem) {
    if (c == ':') c = '_';
  }
  return stem;
}

inline unsigned thread_budget() {
  unsigned budget = 1;
  if (const char* env = std::getenv("EMBDISPATCH_THREADS")) {
    try {
      const long v = std::stol(env);
      budget = v <= 0 ? 0u : static_cast<unsigned>(v);
    } catch (const std::exception&) {
      throw std::runtime_error("EMBDISPATCH_THREADS must be an integer");
    }
  }
  if (budget == 0) {
    budget = std::max(1u, std::thread::hardware_concurrency());
  }
  return budget;
}

}  // namespace detail

struct RunArtifacts {
  std::vector<RunResult> results;
  std::string summary_csv;
  std::vector<std::string> report_paths;
  std::string summary_path;
  bool budget_ok = true;
};

/// Runs every configured mechanism over the identical workload stream,
/// writes one JSONL report per mechanism plus the comparison CSV under
/// `out_dir`, and reports whether all decisions met the latency budget.
/// Mechanism runs may execute concurrently (EMBDISPATCH_THREADS caps the
/// pool); outputs are written serially in configuration order.
inline RunArtifacts cmd_run(const ExperimentConfig& cfg,
                            const std::string& out_dir) {
  cfg.validate();
  RunOptions opt;
  opt.warmup = cfg.warmup;
  opt.training_budget_s = cfg.training_budget_s;
  opt.random_seed = cfg.workload.seed;

  RunArtifacts artifacts;
  artifacts.results.resize(cfg.mechanisms.size());

  const unsigned budget = detail::thread_budget();
  std::size_t next = 0;
  while (next < cfg.mechanisms.size()) {
    const std::size_t batch =
        std::min<std::size_t>(budget, cfg.mechanisms.size() - next);
    std::vector<std::future<RunResult>> futures;
    futures.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const Mechanism mech = cfg.mechanisms[next + i];
      futures.push_back(std::async(std::launch::async, [&cfg, mech, &opt]() {
        auto stream = detail::open_stream(cfg);
        return run(*stream, mech, cfg.cluster, opt);
      }));
    }
    for (std::size_t i = 0; i < batch; ++i) {
      artifacts.results[next + i] = futures[i].get();
    }
    next += batch;
  }

  std::filesystem::create_directories(out_dir);
  for (const RunResult& result : artifacts.results) {
    const std::string path =
        out_dir + "/reports_" +
        detail::mechanism_file_stem(result.summary.mechanism) + ".jsonl";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const IterationReport& rep : result.reports) {
      out << report_jsonl(rep) << '\n';
    }
    artifacts.report_paths.push_back(path);
    if (result.summary.budget_violations != 0) artifacts.budget_ok = false;
  }

  artifacts.summary_csv =
      comparison_csv(artifacts.results, cfg.reference, cfg.cluster);
  artifacts.summary_path = out_dir + "/summary.csv";
  std::ofstream summary(artifacts.summary_path);
  if (!summary) throw std::runtime_error("cannot write " + artifacts.summary_path);
  summary << artifacts.summary_csv;
  return artifacts;
}

/// Standalone solver: read a cost matrix, dispatch with the hybrid, and
/// write the decision file.
inline DispatchDecision cmd_solve(const std::string& matrix_path, int n, int m,
                                  double alpha, std::ostream& out) {
  std::ifstream in(matrix_path);
  if (!in) throw std::runtime_error("cannot open matrix file: " + matrix_path);
  const CostMatrix matrix = read_matrix(in);
  ClusterConfig cfg;
  cfg.n = n;
  cfg.m = m;
  cfg.alpha = alpha;
  cfg.bandwidths_bps.assign(n, 1.0);
  cfg.cache_capacity = 1;  // unused by the solver path
  if (matrix.rows != cfg.samples_per_iteration() ||
      matrix.cols != static_cast<std::size_t>(n)) {
    throw std::runtime_error("matrix is " + std::to_string(matrix.rows) + "x" +
                             std::to_string(matrix.cols) + ", expected " +
                             std::to_string(cfg.samples_per_iteration()) + "x" +
                             std::to_string(n));
  }
  const DispatchDecision decision = ecomix(matrix, cfg);
  write_decision(out, decision, decision_cost(matrix, decision));
  return decision;
}

struct BenchRow {
  std::size_t k = 0;
  double millis = 0.0;
  long long reference_serial_ms = -1;  // -1 when no published figure exists
};

/// Times the exact solver on random dense instances of each order.
inline std::vector<BenchRow> cmd_bench(const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw std::invalid_argument("bench needs at least one size");
  // Published serial timings for k = 8 * batch-size-per-worker.
  const auto reference_ms = [](std::size_t k) -> long long {
    switch (k) {
      case 256: return 9;
      case 512: return 62;
      case 1024: return 528;
      case 2048: return 3360;
      case 4096: return 50976;
      case 8192: return 134986;
      default: return -1;
    }
  };
  std::vector<BenchRow> rows;
  for (std::size_t k : sizes) {
    if (k == 0) throw std::invalid_argument("bench size must be positive");
    SquareCost sq;
    sq.order = k;
    sq.values.resize(k * k);
    std::mt19937_64 rng(0x5eedULL ^ k);
    for (double& v : sq.values) {
      v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const AssignmentResult result = hungarian(sq);
    const auto t1 = std::chrono::steady_clock::now();
    (void)result;
    BenchRow row;
    row.k = k;
    row.millis = std::chrono::duration<double, std::milli>(t1 - t0).count();
    row.reference_serial_ms = reference_ms(k);
    rows.push_back(row);
  }
  return rows;
}

/// Latency must grow with k; the benchmark is meaningless otherwise.
inline bool bench_monotonic(const std::vector<BenchRow>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].k > rows[i - 1].k && rows[i].millis <= rows[i - 1].millis) {
      return false;
    }
  }
  return true;
}

}  // namespace embdispatch

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

#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "embdispatch/experiment.hpp"

namespace {

int run_generate(const std::string& spec_path, const std::string& out_path) {
  const auto cfg = embdispatch::ExperimentConfig::load(spec_path);
  const std::size_t lines = embdispatch::cmd_generate(cfg, out_path);
  std::cout << "wrote " << lines << " samples to " << out_path << '\n';
  return 0;
}

int run_experiment(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = embdispatch::ExperimentConfig::load(config_path);
  const auto artifacts = embdispatch::cmd_run(cfg, out_dir);
  std::cout << artifacts.summary_csv;
  for (const std::string& path : artifacts.report_paths) {
    std::cerr << "reports: " << path << '\n';
  }
  std::cerr << "summary: " << artifacts.summary_path << '\n';
  if (!artifacts.budget_ok) {
    std::cerr << "error: decision latency exceeded the training-time budget\n";
    return 2;
  }
  return 0;
}

int run_solve(const std::string& matrix_path, int n, int m, double alpha,
              const std::string& out_path) {
  if (out_path.empty()) {
    embdispatch::cmd_solve(matrix_path, n, m, alpha, std::cout);
    return 0;
  }
  std::ofstream out(out_path);
  if (!out) {
    std::cerr << "error: cannot write " << out_path << '\n';
    return 1;
  }
  embdispatch::cmd_solve(matrix_path, n, m, alpha, out);
  return 0;
}

int run_bench(const std::vector<std::size_t>& sizes) {
  const auto rows = embdispatch::cmd_bench(sizes);
  std::cout << "k,bpw_at_8_workers,millis,reference_serial_ms\n";
  for (const auto& row : rows) {
    std::cout << row.k << ',' << row.k / 8 << ',' << std::fixed
              << std::setprecision(3) << row.millis << ',';
    if (row.reference_serial_ms >= 0) std::cout << row.reference_serial_ms;
    std::cout << '\n';
  }
  if (!embdispatch::bench_monotonic(rows)) {
    std::cerr << "error: solver latency did not grow with k\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"embedding-sample dispatch simulator"};
  app.require_subcommand(1);

  std::string spec_path, gen_out;
  auto* generate = app.add_subcommand(
      "generate", "write a synthetic zipf workload as a trace file");
  generate->add_option("--spec", spec_path, "config file with the workload spec")
      ->required();
  generate->add_option("--out", gen_out, "trace file to write")->required();

  std::string config_path, out_dir;
  auto* run = app.add_subcommand(
      "run", "simulate every configured mechanism and compare them");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out-dir", out_dir, "directory for reports and summary")
      ->required();

  std::string matrix_path, solve_out;
  int solve_n = 0, solve_m = 0;
  double solve_alpha = 1.0;
  auto* solve = app.add_subcommand(
      "solve", "dispatch one cost matrix with the hybrid solver");
  solve->add_option("--matrix", matrix_path, "cost matrix file")->required();
  solve->add_option("--n", solve_n, "worker count")->required();
  solve->add_option("--m", solve_m, "batch size per worker")->required();
  solve->add_option("--alpha", solve_alpha, "exact-solver fraction");
  solve->add_option("--out", solve_out, "decision file (default stdout)");

  std::vector<std::size_t> sizes{256, 512, 1024};
  auto* bench =
      app.add_subcommand("bench", "time the exact solver at several orders");
  bench->add_option("--sizes", sizes, "comma-separated matrix orders")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return run_generate(spec_path, gen_out);
    if (run->parsed()) return run_experiment(config_path, out_dir);
    if (solve->parsed()) {
      return run_solve(matrix_path, solve_n, solve_m, solve_alpha, solve_out);
    }
    if (bench->parsed()) return run_bench(sizes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <catch_amalgamated.hpp>

#include "embdispatch/workload.hpp"

using namespace embdispatch;

namespace {

ClusterConfig tiny_cluster(int n, int m, std::size_t capacity = 64) {
  ClusterConfig cfg;
  cfg.n = n;
  cfg.m = m;
  cfg.cache_capacity = capacity;
  cfg.bandwidths_bps.assign(n, 5e9);
  return cfg;
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& contents) {
    path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

std::vector<std::vector<EmbeddingSample>> drain(SampleStream& stream) {
  std::vector<std::vector<EmbeddingSample>> all;
  std::vector<EmbeddingSample> batch;
  while (stream.next_iteration(batch)) all.push_back(batch);
  return all;
}

}  // namespace

TEST_CASE("zipf streams replay from their seed") {
  WorkloadSpec spec;
  spec.total_embeddings = 500;
  spec.sample_len = 5;
  spec.iterations = 4;
  spec.seed = 21;
  const ClusterConfig cfg = tiny_cluster(2, 3);
  ZipfStream a(spec, cfg);
  ZipfStream b(spec, cfg);
  auto batches_a = drain(a);
  auto batches_b = drain(b);
  REQUIRE(batches_a.size() == 4);
  for (std::size_t i = 0; i < batches_a.size(); ++i) {
    REQUIRE(batches_a[i].size() == cfg.samples_per_iteration());
    for (std::size_t s = 0; s < batches_a[i].size(); ++s) {
      CHECK(batches_a[i][s].ids == batches_b[i][s].ids);
    }
  }
  // reset rewinds to the exact same stream
  a.reset();
  auto again = drain(a);
  CHECK(again[0][0].ids == batches_a[0][0].ids);
}

TEST_CASE("zipf samples respect the sample invariants") {
  WorkloadSpec spec;
  spec.total_embeddings = 100;
  spec.sample_len = 7;
  spec.iterations = 10;
  spec.seed = 8;
  const ClusterConfig cfg = tiny_cluster(2, 2);
  ZipfStream stream(spec, cfg);
  for (const auto& batch : drain(stream)) {
    for (const EmbeddingSample& sample : batch) {
      REQUIRE(sample.size() == spec.sample_len);
      std::set<EmbeddingId> unique(sample.ids.begin(), sample.ids.end());
      CHECK(unique.size() == sample.size());  // distinct
      CHECK(*unique.rbegin() < spec.total_embeddings);
    }
  }
}

TEST_CASE("heavy skew concentrates on the hottest id") {
  ZipfSampler sampler(1000, 3.0, 42);
  std::vector<std::uint64_t> freq(1000, 0);
  for (int i = 0; i < 10000; ++i) ++freq[sampler.draw()];
  for (std::size_t id = 1; id < freq.size(); ++id) {
    CHECK(freq[0] > freq[id]);
  }
}

TEST_CASE("rank-frequency slope tracks the exponent") {
  const double s = 1.05;
  ZipfSampler sampler(50000, s, 2026);
  std::vector<std::uint64_t> freq(50000, 0);
  for (int i = 0; i < 100000; ++i) ++freq[sampler.draw()];
  std::sort(freq.begin(), freq.end(), std::greater<>());
  // least-squares fit of log(freq) against log(rank) over the head
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int head = 100;
  for (int r = 0; r < head; ++r) {
    REQUIRE(freq[r] > 0);
    const double x = std::log(static_cast<double>(r + 1));
    const double y = std::log(static_cast<double>(freq[r]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (head * sxy - sx * sy) / (head * sxx - sx * sx);
  CHECK(slope == Catch::Approx(-s).margin(0.1));
}

TEST_CASE("draw distribution passes a chi-square check") {
  const std::size_t population = 2000;
  const double s = 1.05;
  ZipfSampler sampler(population, s, 31415);
  const std::size_t draws = 1000000;
  std::vector<std::uint64_t> freq(population, 0);
  for (std::size_t i = 0; i < draws; ++i) ++freq[sampler.draw()];

  // theoretical pmf, recomputed here from scratch
  std::vector<double> pmf(population);
  double norm = 0.0;
  for (std::size_t r = 0; r < population; ++r) {
    pmf[r] = std::pow(static_cast<double>(r + 1), -s);
    norm += pmf[r];
  }
  for (double& p : pmf) p /= norm;

  // individual bins for the head, grouped tail bins with expected >= 5
  double chi2 = 0.0;
  int bins = 0;
  std::size_t r = 0;
  while (r < population) {
    double expected = 0.0;
    std::uint64_t observed = 0;
    while (r < population && expected < 5.0 * 500.0) {
      // chunk until each bin expects at least 2500 draws; keeps the bin
      // count stable and the normal approximation solid
      expected += pmf[r] * static_cast<double>(draws);
      observed += freq[r];
      ++r;
    }
    chi2 += (static_cast<double>(observed) - expected) *
            (static_cast<double>(observed) - expected) / expected;
    ++bins;
  }
  REQUIRE(bins > 10);
  // Wilson-Hilferty upper quantile at significance 0.001
  const double dof = bins - 1;
  const double z = 3.0902;  // Phi^-1(0.999)
  const double threshold =
      dof * std::pow(1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof)), 3.0);
  CHECK(chi2 < threshold);
}

TEST_CASE("a two-line trace with two workers gives one iteration") {
  TempFile file("embdispatch_trace_a.txt", "1 2 3\n4 5 6\n");
  const ClusterConfig cfg = tiny_cluster(2, 1);
  TraceStream stream(file.path.string(), cfg);
  auto batches = drain(stream);
  REQUIRE(batches.size() == 1);
  REQUIRE(batches[0].size() == 2);
  CHECK(batches[0][0].ids == std::vector<EmbeddingId>{1, 2, 3});
  CHECK(batches[0][1].ids == std::vector<EmbeddingId>{4, 5, 6});
  CHECK(stream.dropped_samples() == 0);
}

TEST_CASE("duplicate ids on a trace line collapse") {
  TempFile file("embdispatch_trace_b.txt", "3 3 7\n8 9 10\n");
  const ClusterConfig cfg = tiny_cluster(2, 1);
  TraceStream stream(file.path.string(), cfg);
  auto batches = drain(stream);
  CHECK(batches[0][0].ids == std::vector<EmbeddingId>{3, 7});
}

TEST_CASE("a trailing partial iteration is dropped with a warning") {
  TempFile file("embdispatch_trace_c.txt", "1\n2\n3\n");
  const ClusterConfig cfg = tiny_cluster(2, 1);
  std::ostringstream warnings;
  TraceStream stream(file.path.string(), cfg, nullptr, &warnings);
  auto batches = drain(stream);
  CHECK(batches.size() == 1);
  CHECK(stream.dropped_samples() == 1);
  CHECK(warnings.str().find("dropping 1 trailing") != std::string::npos);
}

TEST_CASE("malformed trace lines name the offender") {
  TempFile file("embdispatch_trace_d.txt", "1 2\nx 4\n");
  const ClusterConfig cfg = tiny_cluster(2, 1);
  try {
    TraceStream stream(file.path.string(), cfg);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    CHECK(what.find(":2:") != std::string::npos);
    CHECK(what.find("x") != std::string::npos);
  }
}

TEST_CASE("an empty trace file is rejected") {
  TempFile file("embdispatch_trace_e.txt", "");
  const ClusterConfig cfg = tiny_cluster(2, 1);
  CHECK_THROWS_AS(TraceStream(file.path.string(), cfg), std::runtime_error);
}

TEST_CASE("schema offsets flatten multi-table traces") {
  TempFile schema_file("embdispatch_schema.txt", "users 10\nitems 20\nads 5\n");
  const TraceSchema schema = load_schema(schema_file.path.string());
  CHECK(schema.total_embeddings() == 35);

  TempFile trace("embdispatch_trace_f.txt", "1 2 3\n9 19 4\n");
  const ClusterConfig cfg = tiny_cluster(2, 1);
  TraceStream stream(trace.path.string(), cfg, &schema);
  auto batches = drain(stream);
  // field 0 keeps its id, field 1 shifts by 10, field 2 by 30
  CHECK(batches[0][0].ids == std::vector<EmbeddingId>{1, 12, 33});
  CHECK(batches[0][1].ids == std::vector<EmbeddingId>{9, 29, 34});

  SECTION("row ids beyond their table are rejected") {
    TempFile bad("embdispatch_trace_g.txt", "10 0 0\n0 0 0\n");
    CHECK_THROWS_AS(TraceStream(bad.path.string(), cfg, &schema),
                    std::runtime_error);
  }
  SECTION("field count must match the schema") {
    TempFile bad("embdispatch_trace_h.txt", "1 2\n3 4\n");
    CHECK_THROWS_AS(TraceStream(bad.path.string(), cfg, &schema),
                    std::runtime_error);
  }
}

TEST_CASE("oversized samples are rejected at load") {
  // capacity 4 with m=2 leaves room for samples of at most 2 ids
  TempFile file("embdispatch_trace_i.txt", "1 2 3\n4 5 6\n7 8 9\n10 11 12\n");
  const ClusterConfig cfg = tiny_cluster(2, 2, 4);
  CHECK_THROWS_AS(TraceStream(file.path.string(), cfg), std::runtime_error);
}

TEST_CASE("generated streams round-trip through the trace reader") {
  WorkloadSpec spec;
  spec.total_embeddings = 300;
  spec.sample_len = 4;
  spec.iterations = 3;
  spec.seed = 17;
  const ClusterConfig cfg = tiny_cluster(2, 2);

  ZipfStream source(spec, cfg);
  const auto path =
      std::filesystem::temp_directory_path() / "embdispatch_roundtrip.txt";
  {
    std::ofstream out(path);
    CHECK(write_trace(out, source) == 12);
  }
  TraceStream parsed(path.string(), cfg);
  source.reset();
  auto want = drain(source);
  auto got = drain(parsed);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    for (std::size_t s = 0; s < want[i].size(); ++s) {
      CHECK(got[i][s].ids == want[i][s].ids);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("workload spec validation") {
  WorkloadSpec spec;
  spec.total_embeddings = 3;
  spec.sample_len = 4;
  CHECK_THROWS_AS(validate(spec), std::invalid_argument);
  spec.sample_len = 0;
  CHECK_THROWS_AS(validate(spec), std::invalid_argument);
  spec.sample_len = 2;
  spec.zipf_s = 0.0;
  CHECK_THROWS_AS(validate(spec), std::invalid_argument);
}

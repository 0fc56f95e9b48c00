/* Copyright 2026 The drdfl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "drdfl/data.hpp"
#include "drdfl/errors.hpp"

using namespace drdfl;
using namespace drdfl::data;

namespace {

TraceDataset tiny_dataset(size_t count = 10, int length = 12, int context = 4, uint64_t seed = 5) {
  SynthParams params;
  return synth_generate(SynthKind::kAr1, count, length, context, params, seed);
}

// Brute force over all permutations, for n <= 7.
double brute_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost[i][perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("validator catches invariant violations") {
  TraceDataset d = tiny_dataset();
  CHECK_NOTHROW(d.validate());
  TraceDataset ragged = d;
  ragged.sequences[0].pop_back();
  CHECK_THROWS_AS(ragged.validate(), std::invalid_argument);
  TraceDataset negative = d;
  negative.sequences[1][2] = -1.0;
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
  TraceDataset badnorm = d;
  badnorm.norm = 0.0;
  CHECK_THROWS_AS(badnorm.validate(), std::invalid_argument);
  TraceDataset badwin = d;
  badwin.context = badwin.length;
  CHECK_THROWS_AS(badwin.validate(), std::invalid_argument);
}

TEST_CASE("synth generation") {
  SUBCASE("seeded determinism") {
    const TraceDataset a = tiny_dataset(8, 12, 4, 42);
    const TraceDataset b = tiny_dataset(8, 12, 4, 42);
    CHECK(a.sequences == b.sequences);
    const TraceDataset c = tiny_dataset(8, 12, 4, 43);
    CHECK(a.sequences != c.sequences);
  }
  SUBCASE("ar1 with zero noise is constant at the mean") {
    SynthParams params;
    params.noise_frac = 0.0;
    const TraceDataset d = synth_generate(SynthKind::kAr1, 3, 10, 4, params, 1);
    for (const auto& seq : d.sequences) {
      for (const double v : seq) CHECK(v == doctest::Approx(params.mean_frac * d.norm).epsilon(1e-12));
    }
  }
  SUBCASE("seasonal autocorrelation peaks at the period") {
    SynthParams params;
    params.period = 7;
    params.noise_frac = 0.01;
    const TraceDataset d = synth_generate(SynthKind::kSeasonal, 40, 64, 8, params, 2);
    const auto acf = [&](int lag) {
      double num = 0.0, den = 0.0;
      for (const auto& seq : d.sequences) {
        const double mean = std::accumulate(seq.begin(), seq.end(), 0.0) / seq.size();
        for (size_t t = 0; t + lag < seq.size(); ++t) {
          num += (seq[t] - mean) * (seq[t + lag] - mean);
        }
        for (const double v : seq) den += (v - mean) * (v - mean);
      }
      return num / den;
    };
    const double at_period = acf(7);
    for (const int lag : {2, 3, 4, 5, 9, 10, 11}) CHECK(at_period > acf(lag));
  }
  SUBCASE("bursty stays within bounds") {
    SynthParams params;
    const TraceDataset d = synth_generate(SynthKind::kBursty, 20, 36, 8, params, 3);
    CHECK_NOTHROW(d.validate());
    CHECK(d.max_value() <= d.norm);
  }
  SUBCASE("bad arguments") {
    SynthParams params;
    CHECK_THROWS_AS(synth_generate(SynthKind::kAr1, 0, 10, 4, params, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_kind_from_string("nope"), std::invalid_argument);
  }
}

TEST_CASE("shift_dataset modes") {
  const TraceDataset d = tiny_dataset(30, 12, 4, 7);
  SUBCASE("mean_scale 1.0 is the identity") {
    const TraceDataset s = shift_dataset(d, ShiftKind::kMeanScale, 1.0);
    CHECK(s.sequences == d.sequences);
  }
  SUBCASE("mean_scale 1.5 scales per-slot means below the clamp") {
    const TraceDataset s = shift_dataset(d, ShiftKind::kMeanScale, 1.5);
    for (int j = 0; j < d.length; ++j) {
      double m0 = 0.0, m1 = 0.0;
      bool clamped = false;
      for (size_t i = 0; i < d.size(); ++i) {
        m0 += d.sequences[i][j];
        m1 += s.sequences[i][j];
        clamped |= d.sequences[i][j] * 1.5 > d.norm * kClampHeadroom;
      }
      if (!clamped) CHECK(m1 == doctest::Approx(1.5 * m0).epsilon(1e-12));
    }
  }
  SUBCASE("variance_scale preserves per-slot means away from the clamp") {
    const TraceDataset s = shift_dataset(d, ShiftKind::kVarianceScale, 2.0);
    for (int j = 0; j < d.length; ++j) {
      double m0 = 0.0, m1 = 0.0;
      for (size_t i = 0; i < d.size(); ++i) {
        m0 += d.sequences[i][j];
        m1 += s.sequences[i][j];
      }
      CHECK(m1 / d.size() == doctest::Approx(m0 / d.size()).epsilon(0.02));
    }
  }
  SUBCASE("mix of a dataset with itself reproduces it up to order") {
    const TraceDataset m = shift_dataset(d, ShiftKind::kMix, 0.0, &d);
    CHECK(m.size() == d.size());
    auto a = m.sequences;
    auto b = d.sequences;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("corruption fields") {
  const TraceDataset d = tiny_dataset(50, 20, 4, 11);
  SUBCASE("cutout p=0 is the identity") {
    const TraceDataset c = corrupt(d, {NoiseKind::kCutout, 0.0, 4}, 1);
    CHECK(c.sequences == d.sequences);
  }
  SUBCASE("gaussian noise std matches the target over 1e5 points") {
    // constant mid-range data keeps every point away from the clamps
    SynthParams params;
    params.noise_frac = 0.0;
    const TraceDataset big = synth_generate(SynthKind::kAr1, 6000, 20, 4, params, 12);
    const double mag = 0.10;
    const TraceDataset c = corrupt(big, {NoiseKind::kGaussian, mag, 4}, 99);
    double sum = 0.0, sum2 = 0.0;
    size_t n = 0;
    const double target = mag * big.max_value();
    for (size_t i = 0; i < big.size(); ++i) {
      for (int j = 0; j < big.length; ++j) {
        const double diff = c.sequences[i][j] - big.sequences[i][j];
        sum += diff;
        sum2 += diff * diff;
        ++n;
      }
    }
    REQUIRE(n >= 100000);
    const double std_hat = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    CHECK(std_hat == doctest::Approx(target).epsilon(0.05));
  }
  SUBCASE("cutout rate lands in a 99 percent binomial interval") {
    const TraceDataset big = tiny_dataset(5000, 20, 4, 13);
    const double p = 0.005;
    const TraceDataset c = corrupt(big, {NoiseKind::kCutout, p, 4}, 100);
    size_t zeroed = 0, total = 0;
    for (size_t i = 0; i < big.size(); ++i) {
      for (int j = 0; j < big.length; ++j) {
        if (big.sequences[i][j] <= 0.0) continue;  // already zero
        ++total;
        if (c.sequences[i][j] == 0.0) ++zeroed;
      }
    }
    const double n = static_cast<double>(total);
    const double half_width = 2.576 * std::sqrt(p * (1 - p) / n);
    const double rate = static_cast<double>(zeroed) / n;
    CHECK(rate > p - half_width);
    CHECK(rate < p + half_width);
  }
  SUBCASE("perlin stays continuous across slots") {
    const TraceDataset c = corrupt(d, {NoiseKind::kPerlin, 0.05, 4}, 101);
    const double bound = 0.05 * d.max_value() * perlin_step_bound(4) + 1e-9;
    bool changed = false;
    for (size_t i = 0; i < d.size(); ++i) {
      for (int j = 0; j + 1 < d.length; ++j) {
        const double delta0 = c.sequences[i][j] - d.sequences[i][j];
        const double delta1 = c.sequences[i][j + 1] - d.sequences[i][j + 1];
        changed |= delta0 != 0.0;
        // perturbation-field jump bound (clamping can only shrink it)
        if (c.sequences[i][j] > 0.0 && c.sequences[i][j + 1] > 0.0) {
          CHECK(std::abs(delta1 - delta0) <= bound);
        }
      }
    }
    CHECK(changed);
  }
  SUBCASE("fields are deterministic in (kind, parameter, seed)") {
    const auto f1 = gaussian_field(4, 10, 77);
    const auto f2 = gaussian_field(4, 10, 77);
    CHECK(f1 == f2);
    const auto m1 = cutout_mask(4, 10, 0.3, 78);
    const auto m2 = cutout_mask(4, 10, 0.3, 78);
    CHECK(m1 == m2);
    const auto p1 = perlin_field(4, 10, 3, 79);
    const auto p2 = perlin_field(4, 10, 3, 79);
    CHECK(p1 == p2);
  }
}

TEST_CASE("split") {
  const TraceDataset d = tiny_dataset(100, 12, 4, 21);
  SUBCASE("whole dataset") {
    const auto parts = split(d, {1.0}, 5);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0].size() == 100);
  }
  SUBCASE("half and half is disjoint") {
    const auto parts = split(d, {0.5, 0.5}, 5);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].size() == 50);
    CHECK(parts[1].size() == 50);
    auto all = parts[0].sequences;
    all.insert(all.end(), parts[1].sequences.begin(), parts[1].sequences.end());
    std::sort(all.begin(), all.end());
    auto orig = d.sequences;
    std::sort(orig.begin(), orig.end());
    CHECK(all == orig);
  }
  SUBCASE("seeded determinism") {
    const auto a = split(d, {0.3, 0.3}, 6);
    const auto b = split(d, {0.3, 0.3}, 6);
    CHECK(a[0].sequences == b[0].sequences);
    CHECK(a[1].sequences == b[1].sequences);
  }
  SUBCASE("fractions above one fail") {
    CHECK_THROWS_AS(split(d, {0.7, 0.7}, 5), std::invalid_argument);
  }
}

TEST_CASE("w1_empirical exact cases") {
  CHECK(w1_empirical({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
  // constant shift delta: W1 = delta
  CHECK(w1_empirical({1, 2, 3, 9}, {3, 4, 5, 11}) == doctest::Approx(2.0).epsilon(1e-12));
  // unequal sizes: {0, 1} vs {0.5}: integral of the quantile gap = 0.5
  CHECK(w1_empirical({0.0, 1.0}, {0.5}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("assignment_cost matches brute force on random instances") {
  RandomStream s(31);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(s.uniform_int(0, 4));
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (auto& row : cost)
      for (auto& v : row) v = s.uniform() * 10.0;
    CHECK(assignment_cost(cost) == doctest::Approx(brute_assignment(cost)).epsilon(1e-10));
  }
}

TEST_CASE("wasserstein_distance") {
  const TraceDataset d = tiny_dataset(40, 12, 4, 41);
  SUBCASE("identity of indiscernibles") {
    CHECK(wasserstein_distance(d, d, DistanceMethod::kMarginalW1) == doctest::Approx(0.0));
    CHECK(wasserstein_distance(d, d, DistanceMethod::kOtL2) == doctest::Approx(0.0));
  }
  SUBCASE("constant shift under marginal_w1") {
    TraceDataset shifted = d;
    const double delta = 123.5;
    for (auto& seq : shifted.sequences)
      for (double& v : seq) v += delta;
    CHECK(wasserstein_distance(d, shifted, DistanceMethod::kMarginalW1) ==
          doctest::Approx(delta).epsilon(1e-9));
  }
  SUBCASE("two one-point datasets under ot_l2") {
    TraceDataset a = d, b = d;
    a.sequences = {std::vector<double>(12, 10.0)};
    b.sequences = {std::vector<double>(12, 14.0)};
    CHECK(wasserstein_distance(a, b, DistanceMethod::kOtL2) ==
          doctest::Approx(std::sqrt(12 * 16.0)).epsilon(1e-12));
  }
  SUBCASE("symmetry and triangle inequality for ot_l2") {
    for (int rep = 0; rep < 20; ++rep) {
      const TraceDataset a = tiny_dataset(12, 8, 3, 100 + rep);
      const TraceDataset b = tiny_dataset(12, 8, 3, 200 + rep);
      const TraceDataset c = tiny_dataset(12, 8, 3, 300 + rep);
      const double ab = wasserstein_distance(a, b, DistanceMethod::kOtL2);
      const double ba = wasserstein_distance(b, a, DistanceMethod::kOtL2);
      const double bc = wasserstein_distance(b, c, DistanceMethod::kOtL2);
      const double ac = wasserstein_distance(a, c, DistanceMethod::kOtL2);
      CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
      CHECK(ac <= ab + bc + 1e-9);
      CHECK(ab >= 0.0);
    }
  }
  SUBCASE("empty dataset fails") {
    TraceDataset empty = d;
    empty.sequences.clear();
    CHECK_THROWS_AS(wasserstein_distance(empty, d), std::invalid_argument);
  }
}

TEST_CASE("dataset file round trip") {
  const TraceDataset d = tiny_dataset(7, 12, 4, 61);
  const std::string path = temp_path("drdfl_test_dataset.csv");
  save_dataset(d, path);
  const TraceDataset back = load_dataset(path);
  CHECK(back.length == d.length);
  CHECK(back.context == d.context);
  CHECK(back.horizon == d.horizon);
  CHECK(back.norm == d.norm);
  CHECK(back.sequences == d.sequences);  // %.17g round-trips doubles
  std::filesystem::remove(path);
}

TEST_CASE("trace ingestion") {
  SUBCASE("hand-built five-request fixture") {
    const std::string path = temp_path("drdfl_test_trace.csv");
    {
      std::ofstream out(path);
      out << "TIMESTAMP,ContextTokens,GeneratedTokens\n";
      // 60 s slots from t=0: slot0 has 100+250, slot1 has 30, slot2 empty,
      // slot3 has 70+5
      out << "0,40,60\n";
      out << "59.5,200,50\n";
      out << "60.0,10,20\n";
      out << "180.0,50,20\n";
      out << "239.9,2,3\n";
    }
    IngestStats stats;
    const TraceDataset d = ingest_traces(path, 60.0, 1, 3, 4e5, &stats);
    CHECK(stats.rows_parsed == 5);
    CHECK(stats.rows_skipped == 0);
    REQUIRE(d.size() == 1);
    CHECK(d.sequences[0] == std::vector<double>{350.0, 30.0, 0.0, 75.0});
    std::filesystem::remove(path);
  }
  SUBCASE("datetime timestamps aggregate the same way") {
    const std::string path = temp_path("drdfl_test_trace2.csv");
    {
      std::ofstream out(path);
      out << "TIMESTAMP,ContextTokens,GeneratedTokens\n";
      out << "2023-11-16 18:15:00.000,40,60\n";
      out << "2023-11-16 18:15:59.500,200,50\n";
      out << "2023-11-16 18:16:00,10,20\n";
      out << "2023-11-16 18:18:00,50,20\n";
      out << "2023-11-16 18:18:59.9,2,3\n";
    }
    const TraceDataset d = ingest_traces(path, 60.0, 1, 3);
    REQUIRE(d.size() == 1);
    CHECK(d.sequences[0] == std::vector<double>{350.0, 30.0, 0.0, 75.0});
    std::filesystem::remove(path);
  }
  SUBCASE("bad rows are skipped and counted") {
    const std::string path = temp_path("drdfl_test_trace3.csv");
    {
      std::ofstream out(path);
      out << "ts,ctx,gen\n";
      out << "not-a-time,1,2\n";
      out << "5,xyz,2\n";
      out << "5,1\n";
      for (int i = 0; i < 240; ++i) out << i << ",1,1\n";
    }
    IngestStats stats;
    const TraceDataset d = ingest_traces(path, 60.0, 1, 3, 4e5, &stats);
    CHECK(stats.rows_skipped == 3);
    CHECK(d.size() == 1);
    std::filesystem::remove(path);
  }
  SUBCASE("header-only file fails") {
    const std::string path = temp_path("drdfl_test_trace4.csv");
    {
      std::ofstream out(path);
      out << "TIMESTAMP,ContextTokens,GeneratedTokens\n";
    }
    CHECK_THROWS_AS(ingest_traces(path, 60.0, 8, 28), drdfl::IngestError);
    std::filesystem::remove(path);
  }
}

TEST_SUITE_END();

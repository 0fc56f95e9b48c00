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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drdfl/random.hpp"

namespace drdfl::data {

constexpr const char* kDatasetMagic = "DRDFL-DATA-v1";
constexpr double kClampHeadroom = 1.25;  // shifted/corrupted values may exceed a_max by this factor

struct DatasetMeta {
  std::string label;
  double slot_seconds = 60.0;
  uint64_t seed = 0;
};

// Fixed-length non-negative workload sequences plus normalization state; the
// sample space of the training and generated distributions.
struct TraceDataset {
  std::vector<std::vector<double>> sequences;  // each of length L, tokens per slot
  int length = 0;                              // L = W + N
  int context = 8;                             // W
  int horizon = 28;                            // N
  double norm = 4e5;                           // normalization constant (a_max)
  DatasetMeta meta;

  size_t size() const { return sequences.size(); }
  // Throws std::invalid_argument on any invariant violation (ragged lengths,
  // negative values, bad norm, W + N != L).
  void validate() const;
  double max_value() const;
};

enum class NoiseKind { kGaussian, kCutout, kPerlin };

NoiseKind noise_kind_from_string(const std::string& name);
std::string to_string(NoiseKind kind);

struct CorruptionSpec {
  NoiseKind kind = NoiseKind::kCutout;
  double parameter = 0.005;  // mask probability for cutout, magnitude fraction otherwise
  int perlin_lattice = 4;    // lattice spacing in slots
};

// Shared perturbation fields. Both data::corrupt and baselines::augment draw
// from these, so equal (kind, parameter, seed) produce identical fields.
std::vector<std::vector<double>> gaussian_field(size_t count, int length, uint64_t seed);
std::vector<std::vector<uint8_t>> cutout_mask(size_t count, int length, double prob, uint64_t seed);
// Classic 1-D gradient noise with smoothstep interpolation, zero at lattice
// nodes, values in [-1, 1].
std::vector<std::vector<double>> perlin_field(size_t count, int length, int lattice, uint64_t seed);
// Largest possible |value(x+1) - value(x)| of the unscaled Perlin field.
double perlin_step_bound(int lattice);

// Applies a perturbation field in place on a copy: gaussian and perlin add
// parameter*max_value-scaled noise, cutout zeroes masked points. Result is
// clamped to [0, norm*kClampHeadroom].
TraceDataset apply_noise(const TraceDataset& d, const CorruptionSpec& spec, uint64_t seed);

// --- generation -------------------------------------------------------------

enum class SynthKind { kAr1, kSeasonal, kBursty };
SynthKind synth_kind_from_string(const std::string& name);

struct SynthParams {
  double mean_frac = 0.25;   // long-run mean as a fraction of norm
  double noise_frac = 0.04;  // innovation std as a fraction of norm
  double phi = 0.9;          // AR(1) pull toward the mean
  double amp_frac = 0.15;    // seasonal amplitude as a fraction of norm
  int period = 7;            // seasonal period in slots
  double spike_prob = 0.08;  // bursty: per-slot spike probability
  double spike_frac = 0.5;   // bursty: mean spike height as a fraction of norm
};

TraceDataset synth_generate(SynthKind kind, size_t count, int length, int context, const SynthParams& params,
                            uint64_t seed, double norm = 4e5);

// --- transformation ---------------------------------------------------------

enum class ShiftKind { kMeanScale, kVarianceScale, kMix };
ShiftKind shift_kind_from_string(const std::string& name);

// mean_scale multiplies every value by amount; variance_scale rescales the
// per-slot spread around the per-slot mean by sqrt(amount); mix takes the
// first half of d and the second half of other. Values are clamped to
// [0, norm*kClampHeadroom].
TraceDataset shift_dataset(const TraceDataset& d, ShiftKind kind, double amount,
                           const TraceDataset* other = nullptr);

// Corruption injection at the evaluation defaults: cutout p=0.005, perlin
// 0.05*max, gaussian 0.10*max.
TraceDataset corrupt(const TraceDataset& d, const CorruptionSpec& spec, uint64_t seed);

// Seeded disjoint partition by sequence; fractions must be positive and sum
// to at most 1 (plus rounding slack).
std::vector<TraceDataset> split(const TraceDataset& d, const std::vector<double>& fractions, uint64_t seed);

// --- distances --------------------------------------------------------------

enum class DistanceMethod { kMarginalW1, kOtL2 };
DistanceMethod distance_method_from_string(const std::string& name);

// marginal_w1: exact 1-D Wasserstein-1 between the per-slot empirical
// marginals, averaged over slots. ot_l2: exact optimal assignment between
// equal-size subsamples under squared-l2 cost, reported as sqrt(mean cost).
// Token units either way.
double wasserstein_distance(const TraceDataset& a, const TraceDataset& b,
                            DistanceMethod method = DistanceMethod::kMarginalW1,
                            size_t ot_subsample_cap = 256);

// Exact W1 between two 1-D empirical distributions (not necessarily the same
// size); sorted-sample / quantile-function formula.
double w1_empirical(std::vector<double> a, std::vector<double> b);

// Minimum-cost perfect matching value for a square cost matrix (Jonker-
// Volgenant shortest augmenting path). Exposed for the ot_l2 path and tests.
double assignment_cost(const std::vector<std::vector<double>>& cost);

// --- ingestion and files ----------------------------------------------------

struct IngestStats {
  size_t rows_parsed = 0;
  size_t rows_skipped = 0;
  size_t slots = 0;
};

// Reads a request-level CSV (header row; timestamp, context tokens, generated
// tokens), sums tokens per request, aggregates into slots of slot_seconds,
// and segments into non-overlapping length-(W+N) sequences. Timestamps may be
// numeric seconds or "YYYY-MM-DD HH:MM:SS[.frac]".
TraceDataset ingest_traces(const std::string& path, double slot_seconds, int context, int horizon,
                           double norm = 4e5, IngestStats* stats = nullptr);

void save_dataset(const TraceDataset& d, const std::string& path);
TraceDataset load_dataset(const std::string& path);

}  // namespace drdfl::data

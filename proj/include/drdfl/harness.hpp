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

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "drdfl/baselines.hpp"
#include "drdfl/trainer.hpp"

namespace drdfl::harness {

enum class Method { k3d, kDfl, kKlDro, kWDro, kDa };
Method method_from_string(const std::string& name);
std::string to_string(Method m);

// The full experiment grid for one method: datasets, seeds, and every module
// sub-config. Defaults are the case-study settings, so an empty JSON object
// parses into a config that reproduces them.
struct ExperimentConfig {
  Method method = Method::k3d;
  std::vector<uint64_t> seeds{1};
  std::string output_dir = "runs";
  std::string train_dataset;            // dataset file path
  std::vector<std::string> test_datasets;
  std::string diffusion_checkpoint;     // optional pre-trained reference model

  trainer::OuterConfig outer;           // includes prov/pred/diffusion/imax/dual configs
  baselines::BaselineTrainConfig baseline;
  baselines::AugmentConfig augment;

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Hash of the canonical JSON dump; names the run directory.
  std::string hash() const;
  // Throws ConfigError when referenced files are missing or settings are
  // inconsistent.
  void validate() const;
};

struct SeedResult {
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
  long peak_rss_kb = 0;
  std::vector<provisioning::RegretReport> reports;  // one per test dataset
};

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  Method method = Method::kDfl;
  std::string run_dir;
  std::vector<SeedResult> seeds;
  nlohmann::json config;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

// Trains and evaluates every seed of the config; resumable at seed
// granularity (a completed seed directory is loaded, not retrained). Seed
// failures are recorded and the remaining seeds continue; if every seed
// fails the manifest is still written and failed() is true.
RunManifest run_experiment(const ExperimentConfig& cfg);

bool all_seeds_failed(const RunManifest& m);

// Writes regret.csv / regret.txt with one row per method, one column per
// dataset plus Avg and Max, and ratio.csv / ratio.txt normalized by the DFL
// row (skipped with a warning when no DFL manifest is present). Cell values
// are means over completed seeds.
void report_tables(const std::vector<RunManifest>& manifests, const std::string& out_dir);

struct SweepPoint {
  double value = 0.0;
  bool failed = false;
  std::string error;
  std::vector<std::pair<std::string, double>> regret_per_dataset;  // mean over seeds
  double average_regret = 0.0;
};

struct SweepResult {
  std::string parameter;
  std::vector<SweepPoint> points;
  std::vector<RunManifest> manifests;
};

// Runs run_experiment once per parameter value (epsilon | diffusion_width |
// tail_len) and writes a regret-vs-parameter curve (SVG + CSV).
SweepResult sweep(const ExperimentConfig& cfg, const std::string& parameter,
                  const std::vector<double>& values, const std::string& out_dir);

// Line plot helper (static SVG, no display server).
void write_curve_svg(const std::string& path, const std::string& x_label, const std::string& y_label,
                     const std::vector<double>& xs,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace drdfl::harness

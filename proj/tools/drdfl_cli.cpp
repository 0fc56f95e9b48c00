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

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "drdfl/errors.hpp"
#include "drdfl/harness.hpp"
#include "drdfl/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

using drdfl::harness::ExperimentConfig;
using nlohmann::json;

std::string output_root() {
  const char* env = std::getenv("DRDFL_OUTPUT_ROOT");
  return env != nullptr ? env : "runs";
}

ExperimentConfig load_config(const std::string& path) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw drdfl::ConfigError("cannot open config file: " + path);
    in >> j;
  }
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  if (cfg.output_dir == "runs") cfg.output_dir = output_root();
  return cfg;
}

drdfl::harness::RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw drdfl::ConfigError("cannot open manifest: " + path);
  json j;
  in >> j;
  return drdfl::harness::RunManifest::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributionally robust decision-focused training for LLM capacity provisioning"};
  app.set_version_flag("--version", drdfl::kVersion);
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Aggregate a request-level trace CSV into a dataset file");
  std::string ingest_in, ingest_out;
  double slot_seconds = 60.0;
  int ctx = 8, horizon = 28;
  double norm = 4e5;
  ingest->add_option("--input", ingest_in, "trace CSV (timestamp, context tokens, generated tokens)")
      ->required();
  ingest->add_option("--output", ingest_out)->required();
  ingest->add_option("--slot-seconds", slot_seconds);
  ingest->add_option("--context", ctx);
  ingest->add_option("--horizon", horizon);
  ingest->add_option("--norm", norm);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic workload dataset");
  std::string synth_kind = "ar1", synth_out;
  size_t synth_count = 200;
  int synth_len = 36, synth_ctx = 8;
  uint64_t synth_seed = 1;
  double mean_frac = 0.25, noise_frac = 0.04, phi = 0.9, amp_frac = 0.15, spike_prob = 0.08;
  int period = 7;
  synth->add_option("--kind", synth_kind, "ar1 | seasonal | bursty");
  synth->add_option("--count", synth_count);
  synth->add_option("--length", synth_len);
  synth->add_option("--context", synth_ctx);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--norm", norm);
  synth->add_option("--mean-frac", mean_frac);
  synth->add_option("--noise-frac", noise_frac);
  synth->add_option("--phi", phi);
  synth->add_option("--amp-frac", amp_frac);
  synth->add_option("--period", period);
  synth->add_option("--spike-prob", spike_prob);
  synth->add_option("--output", synth_out)->required();

  // train-diffusion
  auto* traindiff = app.add_subcommand("train-diffusion", "Train the reference diffusion model");
  std::string td_config, td_data, td_out;
  uint64_t td_seed = 1;
  traindiff->add_option("--config", td_config);
  traindiff->add_option("--data", td_data)->required();
  traindiff->add_option("--output", td_out)->required();
  traindiff->add_option("--seed", td_seed);

  // train
  auto* train = app.add_subcommand("train", "Train by a method and evaluate on the test datasets");
  std::string train_config, train_method, train_ds, train_outdir;
  std::vector<std::string> train_tests;
  std::vector<uint64_t> train_seeds;
  bool dump_config = false;
  train->add_option("--config", train_config, "experiment config JSON");
  train->add_option("--method", train_method, "3d | dfl | kl-dro | w-dro | da");
  train->add_option("--train-data", train_ds);
  train->add_option("--test-data", train_tests);
  train->add_option("--seeds", train_seeds);
  train->add_option("--output-dir", train_outdir);
  train->add_flag("--dump-config", dump_config, "print the effective config and exit");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Evaluate a predictor checkpoint on datasets");
  std::string eval_ckpt, eval_config;
  std::vector<std::string> eval_tests;
  std::string eval_train;
  eval->add_option("--predictor", eval_ckpt)->required();
  eval->add_option("--config", eval_config);
  eval->add_option("--test-data", eval_tests)->required();
  eval->add_option("--train-data", eval_train, "reference set for the shift distance");

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "Inject cutout/perlin/gaussian noise into a dataset");
  std::string cor_in, cor_out, cor_kind = "cutout";
  double cor_param = -1.0;
  int cor_lattice = 4;
  uint64_t cor_seed = 1;
  corrupt->add_option("--input", cor_in)->required();
  corrupt->add_option("--output", cor_out)->required();
  corrupt->add_option("--kind", cor_kind, "cutout | perlin | gaussian");
  corrupt->add_option("--param", cor_param, "mask probability or magnitude fraction");
  corrupt->add_option("--lattice", cor_lattice);
  corrupt->add_option("--seed", cor_seed);

  // distance
  auto* dist = app.add_subcommand("distance", "Wasserstein distance between two datasets");
  std::string dist_a, dist_b, dist_method = "marginal_w1";
  dist->add_option("--a", dist_a)->required();
  dist->add_option("--b", dist_b)->required();
  dist->add_option("--method", dist_method, "marginal_w1 | ot_l2");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the experiment over a parameter range");
  std::string sweep_config, sweep_param = "epsilon", sweep_out;
  std::vector<double> sweep_values;
  sweep_cmd->add_option("--config", sweep_config)->required();
  sweep_cmd->add_option("--parameter", sweep_param, "epsilon | diffusion_width | tail_len");
  sweep_cmd->add_option("--values", sweep_values)->required();
  sweep_cmd->add_option("--output-dir", sweep_out);

  // report
  auto* report = app.add_subcommand("report", "Render regret and ratio tables from run manifests");
  std::vector<std::string> report_manifests;
  std::string report_out = "report";
  report->add_option("--manifest", report_manifests)->required();
  report->add_option("--output-dir", report_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      drdfl::data::IngestStats stats;
      const auto d = drdfl::data::ingest_traces(ingest_in, slot_seconds, ctx, horizon, norm, &stats);
      drdfl::data::save_dataset(d, ingest_out);
      std::cout << "rows=" << stats.rows_parsed << " skipped=" << stats.rows_skipped
                << " slots=" << stats.slots << " sequences=" << d.size() << "\n";
      return kExitOk;
    }
    if (*synth) {
      drdfl::data::SynthParams params;
      params.mean_frac = mean_frac;
      params.noise_frac = noise_frac;
      params.phi = phi;
      params.amp_frac = amp_frac;
      params.period = period;
      params.spike_prob = spike_prob;
      const auto d = drdfl::data::synth_generate(drdfl::data::synth_kind_from_string(synth_kind),
                                                 synth_count, synth_len, synth_ctx, params, synth_seed,
                                                 norm);
      drdfl::data::save_dataset(d, synth_out);
      std::cout << "sequences=" << d.size() << " length=" << d.length << "\n";
      return kExitOk;
    }
    if (*traindiff) {
      const ExperimentConfig cfg = load_config(td_config);
      const auto dataset = drdfl::data::load_dataset(td_data);
      auto dcfg = cfg.outer.diff;
      dcfg.init_seed = drdfl::mix64(td_seed, drdfl::hash_tag("diff-init"));
      drdfl::RandomStream stream(td_seed);
      const auto result = drdfl::diffusion::train_reference(dataset, dcfg, stream);
      drdfl::diffusion::save_checkpoint(result.model, td_out);
      std::cout << "epochs=" << result.epoch_losses.size() << " first_loss=" << result.epoch_losses.front()
                << " last_loss=" << result.epoch_losses.back() << "\n";
      return kExitOk;
    }
    if (*train) {
      ExperimentConfig cfg = load_config(train_config);
      if (!train_method.empty()) cfg.method = drdfl::harness::method_from_string(train_method);
      if (!train_ds.empty()) cfg.train_dataset = train_ds;
      if (!train_tests.empty()) cfg.test_datasets = train_tests;
      if (!train_seeds.empty()) cfg.seeds = train_seeds;
      if (!train_outdir.empty()) cfg.output_dir = train_outdir;
      if (dump_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return kExitOk;
      }
      const auto manifest = drdfl::harness::run_experiment(cfg);
      std::cout << "run_dir=" << manifest.run_dir << "\n";
      for (const auto& s : manifest.seeds) {
        if (s.failed) {
          std::cout << "seed " << s.seed << " FAILED: " << s.error << "\n";
          continue;
        }
        std::cout << "seed " << s.seed << " wall=" << s.wall_seconds << "s rss=" << s.peak_rss_kb << "kB";
        for (const auto& r : s.reports) std::cout << " " << r.dataset_id << "=" << r.regret;
        std::cout << "\n";
      }
      return drdfl::harness::all_seeds_failed(manifest) ? kExitRuntime : kExitOk;
    }
    if (*eval) {
      const ExperimentConfig cfg = load_config(eval_config);
      const auto pred = drdfl::predictor::load_checkpoint(eval_ckpt);
      std::optional<drdfl::data::TraceDataset> train_set;
      if (!eval_train.empty()) train_set = drdfl::data::load_dataset(eval_train);
      for (const auto& path : eval_tests) {
        const auto test = drdfl::data::load_dataset(path);
        auto rep = drdfl::trainer::evaluate_regret(pred, test, cfg.outer.prov);
        if (train_set.has_value()) rep.shift_distance = drdfl::data::wasserstein_distance(test, *train_set);
        nlohmann::json line{{"dataset", rep.dataset_id},
                            {"regret", rep.regret},
                            {"defined", rep.defined},
                            {"mean_alg_reward", rep.mean_alg_reward},
                            {"mean_oracle_reward", rep.mean_oracle_reward},
                            {"shift_distance", rep.shift_distance}};
        std::cout << line.dump() << "\n";
      }
      return kExitOk;
    }
    if (*corrupt) {
      const auto d = drdfl::data::load_dataset(cor_in);
      drdfl::data::CorruptionSpec spec;
      spec.kind = drdfl::data::noise_kind_from_string(cor_kind);
      if (cor_param < 0.0) {
        spec.parameter = spec.kind == drdfl::data::NoiseKind::kCutout  ? 0.005
                         : spec.kind == drdfl::data::NoiseKind::kPerlin ? 0.05
                                                                        : 0.10;
      } else {
        spec.parameter = cor_param;
      }
      spec.perlin_lattice = cor_lattice;
      drdfl::data::save_dataset(drdfl::data::corrupt(d, spec, cor_seed), cor_out);
      return kExitOk;
    }
    if (*dist) {
      const auto a = drdfl::data::load_dataset(dist_a);
      const auto b = drdfl::data::load_dataset(dist_b);
      const double v =
          drdfl::data::wasserstein_distance(a, b, drdfl::data::distance_method_from_string(dist_method));
      std::cout << v << "\n";
      return kExitOk;
    }
    if (*sweep_cmd) {
      ExperimentConfig cfg = load_config(sweep_config);
      if (sweep_out.empty()) sweep_out = cfg.output_dir + "/sweep";
      const auto result = drdfl::harness::sweep(cfg, sweep_param, sweep_values, sweep_out);
      for (const auto& p : result.points) {
        std::cout << sweep_param << "=" << p.value << " ";
        if (p.failed) {
          std::cout << "FAILED: " << p.error << "\n";
        } else {
          std::cout << "avg_regret=" << p.average_regret << "\n";
        }
      }
      return kExitOk;
    }
    if (*report) {
      std::vector<drdfl::harness::RunManifest> manifests;
      for (const auto& path : report_manifests) manifests.push_back(load_manifest(path));
      drdfl::harness::report_tables(manifests, report_out);
      std::cout << "tables written to " << report_out << "\n";
      return kExitOk;
    }
  } catch (const drdfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

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

#include "drdfl/harness.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "drdfl/errors.hpp"
#include "drdfl/version.hpp"

namespace drdfl::harness {

namespace fs = std::filesystem;
using nlohmann::json;

Method method_from_string(const std::string& name) {
  if (name == "3d") return Method::k3d;
  if (name == "dfl") return Method::kDfl;
  if (name == "kl-dro") return Method::kKlDro;
  if (name == "w-dro") return Method::kWDro;
  if (name == "da") return Method::kDa;
  throw ConfigError("unknown method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::k3d: return "3d";
    case Method::kDfl: return "dfl";
    case Method::kKlDro: return "kl-dro";
    case Method::kWDro: return "w-dro";
    case Method::kDa: return "da";
  }
  return "?";
}

namespace {

json prov_to_json(const provisioning::ProvisioningParams& p) {
  return {{"A", p.a_curve},   {"B", p.b_scale}, {"gamma", p.gamma},   {"omega", p.omega},
          {"p_act", p.p_act}, {"p_idle", p.p_idle}, {"a_min", p.a_min}, {"a_max", p.a_max},
          {"n_slots", p.n_slots}};
}

provisioning::ProvisioningParams prov_from_json(const json& j) {
  provisioning::ProvisioningParams p;
  p.a_curve = j.value("A", p.a_curve);
  p.b_scale = j.value("B", p.b_scale);
  p.gamma = j.value("gamma", p.gamma);
  p.omega = j.value("omega", p.omega);
  p.p_act = j.value("p_act", p.p_act);
  p.p_idle = j.value("p_idle", p.p_idle);
  p.a_min = j.value("a_min", p.a_min);
  p.a_max = j.value("a_max", p.a_max);
  p.n_slots = j.value("n_slots", p.n_slots);
  return p;
}

json pred_cfg_to_json(const predictor::PredictorConfig& c) {
  return {{"hidden", c.hidden}, {"context", c.context}, {"horizon", c.horizon}, {"norm", c.norm}};
}

predictor::PredictorConfig pred_cfg_from_json(const json& j) {
  predictor::PredictorConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.context = j.value("context", c.context);
  c.horizon = j.value("horizon", c.horizon);
  c.norm = j.value("norm", c.norm);
  return c;
}

json pred_train_to_json(const predictor::TrainConfig& c) {
  return {{"objective", c.objective == predictor::Objective::kDfl ? "dfl" : "mse"},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"smooth_clip", c.dfl.smooth_clip},
          {"zero_order", c.dfl.zero_order}};
}

predictor::TrainConfig pred_train_from_json(const json& j, const predictor::TrainConfig& defaults) {
  predictor::TrainConfig c = defaults;
  c.objective = predictor::objective_from_string(
      j.value("objective", c.objective == predictor::Objective::kDfl ? "dfl" : "mse"));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.dfl.smooth_clip = j.value("smooth_clip", c.dfl.smooth_clip);
  c.dfl.zero_order = j.value("zero_order", c.dfl.zero_order);
  return c;
}

json diff_to_json(const diffusion::DiffusionTrainConfig& c) {
  return {{"t_max", c.t_max}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}, {"arch", c.arch},
          {"epochs", c.epochs}, {"batch", c.batch}, {"lr", c.lr}};
}

diffusion::DiffusionTrainConfig diff_from_json(const json& j) {
  diffusion::DiffusionTrainConfig c;
  c.t_max = j.value("t_max", c.t_max);
  c.beta_min = j.value("beta_min", c.beta_min);
  c.beta_max = j.value("beta_max", c.beta_max);
  c.arch = j.value("arch", c.arch);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  return c;
}

json ppo_to_json(const imax::PpoConfig& c) {
  return {{"kappa", c.kappa},   {"tail_len", c.tail_len},   {"inner_epochs", c.inner_epochs},
          {"batch", c.batch},   {"reward_standardize", c.reward_standardize},
          {"tail_sigma2", c.tail_sigma2}, {"lr", c.lr}, {"estimator", c.estimator},
          {"j_batch", c.j_batch}};
}

imax::PpoConfig ppo_from_json(const json& j) {
  imax::PpoConfig c;
  c.kappa = j.value("kappa", c.kappa);
  c.tail_len = j.value("tail_len", c.tail_len);
  c.inner_epochs = j.value("inner_epochs", c.inner_epochs);
  c.batch = j.value("batch", c.batch);
  c.reward_standardize = j.value("reward_standardize", c.reward_standardize);
  c.tail_sigma2 = j.value("tail_sigma2", c.tail_sigma2);
  c.lr = j.value("lr", c.lr);
  c.estimator = j.value("estimator", c.estimator);
  c.j_batch = j.value("j_batch", c.j_batch);
  return c;
}

json dual_to_json(const imax::DualConfig& c) {
  return {{"alpha0", c.alpha0}, {"eta", c.eta}, {"epsilon", c.epsilon},
          {"budget_mode", c.budget_mode}, {"iterations", c.iterations}};
}

imax::DualConfig dual_from_json(const json& j) {
  imax::DualConfig c;
  c.alpha0 = j.value("alpha0", c.alpha0);
  c.eta = j.value("eta", c.eta);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.budget_mode = j.value("budget_mode", c.budget_mode);
  c.iterations = j.value("iterations", c.iterations);
  return c;
}

long peak_rss_kb() {
  struct rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return ru.ru_maxrss;
}

void atomic_write_json(const std::string& path, const json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

json report_to_json(const provisioning::RegretReport& r) {
  return {{"dataset", r.dataset_id},
          {"regret", r.defined ? json(r.regret) : json()},
          {"defined", r.defined},
          {"mean_alg_reward", r.mean_alg_reward},
          {"mean_oracle_reward", r.mean_oracle_reward},
          {"shift_distance", r.shift_distance}};
}

provisioning::RegretReport report_from_json(const json& j) {
  provisioning::RegretReport r;
  r.dataset_id = j.value("dataset", "");
  r.defined = j.value("defined", true);
  r.regret = r.defined && !j.at("regret").is_null() ? j.at("regret").get<double>()
                                                    : std::numeric_limits<double>::quiet_NaN();
  r.mean_alg_reward = j.value("mean_alg_reward", 0.0);
  r.mean_oracle_reward = j.value("mean_oracle_reward", 0.0);
  r.shift_distance = j.value("shift_distance", 0.0);
  return r;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.method = method_from_string(j.value("method", "3d"));
  c.seeds = j.value("seeds", std::vector<uint64_t>{1});
  c.output_dir = j.value("output_dir", c.output_dir);
  c.train_dataset = j.value("train_dataset", c.train_dataset);
  c.test_datasets = j.value("test_datasets", c.test_datasets);
  c.diffusion_checkpoint = j.value("diffusion_checkpoint", c.diffusion_checkpoint);

  c.outer.prov = prov_from_json(j.value("provisioning", json::object()));
  c.outer.pred = pred_cfg_from_json(j.value("predictor", json::object()));
  c.outer.pred_train = pred_train_from_json(j.value("predictor_train", json::object()), c.outer.pred_train);
  c.outer.diff = diff_from_json(j.value("diffusion", json::object()));
  c.outer.ppo = ppo_from_json(j.value("imax", json::object()));
  c.outer.dual = dual_from_json(j.value("dual", json::object()));
  const json outer = j.value("outer", json::object());
  c.outer.epochs = outer.value("epochs", c.outer.epochs);
  c.outer.adversarial_set_size = outer.value("adversarial_set_size", c.outer.adversarial_set_size);
  c.outer.carry_theta = outer.value("carry_theta", c.outer.carry_theta);
  c.outer.freeze_diffusion = outer.value("freeze_diffusion", c.outer.freeze_diffusion);
  c.outer.validation_fraction = outer.value("validation_fraction", c.outer.validation_fraction);

  const json bl = j.value("baseline_train", json::object());
  c.baseline.train = pred_train_from_json(bl, c.baseline.train);
  const json kl = j.value("kl_dro", json::object());
  c.baseline.kl.epsilon = kl.value("epsilon", c.baseline.kl.epsilon);
  c.baseline.kl.tol = kl.value("tol", c.baseline.kl.tol);
  const json w = j.value("w_dro", json::object());
  c.baseline.w.epsilon = w.value("epsilon", c.baseline.w.epsilon);
  c.baseline.w.steps = w.value("steps", c.baseline.w.steps);
  c.baseline.w.step_size = w.value("step_size", c.baseline.w.step_size);
  const json aug = j.value("augment", json::object());
  c.augment.kind = data::noise_kind_from_string(aug.value("kind", data::to_string(c.augment.kind)));
  c.augment.magnitude = aug.value("magnitude", c.augment.magnitude);
  c.augment.mask_prob = aug.value("mask_prob", c.augment.mask_prob);
  c.augment.perlin_lattice = aug.value("perlin_lattice", c.augment.perlin_lattice);
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["method"] = to_string(method);
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  j["train_dataset"] = train_dataset;
  j["test_datasets"] = test_datasets;
  j["diffusion_checkpoint"] = diffusion_checkpoint;
  j["provisioning"] = prov_to_json(outer.prov);
  j["predictor"] = pred_cfg_to_json(outer.pred);
  j["predictor_train"] = pred_train_to_json(outer.pred_train);
  j["diffusion"] = diff_to_json(outer.diff);
  j["imax"] = ppo_to_json(outer.ppo);
  j["dual"] = dual_to_json(outer.dual);
  j["outer"] = {{"epochs", outer.epochs},
                {"adversarial_set_size", outer.adversarial_set_size},
                {"carry_theta", outer.carry_theta},
                {"freeze_diffusion", outer.freeze_diffusion},
                {"validation_fraction", outer.validation_fraction}};
  j["baseline_train"] = pred_train_to_json(baseline.train);
  j["kl_dro"] = {{"epsilon", baseline.kl.epsilon}, {"tol", baseline.kl.tol}};
  j["w_dro"] = {{"epsilon", baseline.w.epsilon}, {"steps", baseline.w.steps},
                {"step_size", baseline.w.step_size}};
  j["augment"] = {{"kind", data::to_string(augment.kind)},
                  {"magnitude", augment.magnitude},
                  {"mask_prob", augment.mask_prob},
                  {"perlin_lattice", augment.perlin_lattice}};
  return j;
}

std::string ExperimentConfig::hash() const {
  const std::string dump = to_json().dump();
  const uint64_t h = hash_bytes(dump.data(), dump.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (train_dataset.empty()) throw ConfigError("train_dataset is required");
  if (test_datasets.empty()) throw ConfigError("at least one test dataset is required");
  if (!fs::exists(train_dataset)) throw ConfigError("missing train dataset file: " + train_dataset);
  for (const auto& t : test_datasets) {
    if (!fs::exists(t)) throw ConfigError("missing test dataset file: " + t);
  }
  if (!diffusion_checkpoint.empty() && !fs::exists(diffusion_checkpoint)) {
    throw ConfigError("missing diffusion checkpoint: " + diffusion_checkpoint);
  }
  try {
    outer.prov.validate();
    outer.ppo.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

json RunManifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["code_version"] = code_version;
  j["method"] = to_string(method);
  j["run_dir"] = run_dir;
  j["config"] = config;
  j["seeds"] = json::array();
  for (const auto& s : seeds) {
    json js;
    js["seed"] = s.seed;
    js["failed"] = s.failed;
    js["error"] = s.error;
    js["checkpoint"] = s.checkpoint_path;
    js["wall_seconds"] = s.wall_seconds;
    js["peak_rss_kb"] = s.peak_rss_kb;
    js["gpu_memory_mb"] = nullptr;  // no accelerator accounting in this build
    js["reports"] = json::array();
    for (const auto& r : s.reports) js["reports"].push_back(report_to_json(r));
    j["seeds"].push_back(js);
  }
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config_hash = j.value("config_hash", "");
  m.code_version = j.value("code_version", "");
  m.method = method_from_string(j.value("method", "dfl"));
  m.run_dir = j.value("run_dir", "");
  m.config = j.value("config", json::object());
  for (const auto& js : j.value("seeds", json::array())) {
    SeedResult s;
    s.seed = js.value("seed", uint64_t{0});
    s.failed = js.value("failed", false);
    s.error = js.value("error", "");
    s.checkpoint_path = js.value("checkpoint", "");
    s.wall_seconds = js.value("wall_seconds", 0.0);
    s.peak_rss_kb = js.value("peak_rss_kb", 0L);
    for (const auto& jr : js.value("reports", json::array())) s.reports.push_back(report_from_json(jr));
    m.seeds.push_back(std::move(s));
  }
  return m;
}

namespace {

predictor::Predictor train_one_seed(const ExperimentConfig& cfg, const data::TraceDataset& train,
                                    uint64_t seed, const diffusion::DiffusionModel* theta0) {
  trainer::OuterConfig oc = cfg.outer;
  oc.seed = seed;
  oc.pred.init_seed = mix64(seed, hash_tag("pred-init"));
  oc.pred.norm = train.norm;
  oc.pred.context = train.context;
  oc.pred.horizon = train.horizon;
  oc.diff.init_seed = mix64(seed, hash_tag("diff-init"));

  switch (cfg.method) {
    case Method::k3d:
      return trainer::run_3d_learning(train, oc, theta0).predictor;
    case Method::kDfl:
      return trainer::run_dfl(train, oc).predictor;
    case Method::kDa: {
      const data::TraceDataset augmented =
          baselines::augment(train, cfg.augment, mix64(seed, hash_tag("augment")));
      return trainer::run_dfl(augmented, oc).predictor;
    }
    case Method::kKlDro: {
      predictor::Predictor pred(oc.pred);
      RandomStream s(mix64(seed, hash_tag("kl-dro")));
      baselines::train_kl_dro(pred, predictor::windows_of(train), oc.prov, cfg.baseline, s);
      return pred;
    }
    case Method::kWDro: {
      predictor::Predictor pred(oc.pred);
      RandomStream s(mix64(seed, hash_tag("w-dro")));
      baselines::train_w_dro(pred, predictor::windows_of(train), oc.prov, cfg.baseline, s);
      return pred;
    }
  }
  throw ConfigError("unreachable method");
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const data::TraceDataset train = data::load_dataset(cfg.train_dataset);
  std::vector<data::TraceDataset> tests;
  for (const auto& path : cfg.test_datasets) tests.push_back(data::load_dataset(path));

  std::optional<diffusion::DiffusionModel> theta0;
  if (!cfg.diffusion_checkpoint.empty()) theta0 = diffusion::load_checkpoint(cfg.diffusion_checkpoint);

  RunManifest manifest;
  manifest.config_hash = cfg.hash();
  manifest.code_version = kVersion;
  manifest.method = cfg.method;
  manifest.config = cfg.to_json();
  const fs::path run_dir = fs::path(cfg.output_dir) / (to_string(cfg.method) + "-" + manifest.config_hash);
  manifest.run_dir = run_dir.string();
  fs::create_directories(run_dir);

  for (const uint64_t seed : cfg.seeds) {
    const fs::path seed_dir = run_dir / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);
    const fs::path result_path = seed_dir / "result.json";

    if (fs::exists(result_path)) {
      std::ifstream in(result_path);
      json j;
      in >> j;
      SeedResult s;
      s.seed = j.value("seed", seed);
      s.failed = j.value("failed", false);
      s.error = j.value("error", "");
      s.checkpoint_path = j.value("checkpoint", "");
      s.wall_seconds = j.value("wall_seconds", 0.0);
      s.peak_rss_kb = j.value("peak_rss_kb", 0L);
      for (const auto& jr : j.value("reports", json::array())) s.reports.push_back(report_from_json(jr));
      manifest.seeds.push_back(std::move(s));
      continue;
    }

    SeedResult s;
    s.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const predictor::Predictor pred =
          train_one_seed(cfg, train, seed, theta0.has_value() ? &*theta0 : nullptr);
      s.checkpoint_path = (seed_dir / "predictor.json").string();
      predictor::save_checkpoint(pred, s.checkpoint_path);
      for (const auto& test : tests) {
        provisioning::RegretReport rep = trainer::evaluate_regret(pred, test, cfg.outer.prov);
        rep.shift_distance = data::wasserstein_distance(test, train);
        s.reports.push_back(rep);
      }
    } catch (const std::exception& e) {
      s.failed = true;
      s.error = e.what();
    }
    s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.peak_rss_kb = peak_rss_kb();

    json js;
    js["seed"] = s.seed;
    js["failed"] = s.failed;
    js["error"] = s.error;
    js["checkpoint"] = s.checkpoint_path;
    js["wall_seconds"] = s.wall_seconds;
    js["peak_rss_kb"] = s.peak_rss_kb;
    js["gpu_memory_mb"] = nullptr;
    js["reports"] = json::array();
    for (const auto& r : s.reports) js["reports"].push_back(report_to_json(r));
    atomic_write_json(result_path.string(), js);
    manifest.seeds.push_back(std::move(s));
  }

  atomic_write_json((run_dir / "manifest.json").string(), manifest.to_json());
  return manifest;
}

bool all_seeds_failed(const RunManifest& m) {
  for (const auto& s : m.seeds) {
    if (!s.failed) return false;
  }
  return !m.seeds.empty();
}

namespace {

// Mean regret per dataset over completed seeds.
std::vector<std::pair<std::string, double>> mean_regrets(const RunManifest& m) {
  std::vector<std::pair<std::string, double>> out;
  std::vector<int> counts;
  for (const auto& s : m.seeds) {
    if (s.failed) continue;
    for (const auto& r : s.reports) {
      if (!r.defined) continue;
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const auto& p) { return p.first == r.dataset_id; });
      if (it == out.end()) {
        out.emplace_back(r.dataset_id, r.regret);
        counts.push_back(1);
      } else {
        it->second += r.regret;
        counts[static_cast<size_t>(it - out.begin())] += 1;
      }
    }
  }
  for (size_t i = 0; i < out.size(); ++i) out[i].second /= counts[i];
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

void report_tables(const std::vector<RunManifest>& manifests, const std::string& out_dir) {
  if (manifests.empty()) throw std::invalid_argument("report_tables: no manifests");
  fs::create_directories(out_dir);

  // Stable dataset column order from the first manifest that has reports.
  std::vector<std::string> datasets;
  for (const auto& m : manifests) {
    for (const auto& [name, value] : mean_regrets(m)) {
      if (std::find(datasets.begin(), datasets.end(), name) == datasets.end()) datasets.push_back(name);
    }
  }

  struct Row {
    std::string method;
    std::vector<double> cells;
    double avg = 0.0, max = 0.0;
  };
  std::vector<Row> rows;
  const Row* dfl_row = nullptr;
  for (const auto& m : manifests) {
    Row row;
    row.method = to_string(m.method);
    const auto means = mean_regrets(m);
    for (const auto& d : datasets) {
      const auto it = std::find_if(means.begin(), means.end(), [&](const auto& p) { return p.first == d; });
      row.cells.push_back(it != means.end() ? it->second : std::numeric_limits<double>::quiet_NaN());
    }
    double sum = 0.0;
    double mx = -std::numeric_limits<double>::infinity();
    for (const double v : row.cells) {
      sum += v;
      mx = std::max(mx, v);
    }
    row.avg = sum / static_cast<double>(row.cells.size());
    row.max = mx;
    rows.push_back(std::move(row));
  }
  for (const auto& r : rows) {
    if (r.method == "dfl") dfl_row = &r;
  }

  std::ostringstream hash_line;
  hash_line << "# manifests:";
  for (const auto& m : manifests) hash_line << " " << to_string(m.method) << "=" << m.config_hash;

  {
    std::ofstream csv(fs::path(out_dir) / "regret.csv");
    std::ofstream txt(fs::path(out_dir) / "regret.txt");
    csv << hash_line.str() << "\n";
    txt << hash_line.str() << "\n";
    csv << "method";
    for (const auto& d : datasets) csv << "," << d;
    csv << ",Avg,Max\n";
    txt << "normalized regret (mean over seeds)\n";
    for (const auto& r : rows) {
      csv << r.method;
      txt << "  " << r.method << ":";
      for (const double v : r.cells) {
        csv << "," << fmt(v);
        txt << " " << fmt(v);
      }
      csv << "," << fmt(r.avg) << "," << fmt(r.max) << "\n";
      txt << " | avg " << fmt(r.avg) << " max " << fmt(r.max) << "\n";
    }
  }

  if (dfl_row == nullptr) {
    std::cerr << "report_tables: no dfl manifest; skipping the ratio table\n";
    return;
  }
  std::ofstream csv(fs::path(out_dir) / "ratio.csv");
  std::ofstream txt(fs::path(out_dir) / "ratio.txt");
  csv << hash_line.str() << "\n";
  txt << hash_line.str() << "\n";
  csv << "method";
  for (const auto& d : datasets) csv << "," << d;
  csv << ",Avg\n";
  txt << "regret ratio vs dfl (percent)\n";
  for (const auto& r : rows) {
    csv << r.method;
    txt << "  " << r.method << ":";
    double sum = 0.0;
    for (size_t i = 0; i < r.cells.size(); ++i) {
      const double ratio = 100.0 * r.cells[i] / dfl_row->cells[i];
      sum += ratio;
      csv << "," << fmt(ratio);
      txt << " " << fmt(ratio);
    }
    csv << "," << fmt(sum / static_cast<double>(r.cells.size())) << "\n";
    txt << " | avg " << fmt(sum / static_cast<double>(r.cells.size())) << "\n";
  }
}

void write_curve_svg(const std::string& path, const std::string& x_label, const std::string& y_label,
                     const std::vector<double>& xs,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const int width = 640, height = 420, ml = 70, mr = 20, mt = 30, mb = 50;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& [name, ys] : series) {
    for (const double v : ys) {
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (!std::isfinite(ymin)) {
    ymin = 0.0;
    ymax = 1.0;
  }
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  const double pad = 0.08 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const auto px = [&](size_t i) {
    return ml + (width - ml - mr) * (xs.size() > 1 ? static_cast<double>(i) / (xs.size() - 1) : 0.5);
  };
  const auto py = [&](double v) { return mt + (height - mt - mb) * (1.0 - (v - ymin) / (ymax - ymin)); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
      << "\" stroke=\"black\"/>\n";
  for (size_t i = 0; i < xs.size(); ++i) {
    svg << "<text x=\"" << px(i) << "\" y=\"" << height - mb + 18
        << "\" font-size=\"11\" text-anchor=\"middle\">" << xs[i] << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(v) + 4
        << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (mt + height - mb) / 2 << ")\">" << y_label << "</text>\n";
  int color = 0;
  for (const auto& [name, ys] : series) {
    const char* c = kColors[color % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\""
        << (name == "average" ? 3 : 1.5) << "\" points=\"";
    for (size_t i = 0; i < ys.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      svg << px(i) << "," << py(ys[i]) << " ";
    }
    svg << "\"/>\n";
    for (size_t i = 0; i < ys.size(); ++i) {
      if (std::isfinite(ys[i])) {
        svg << "<circle cx=\"" << px(i) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
      } else {
        svg << "<text x=\"" << px(i) << "\" y=\"" << mt + 14 + 12 * color
            << "\" font-size=\"10\" fill=\"" << c << "\" text-anchor=\"middle\">x</text>\n";
      }
    }
    svg << "<text x=\"" << width - mr - 4 << "\" y=\"" << mt + 14 + 14 * color << "\" font-size=\"12\" fill=\""
        << c << "\" text-anchor=\"end\">" << name << "</text>\n";
    ++color;
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << svg.str();
}

SweepResult sweep(const ExperimentConfig& cfg, const std::string& parameter,
                  const std::vector<double>& values, const std::string& out_dir) {
  if (values.size() < 2) throw std::invalid_argument("sweep needs at least two parameter values");
  if (parameter != "epsilon" && parameter != "diffusion_width" && parameter != "tail_len") {
    throw ConfigError("sweep parameter must be epsilon, diffusion_width or tail_len");
  }
  fs::create_directories(out_dir);
  SweepResult result;
  result.parameter = parameter;

  for (const double v : values) {
    ExperimentConfig point_cfg = cfg;
    std::ostringstream tag;
    tag << parameter << "_" << v;
    point_cfg.output_dir = (fs::path(out_dir) / tag.str()).string();
    if (parameter == "epsilon") {
      point_cfg.outer.dual.epsilon = v;
    } else if (parameter == "diffusion_width") {
      point_cfg.outer.diff.arch["base_channels"] = static_cast<int>(v);
    } else {
      point_cfg.outer.ppo.tail_len = static_cast<int>(v);
    }
    SweepPoint point;
    point.value = v;
    try {
      RunManifest m = run_experiment(point_cfg);
      if (all_seeds_failed(m)) {
        point.failed = true;
        point.error = m.seeds.empty() ? "no seeds" : m.seeds.front().error;
      } else {
        point.regret_per_dataset = mean_regrets(m);
        double sum = 0.0;
        for (const auto& [name, r] : point.regret_per_dataset) sum += r;
        point.average_regret = point.regret_per_dataset.empty()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : sum / static_cast<double>(point.regret_per_dataset.size());
      }
      result.manifests.push_back(std::move(m));
    } catch (const std::exception& e) {
      point.failed = true;
      point.error = e.what();
    }
    result.points.push_back(std::move(point));
  }

  // curve series per dataset plus the average
  std::vector<double> xs;
  for (const auto& p : result.points) xs.push_back(p.value);
  std::vector<std::pair<std::string, std::vector<double>>> series;
  std::vector<std::string> names;
  for (const auto& p : result.points) {
    for (const auto& [name, r] : p.regret_per_dataset) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  }
  for (const auto& name : names) {
    std::vector<double> ys;
    for (const auto& p : result.points) {
      const auto it = std::find_if(p.regret_per_dataset.begin(), p.regret_per_dataset.end(),
                                   [&](const auto& q) { return q.first == name; });
      ys.push_back(it != p.regret_per_dataset.end() ? it->second
                                                    : std::numeric_limits<double>::quiet_NaN());
    }
    series.emplace_back(name, std::move(ys));
  }
  {
    std::vector<double> avg;
    for (const auto& p : result.points) {
      avg.push_back(p.failed ? std::numeric_limits<double>::quiet_NaN() : p.average_regret);
    }
    series.emplace_back("average", std::move(avg));
  }
  write_curve_svg((fs::path(out_dir) / ("sweep_" + parameter + ".svg")).string(), parameter,
                  "normalized regret", xs, series);

  std::ofstream csv(fs::path(out_dir) / ("sweep_" + parameter + ".csv"));
  csv << parameter;
  for (const auto& [name, ys] : series) csv << "," << name;
  csv << ",failed\n";
  for (size_t i = 0; i < xs.size(); ++i) {
    csv << xs[i];
    for (const auto& [name, ys] : series) csv << "," << fmt(ys[i]);
    csv << "," << (result.points[i].failed ? "yes" : "no") << "\n";
  }
  return result;
}

}  // namespace drdfl::harness

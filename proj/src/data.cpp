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

#include "drdfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "drdfl/errors.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::data {

namespace {

double clamp_value(double v, double hi) { return std::clamp(v, 0.0, hi); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

bool parse_double(const std::string& s, double* out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\r' || *end == '\t') ++end;
  if (*end != '\0') return false;
  *out = v;
  return true;
}

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

// Accepts numeric epoch seconds or "YYYY-MM-DD HH:MM:SS[.frac]" (space or T).
bool parse_timestamp(const std::string& s, double* out) {
  if (parse_double(s, out)) return true;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double sec = 0.0;
  if (std::sscanf(s.c_str(), "%d-%d-%d%*1[ T]%d:%d:%lf", &y, &mo, &d, &h, &mi, &sec) == 6) {
    if (mo < 1 || mo > 12 || d < 1 || d > 31) return false;
    *out = static_cast<double>(days_from_civil(y, mo, d)) * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
    return true;
  }
  return false;
}

std::string sanitize_label(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace

void TraceDataset::validate() const {
  if (!(norm > 0.0) || !std::isfinite(norm)) throw std::invalid_argument("dataset norm must be positive");
  if (length <= 0) throw std::invalid_argument("dataset length must be positive");
  if (context < 1 || horizon < 1 || context + horizon != length) {
    throw std::invalid_argument("dataset windows must satisfy W >= 1, N >= 1, W + N = L");
  }
  for (const auto& seq : sequences) {
    if (static_cast<int>(seq.size()) != length) {
      throw std::invalid_argument("all sequences must have the dataset length");
    }
    for (const double v : seq) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("workload values must be finite and non-negative");
      }
    }
  }
}

double TraceDataset::max_value() const {
  double m = 0.0;
  for (const auto& seq : sequences)
    for (const double v : seq) m = std::max(m, v);
  return m;
}

NoiseKind noise_kind_from_string(const std::string& name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "cutout") return NoiseKind::kCutout;
  if (name == "perlin") return NoiseKind::kPerlin;
  throw std::invalid_argument("unknown noise kind: " + name);
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kCutout: return "cutout";
    case NoiseKind::kPerlin: return "perlin";
  }
  return "?";
}

std::vector<std::vector<double>> gaussian_field(size_t count, int length, uint64_t seed) {
  std::vector<std::vector<double>> field(count, std::vector<double>(length));
  const RandomStream base(seed);
  parallel::for_range(static_cast<int64_t>(count), [&](int64_t i) {
    RandomStream s = base.child("gaussian-field", static_cast<uint64_t>(i));
    for (int j = 0; j < length; ++j) field[i][j] = s.normal();
  });
  return field;
}

std::vector<std::vector<uint8_t>> cutout_mask(size_t count, int length, double prob, uint64_t seed) {
  if (prob < 0.0 || prob > 1.0) throw std::invalid_argument("cutout probability must be in [0, 1]");
  std::vector<std::vector<uint8_t>> mask(count, std::vector<uint8_t>(length));
  const RandomStream base(seed);
  parallel::for_range(static_cast<int64_t>(count), [&](int64_t i) {
    RandomStream s = base.child("cutout-field", static_cast<uint64_t>(i));
    for (int j = 0; j < length; ++j) mask[i][j] = s.uniform() < prob ? 1 : 0;
  });
  return mask;
}

std::vector<std::vector<double>> perlin_field(size_t count, int length, int lattice, uint64_t seed) {
  if (lattice < 2) throw std::invalid_argument("perlin lattice spacing must be at least 2");
  std::vector<std::vector<double>> field(count, std::vector<double>(length));
  const RandomStream base(seed);
  const int nodes = (length - 1) / lattice + 2;
  parallel::for_range(static_cast<int64_t>(count), [&](int64_t i) {
    RandomStream s = base.child("perlin-field", static_cast<uint64_t>(i));
    std::vector<double> grad(nodes);
    for (double& g : grad) g = 2.0 * s.uniform() - 1.0;
    for (int x = 0; x < length; ++x) {
      const int k = x / lattice;
      const double u = static_cast<double>(x - k * lattice) / lattice;
      const double n0 = grad[k] * u;
      const double n1 = grad[k + 1] * (u - 1.0);
      const double w = u * u * (3.0 - 2.0 * u);
      field[i][x] = n0 + w * (n1 - n0);
    }
  });
  return field;
}

double perlin_step_bound(int lattice) {
  // |d/du| <= |g0| + sup(w')*|n1-n0| + w*|g1-g0| <= 1 + 1.5 + 2 over unit
  // gradients; one slot advances u by 1/lattice.
  return 4.5 / static_cast<double>(lattice);
}

TraceDataset apply_noise(const TraceDataset& d, const CorruptionSpec& spec, uint64_t seed) {
  d.validate();
  TraceDataset out = d;
  const double hi = d.norm * kClampHeadroom;
  const double scale = spec.parameter * d.max_value();
  switch (spec.kind) {
    case NoiseKind::kGaussian: {
      const auto field = gaussian_field(d.size(), d.length, seed);
      for (size_t i = 0; i < d.size(); ++i)
        for (int j = 0; j < d.length; ++j)
          out.sequences[i][j] = clamp_value(d.sequences[i][j] + scale * field[i][j], hi);
      break;
    }
    case NoiseKind::kCutout: {
      const auto mask = cutout_mask(d.size(), d.length, spec.parameter, seed);
      for (size_t i = 0; i < d.size(); ++i)
        for (int j = 0; j < d.length; ++j)
          out.sequences[i][j] = mask[i][j] ? 0.0 : clamp_value(d.sequences[i][j], hi);
      break;
    }
    case NoiseKind::kPerlin: {
      const auto field = perlin_field(d.size(), d.length, spec.perlin_lattice, seed);
      for (size_t i = 0; i < d.size(); ++i)
        for (int j = 0; j < d.length; ++j)
          out.sequences[i][j] = clamp_value(d.sequences[i][j] + scale * field[i][j], hi);
      break;
    }
  }
  out.validate();
  return out;
}

SynthKind synth_kind_from_string(const std::string& name) {
  if (name == "ar1") return SynthKind::kAr1;
  if (name == "seasonal") return SynthKind::kSeasonal;
  if (name == "bursty") return SynthKind::kBursty;
  throw std::invalid_argument("unknown synthetic workload kind: " + name);
}

TraceDataset synth_generate(SynthKind kind, size_t count, int length, int context, const SynthParams& params,
                            uint64_t seed, double norm) {
  if (count < 1) throw std::invalid_argument("synth_generate needs count >= 1");
  if (length < 2 || context < 1 || context >= length) {
    throw std::invalid_argument("synth_generate needs length > context >= 1");
  }
  TraceDataset d;
  d.length = length;
  d.context = context;
  d.horizon = length - context;
  d.norm = norm;
  d.meta.seed = seed;
  d.meta.label = kind == SynthKind::kAr1 ? "synth-ar1" : kind == SynthKind::kSeasonal ? "synth-seasonal" : "synth-bursty";
  d.sequences.assign(count, std::vector<double>(length));
  const RandomStream base(seed);
  const double mean = params.mean_frac * norm;
  const double noise = params.noise_frac * norm;
  parallel::for_range(static_cast<int64_t>(count), [&](int64_t i) {
    RandomStream s = base.child("synth", static_cast<uint64_t>(i));
    auto& seq = d.sequences[i];
    switch (kind) {
      case SynthKind::kAr1: {
        // burn in to the stationary law so every slot is statistically alike
        double x = mean;
        for (int t = 0; t < 64; ++t) x = mean + params.phi * (x - mean) + noise * s.normal();
        for (int t = 0; t < length; ++t) {
          seq[t] = clamp_value(x, norm);
          x = mean + params.phi * (x - mean) + noise * s.normal();
        }
        break;
      }
      case SynthKind::kSeasonal: {
        const double phase = s.uniform() * 6.283185307179586;
        for (int t = 0; t < length; ++t) {
          const double wave = params.amp_frac * norm *
                              std::sin(6.283185307179586 * t / params.period + phase);
          seq[t] = clamp_value(mean + wave + noise * s.normal(), norm);
        }
        break;
      }
      case SynthKind::kBursty: {
        for (int t = 0; t < length; ++t) {
          double x = mean + noise * s.normal();
          if (s.uniform() < params.spike_prob) {
            x += params.spike_frac * norm * (-std::log(1.0 - s.uniform()));
          }
          seq[t] = clamp_value(x, norm);
        }
        break;
      }
    }
  });
  d.validate();
  return d;
}

ShiftKind shift_kind_from_string(const std::string& name) {
  if (name == "mean_scale") return ShiftKind::kMeanScale;
  if (name == "variance_scale") return ShiftKind::kVarianceScale;
  if (name == "mix") return ShiftKind::kMix;
  throw std::invalid_argument("unknown shift kind: " + name);
}

TraceDataset shift_dataset(const TraceDataset& d, ShiftKind kind, double amount, const TraceDataset* other) {
  d.validate();
  TraceDataset out = d;
  const double hi = d.norm * kClampHeadroom;
  switch (kind) {
    case ShiftKind::kMeanScale: {
      if (!(amount >= 0.0)) throw std::invalid_argument("mean_scale amount must be non-negative");
      for (auto& seq : out.sequences)
        for (double& v : seq) v = clamp_value(v * amount, hi);
      out.meta.label = d.meta.label + "+mean" + std::to_string(amount);
      break;
    }
    case ShiftKind::kVarianceScale: {
      if (!(amount >= 0.0)) throw std::invalid_argument("variance_scale amount must be non-negative");
      const double root = std::sqrt(amount);
      std::vector<double> slot_mean(d.length, 0.0);
      for (const auto& seq : d.sequences)
        for (int j = 0; j < d.length; ++j) slot_mean[j] += seq[j];
      for (double& m : slot_mean) m /= static_cast<double>(d.size());
      for (auto& seq : out.sequences)
        for (int j = 0; j < d.length; ++j)
          seq[j] = clamp_value(slot_mean[j] + root * (seq[j] - slot_mean[j]), hi);
      out.meta.label = d.meta.label + "+var" + std::to_string(amount);
      break;
    }
    case ShiftKind::kMix: {
      if (other == nullptr) throw std::invalid_argument("mix shift needs a second dataset");
      other->validate();
      if (other->length != d.length) throw std::invalid_argument("mix needs equal sequence lengths");
      out.sequences.clear();
      const size_t half_a = (d.size() + 1) / 2;
      for (size_t i = 0; i < half_a; ++i) out.sequences.push_back(d.sequences[i]);
      for (size_t i = (other->size() + 1) / 2; i < other->size(); ++i) {
        out.sequences.push_back(other->sequences[i]);
      }
      out.meta.label = d.meta.label + "&" + other->meta.label;
      break;
    }
  }
  out.validate();
  return out;
}

TraceDataset corrupt(const TraceDataset& d, const CorruptionSpec& spec, uint64_t seed) {
  TraceDataset out = apply_noise(d, spec, seed);
  out.meta.label = d.meta.label + "+" + to_string(spec.kind);
  return out;
}

std::vector<TraceDataset> split(const TraceDataset& d, const std::vector<double>& fractions, uint64_t seed) {
  d.validate();
  if (fractions.empty()) throw std::invalid_argument("split needs at least one fraction");
  double sum = 0.0;
  for (const double f : fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("split fractions must be positive");
    sum += f;
  }
  if (sum > 1.0 + 1e-9) throw std::invalid_argument("split fractions must sum to at most 1");

  std::vector<size_t> order(d.size());
  std::iota(order.begin(), order.end(), size_t{0});
  RandomStream s(seed);
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<size_t>(s.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  }

  std::vector<TraceDataset> parts;
  size_t cursor = 0;
  for (size_t k = 0; k < fractions.size(); ++k) {
    TraceDataset part = d;
    part.sequences.clear();
    size_t take = static_cast<size_t>(std::floor(fractions[k] * static_cast<double>(d.size()) + 1e-9));
    take = std::min(take, d.size() - cursor);
    for (size_t i = 0; i < take; ++i) part.sequences.push_back(d.sequences[order[cursor + i]]);
    cursor += take;
    part.meta.label = d.meta.label + "#" + std::to_string(k);
    parts.push_back(std::move(part));
  }
  return parts;
}

DistanceMethod distance_method_from_string(const std::string& name) {
  if (name == "marginal_w1") return DistanceMethod::kMarginalW1;
  if (name == "ot_l2") return DistanceMethod::kOtL2;
  throw std::invalid_argument("unknown distance method: " + name);
}

double w1_empirical(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("w1_empirical needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const size_t n = a.size();
  const size_t m = b.size();
  double total = 0.0;
  double q = 0.0;
  size_t ia = 0, ib = 0;
  while (ia < n && ib < m) {
    const double qa = static_cast<double>(ia + 1) / static_cast<double>(n);
    const double qb = static_cast<double>(ib + 1) / static_cast<double>(m);
    const double q_next = std::min(qa, qb);
    total += std::abs(a[ia] - b[ib]) * (q_next - q);
    q = q_next;
    if (qa <= q_next + 1e-15) ++ia;
    if (qb <= q_next + 1e-15) ++ib;
  }
  return total;
}

double assignment_cost(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return 0.0;
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost[match[j] - 1][j - 1];
  return total;
}

namespace {

std::vector<size_t> subsample_indices(size_t have, size_t want, uint64_t tag) {
  std::vector<size_t> idx(have);
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (want >= have) return idx;
  RandomStream s(mix64(0x07D157A7CEULL, tag));
  for (size_t i = 0; i < want; ++i) {
    std::swap(idx[i], idx[i + static_cast<size_t>(s.uniform_int(0, static_cast<int64_t>(have - i) - 1))]);
  }
  idx.resize(want);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double wasserstein_distance(const TraceDataset& a, const TraceDataset& b, DistanceMethod method,
                            size_t ot_subsample_cap) {
  if (a.sequences.empty() || b.sequences.empty()) {
    throw std::invalid_argument("wasserstein_distance needs non-empty datasets");
  }
  if (a.length != b.length) throw std::invalid_argument("wasserstein_distance needs equal lengths");

  if (method == DistanceMethod::kMarginalW1) {
    std::vector<double> per_slot(a.length, 0.0);
    parallel::for_range(a.length, [&](int64_t j) {
      std::vector<double> va(a.size()), vb(b.size());
      for (size_t i = 0; i < a.size(); ++i) va[i] = a.sequences[i][j];
      for (size_t i = 0; i < b.size(); ++i) vb[i] = b.sequences[i][j];
      per_slot[j] = w1_empirical(std::move(va), std::move(vb));
    });
    double total = 0.0;
    for (const double v : per_slot) total += v;
    return total / static_cast<double>(a.length);
  }

  const size_t n = std::min({a.size(), b.size(), ot_subsample_cap});
  const auto ia = subsample_indices(a.size(), n, 1);
  const auto ib = subsample_indices(b.size(), n, 2);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  parallel::for_range(static_cast<int64_t>(n), [&](int64_t r) {
    const auto& sa = a.sequences[ia[r]];
    for (size_t c = 0; c < n; ++c) {
      const auto& sb = b.sequences[ib[c]];
      double d2 = 0.0;
      for (int j = 0; j < a.length; ++j) {
        const double diff = sa[j] - sb[j];
        d2 += diff * diff;
      }
      cost[r][c] = d2;
    }
  });
  return std::sqrt(assignment_cost(cost) / static_cast<double>(n));
}

TraceDataset ingest_traces(const std::string& path, double slot_seconds, int context, int horizon,
                           double norm, IngestStats* stats) {
  if (!(slot_seconds > 0.0)) throw std::invalid_argument("slot duration must be positive");
  if (context < 1 || horizon < 1) throw std::invalid_argument("ingest needs W >= 1 and N >= 1");
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open trace file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw IngestError("trace file is empty: " + path);

  std::vector<std::pair<double, double>> requests;  // (timestamp seconds, tokens)
  size_t skipped = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    double ts = 0.0, ctx = 0.0, gen = 0.0;
    if (fields.size() < 3 || !parse_timestamp(fields[0], &ts) || !parse_double(fields[1], &ctx) ||
        !parse_double(fields[2], &gen) || ctx < 0.0 || gen < 0.0) {
      ++skipped;
      continue;
    }
    requests.emplace_back(ts, ctx + gen);
  }
  if (requests.empty()) throw IngestError("no parseable request rows in " + path);

  double ts_min = requests.front().first;
  double ts_max = ts_min;
  for (const auto& [ts, tok] : requests) {
    ts_min = std::min(ts_min, ts);
    ts_max = std::max(ts_max, ts);
  }
  const size_t slot_count = static_cast<size_t>(std::floor((ts_max - ts_min) / slot_seconds)) + 1;
  std::vector<double> slots(slot_count, 0.0);
  for (const auto& [ts, tok] : requests) {
    slots[static_cast<size_t>(std::floor((ts - ts_min) / slot_seconds))] += tok;
  }

  TraceDataset d;
  d.length = context + horizon;
  d.context = context;
  d.horizon = horizon;
  d.norm = norm;
  d.meta.label = path;
  d.meta.slot_seconds = slot_seconds;
  const size_t usable = slot_count / static_cast<size_t>(d.length);
  for (size_t k = 0; k < usable; ++k) {
    d.sequences.emplace_back(slots.begin() + static_cast<long>(k) * d.length,
                             slots.begin() + static_cast<long>(k + 1) * d.length);
  }
  if (stats != nullptr) {
    stats->rows_parsed = requests.size();
    stats->rows_skipped = skipped;
    stats->slots = slot_count;
  }
  if (d.sequences.empty()) {
    throw IngestError("trace spans fewer than " + std::to_string(d.length) + " slots; no usable sequences");
  }
  d.validate();
  return d;
}

void save_dataset(const TraceDataset& d, const std::string& path) {
  d.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << kDatasetMagic << ",L=" << d.length << ",W=" << d.context << ",N=" << d.horizon << ",norm=";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d.norm);
  out << buf << ",label=" << sanitize_label(d.meta.label) << ",slot=" << d.meta.slot_seconds
      << ",seed=" << d.meta.seed << "\n";
  for (const auto& seq : d.sequences) {
    for (size_t j = 0; j < seq.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", seq[j]);
      out << (j == 0 ? "" : ",") << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("short write to dataset file: " + path);
}

TraceDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset file is empty: " + path);
  const auto header = split_csv(line);
  if (header.empty() || header[0] != kDatasetMagic) {
    throw std::runtime_error("not a " + std::string(kDatasetMagic) + " file: " + path);
  }
  TraceDataset d;
  for (size_t i = 1; i < header.size(); ++i) {
    const auto eq = header[i].find('=');
    if (eq == std::string::npos) continue;
    const std::string key = header[i].substr(0, eq);
    const std::string val = header[i].substr(eq + 1);
    if (key == "L") d.length = std::stoi(val);
    else if (key == "W") d.context = std::stoi(val);
    else if (key == "N") d.horizon = std::stoi(val);
    else if (key == "norm") d.norm = std::stod(val);
    else if (key == "label") d.meta.label = val;
    else if (key == "slot") d.meta.slot_seconds = std::stod(val);
    else if (key == "seed") d.meta.seed = std::stoull(val);
  }
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    std::vector<double> seq;
    seq.reserve(fields.size());
    for (const auto& f : fields) {
      double v = 0.0;
      if (!parse_double(f, &v)) throw std::runtime_error("bad value in dataset file: " + path);
      seq.push_back(v);
    }
    d.sequences.push_back(std::move(seq));
  }
  d.validate();
  return d;
}

}  // namespace drdfl::data

#include "srdml/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "srdml/io.hpp"
#include "srdml/json_fields.hpp"
#include "srdml/kernels.hpp"
#include "srdml/rng.hpp"

namespace srdml {

using nlohmann::json;

namespace {

enum Stream : std::uint64_t { kFlipStream = 0, kInputStream = 1, kNoiseStream = 2 };

void check_common(const SyntheticSpec& s) {
  if (s.num_tasks < 2) throw std::invalid_argument("synthetic: num_tasks must be at least 2");
  if (s.samples_per_task == 0) throw std::invalid_argument("synthetic: samples_per_task must be positive");
  if (s.dim == 0) throw std::invalid_argument("synthetic: dim must be positive");
  if (s.magnitudes.empty()) throw std::invalid_argument("synthetic: magnitudes must not be empty");
  for (double m : s.magnitudes) {
    if (!(m > 0) || !std::isfinite(m)) throw std::invalid_argument("synthetic: magnitudes must be positive");
  }
  if (!(s.flip_fraction >= 0 && s.flip_fraction < 0.5)) {
    throw std::invalid_argument("synthetic: flip_fraction must lie in [0, 0.5)");
  }
  if (!(s.noise_variance >= 0) || !std::isfinite(s.noise_variance)) {
    throw std::invalid_argument("synthetic: noise_variance must be non-negative");
  }
  if (!s.input_means.empty()) {
    if (s.input_means.size() != s.num_tasks) throw std::invalid_argument("synthetic: need one input mean per task");
    for (const auto& eta : s.input_means) {
      if (eta.size() != s.dim) throw std::invalid_argument("synthetic: input mean length must equal dim");
    }
  }
}

/// Inputs, noise and labels for one task given its final weight column.
void fill_task(const SyntheticSpec& spec, const Rng& task_rng, std::size_t t, std::span<const double> w, Tensor& x,
               Tensor& y) {
  const auto m = spec.samples_per_task, d = spec.dim;
  x = Tensor::zeros({m, d});
  Rng in_rng = task_rng.split(kInputStream);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double mean = spec.input_means.empty() ? 0.0 : spec.input_means[t][k];
      x.at(i, k) = in_rng.normal(mean, 1.0);
    }
  y = Tensor::zeros({m, 1});
  kernels::reference::matmul(x.data(), w, y.data(), m, d, 1);
  Rng noise_rng = task_rng.split(kNoiseStream);
  const double sd = std::sqrt(spec.noise_variance);
  for (std::size_t i = 0; i < m; ++i) y[i] += noise_rng.normal(0.0, sd);
}

std::vector<double> column(const Tensor& w, std::size_t t) {
  std::vector<double> c(w.rows());
  for (std::size_t k = 0; k < w.rows(); ++k) c[k] = w.at(k, t);
  return c;
}

MultiTaskDataset assemble(const SyntheticSpec& spec, std::uint64_t seed, Tensor clean_w, Tensor true_w) {
  MultiTaskDataset data;
  data.spec = spec;
  data.seed = seed;
  const Rng root(seed);
  for (std::size_t t = 0; t < spec.num_tasks; ++t) {
    Tensor x, y;
    const auto w = column(true_w, t);
    fill_task(spec, root.split(t), t, w, x, y);
    data.x.push_back(std::move(x));
    data.y.push_back(std::move(y));
  }
  data.clean_w = std::move(clean_w);
  data.true_w = std::move(true_w);
  return data;
}

}  // namespace

std::string to_string(SyntheticMode m) { return m == SyntheticMode::Aligned ? "aligned" : "contradicting"; }

SyntheticMode parse_synthetic_mode(const std::string& s) {
  if (s == "aligned") return SyntheticMode::Aligned;
  if (s == "contradicting") return SyntheticMode::Contradicting;
  throw std::invalid_argument("unknown synthetic mode '" + s + "'");
}

std::size_t SyntheticSpec::flips_per_task() const {
  return static_cast<std::size_t>(std::floor(flip_fraction * static_cast<double>(dim)));
}

void SyntheticSpec::validate() const {
  check_common(*this);
  if (mode == SyntheticMode::Aligned) {
    if (dim % 2 != 0) throw std::invalid_argument("synthetic: dim must be even");
    if (num_tasks != 4 * magnitudes.size()) {
      throw std::invalid_argument("synthetic: aligned mode needs num_tasks = 2 bases x 2 twins x |magnitudes| = " +
                                  std::to_string(4 * magnitudes.size()));
    }
    if (flips_per_task() > dim / 2) throw std::invalid_argument("synthetic: more flips than base support");
  } else {
    if (num_tasks > dim && num_tasks % 2 != 0) {
      throw std::invalid_argument("synthetic: contradicting mode with num_tasks > dim needs an even num_tasks");
    }
    if (num_tasks > 2 * dim) throw std::invalid_argument("synthetic: contradicting mode needs num_tasks <= 2 dim");
  }
}

MultiTaskDataset generate(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.mode != SyntheticMode::Aligned) throw std::invalid_argument("generate: spec is not in aligned mode");
  spec.validate();
  const auto T = spec.num_tasks, d = spec.dim, half = d / 2, per_base = T / 2;
  Tensor clean = Tensor::zeros({d, T});
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t base = t < per_base ? 0 : 1;
    const double magnitude = spec.magnitudes[(t % per_base) / 2];
    for (std::size_t k = base * half; k < (base + 1) * half; ++k) clean.at(k, t) = magnitude;
  }
  // Sign flips touch distinct coordinates of the task's base support.
  Tensor noisy = clean;
  const Rng root(seed);
  const auto flips = spec.flips_per_task();
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t offset = t < per_base ? 0 : half;
    std::vector<std::size_t> support(half);
    std::iota(support.begin(), support.end(), offset);
    Rng flip_rng = root.split(t).split(kFlipStream);
    for (std::size_t f = 0; f < flips; ++f) {
      const auto pick = f + static_cast<std::size_t>(flip_rng.below(half - f));
      std::swap(support[f], support[pick]);
      noisy.at(support[f], t) = -noisy.at(support[f], t);
    }
  }
  return assemble(spec, seed, std::move(clean), std::move(noisy));
}

MultiTaskDataset generate_contradicting(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.mode != SyntheticMode::Contradicting) {
    throw std::invalid_argument("generate_contradicting: spec is not in contradicting mode");
  }
  spec.validate();
  const auto T = spec.num_tasks, d = spec.dim;
  Tensor w = Tensor::zeros({d, T});
  if (T <= d) {
    const std::size_t block = d / T;
    const double unit = 1.0 / std::sqrt(static_cast<double>(block));
    for (std::size_t t = 0; t < T; ++t) {
      const double mu = spec.magnitudes[t % spec.magnitudes.size()];
      for (std::size_t k = t * block; k < (t + 1) * block; ++k) w.at(k, t) = mu * unit;
    }
  } else {
    const std::size_t pairs = T / 2;
    const std::size_t block = d / pairs;
    const double unit = 1.0 / std::sqrt(static_cast<double>(block));
    for (std::size_t p = 0; p < pairs; ++p) {
      const double mu = spec.magnitudes[p % spec.magnitudes.size()];
      for (std::size_t k = p * block; k < (p + 1) * block; ++k) {
        w.at(k, 2 * p) = mu * unit;
        w.at(k, 2 * p + 1) = -mu * unit;
      }
    }
  }
  Tensor clean = w;
  return assemble(spec, seed, std::move(clean), std::move(w));
}

MultiTaskDataset generate_any(const SyntheticSpec& spec, std::uint64_t seed) {
  return spec.mode == SyntheticMode::Aligned ? generate(spec, seed) : generate_contradicting(spec, seed);
}

DatasetSplit split_dataset(const MultiTaskDataset& data, double test_fraction) {
  if (!(test_fraction >= 0 && test_fraction < 1)) throw std::invalid_argument("split: test_fraction must be in [0,1)");
  DatasetSplit s;
  s.train = data;
  s.test = data;
  s.train.x.clear();
  s.train.y.clear();
  s.test.x.clear();
  s.test.y.clear();
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    const auto m = data.x[t].rows();
    auto n_train = static_cast<std::size_t>(std::llround((1.0 - test_fraction) * static_cast<double>(m)));
    n_train = std::clamp<std::size_t>(n_train, 1, m);
    s.train.x.push_back(slice_rows(data.x[t], 0, n_train));
    s.train.y.push_back(slice_rows(data.y[t], 0, n_train));
    s.test.x.push_back(slice_rows(data.x[t], n_train, m));
    s.test.y.push_back(slice_rows(data.y[t], n_train, m));
  }
  return s;
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"mode", to_string(s.mode)},
           {"num_tasks", s.num_tasks},
           {"samples_per_task", s.samples_per_task},
           {"dim", s.dim},
           {"magnitudes", s.magnitudes},
           {"flip_fraction", s.flip_fraction},
           {"noise_variance", s.noise_variance},
           {"input_means", s.input_means}};
}

void from_json(const json& j, SyntheticSpec& s) {
  FieldReader r(j, "");
  std::string mode = to_string(s.mode);
  r.optional("mode", mode);
  r.optional("num_tasks", s.num_tasks);
  r.optional("samples_per_task", s.samples_per_task);
  r.optional("dim", s.dim);
  r.optional("magnitudes", s.magnitudes);
  r.optional("flip_fraction", s.flip_fraction);
  r.optional("noise_variance", s.noise_variance);
  r.optional("input_means", s.input_means);
  r.finish();
  try {
    s.mode = parse_synthetic_mode(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("mode", e.what());
  }
}

void write_dataset(const MultiTaskDataset& data, const std::filesystem::path& dir) {
  const auto d = data.dim();
  std::string header;
  for (std::size_t k = 0; k < d; ++k) header += "x" + std::to_string(k) + ",";
  header += "y\n";
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    std::string text = header;
    const auto& x = data.x[t];
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t k = 0; k < d; ++k) text += format_double(x.at(i, k)) + ",";
      text += format_double(data.y[t][i]) + "\n";
    }
    write_text(dir / ("task_" + std::to_string(t) + ".csv"), text);
  }
  std::vector<std::vector<double>> rows(data.true_w.rows(), std::vector<double>(data.true_w.cols()));
  for (std::size_t k = 0; k < data.true_w.rows(); ++k)
    for (std::size_t t = 0; t < data.true_w.cols(); ++t) rows[k][t] = data.true_w.at(k, t);
  write_text(dir / "true_w.csv", matrix_csv(rows));
  write_json(dir / "spec.json", json{{"spec", data.spec}, {"seed", data.seed}});
}

MultiTaskDataset read_dataset(const std::filesystem::path& dir) {
  const auto meta = read_json(dir / "spec.json");
  MultiTaskDataset data;
  data.spec = meta.at("spec").get<SyntheticSpec>();
  data.seed = meta.at("seed").get<std::uint64_t>();
  const auto T = data.spec.num_tasks, d = data.spec.dim;
  for (std::size_t t = 0; t < T; ++t) {
    const auto path = dir / ("task_" + std::to_string(t) + ".csv");
    const auto table = read_csv(path, true);
    if (table.header.size() != d + 1) throw IoError(path.string() + ": expected " + std::to_string(d + 1) + " columns");
    Tensor x = Tensor::zeros({table.rows.size(), d});
    Tensor y = Tensor::zeros({table.rows.size(), 1});
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      if (table.rows[i].size() != d + 1) throw IoError(path.string() + ": ragged row " + std::to_string(i + 2));
      for (std::size_t k = 0; k < d; ++k) x.at(i, k) = table.rows[i][k];
      y[i] = table.rows[i][d];
    }
    data.x.push_back(std::move(x));
    data.y.push_back(std::move(y));
  }
  const auto w = read_csv(dir / "true_w.csv", false);
  if (w.rows.size() != d) throw IoError("true_w.csv: expected " + std::to_string(d) + " rows");
  data.true_w = Tensor::zeros({d, T});
  for (std::size_t k = 0; k < d; ++k) {
    if (w.rows[k].size() != T) throw IoError("true_w.csv: expected " + std::to_string(T) + " columns");
    for (std::size_t t = 0; t < T; ++t) data.true_w.at(k, t) = w.rows[k][t];
  }
  return data;
}

}  // namespace srdml

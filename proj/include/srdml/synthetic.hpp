#pragma once

// Controlled multi-task regression benchmark: task weights built from two
// orthogonal block bases at several magnitudes, twin tasks per magnitude,
// sign-flip noise, Gaussian inputs and label noise.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "srdml/tensor.hpp"

namespace srdml {

enum class SyntheticMode { Aligned, Contradicting };

std::string to_string(SyntheticMode m);
SyntheticMode parse_synthetic_mode(const std::string& s);

struct SyntheticSpec {
  std::size_t num_tasks = 12;
  std::size_t samples_per_task = 100;
  std::size_t dim = 20;
  std::vector<double> magnitudes{1.0, 2.0, 3.0};
  double flip_fraction = 0.10;
  double noise_variance = 0.1;
  /// Per-task input means; empty means all-zero.
  std::vector<std::vector<double>> input_means;
  SyntheticMode mode = SyntheticMode::Aligned;

  void validate() const;
  /// floor(flip_fraction * dim)
  std::size_t flips_per_task() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);

struct MultiTaskDataset {
  std::vector<Tensor> x;  // [m,d] per task
  std::vector<Tensor> y;  // [m,1] per task
  Tensor true_w;          // [d,T], post-flip weights
  Tensor clean_w;         // [d,T], weights before sign-flip noise
  SyntheticSpec spec;
  std::uint64_t seed = 0;

  std::size_t num_tasks() const noexcept { return x.size(); }
  std::size_t dim() const { return x.empty() ? 0 : x.front().cols(); }
};

/// Aligned benchmark. Tasks [0, T/2) use the first base, the rest the second;
/// within a base, consecutive task pairs are twins sharing a magnitude.
MultiTaskDataset generate(const SyntheticSpec& spec, std::uint64_t seed);

/// Tasks whose weights never align: mu_t * v_t with mutually orthogonal unit
/// block vectors when T <= d, and (v, -v) pairs on T/2 orthogonal blocks otherwise.
MultiTaskDataset generate_contradicting(const SyntheticSpec& spec, std::uint64_t seed);

/// Dispatches on spec.mode.
MultiTaskDataset generate_any(const SyntheticSpec& spec, std::uint64_t seed);

struct DatasetSplit {
  MultiTaskDataset train;
  MultiTaskDataset test;
};

/// First round((1 - test_fraction) * m) rows of every task train, the rest test.
/// Samples are i.i.d., so a positional split is unbiased.
DatasetSplit split_dataset(const MultiTaskDataset& data, double test_fraction);

/// task_<t>.csv (header x0..x{d-1},y), true_w.csv (d rows x T columns) and spec.json.
void write_dataset(const MultiTaskDataset& data, const std::filesystem::path& dir);
MultiTaskDataset read_dataset(const std::filesystem::path& dir);

}  // namespace srdml

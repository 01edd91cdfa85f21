#pragma once

// Experiment configuration and the command implementations behind the CLI:
// data generation, single runs, lambda sweeps, the fixed-relation ablation and
// artifact export. Commands return process exit codes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "srdml/diagnostics.hpp"
#include "srdml/model.hpp"
#include "srdml/synthetic.hpp"
#include "srdml/training.hpp"

namespace srdml {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int io = 3;
inline constexpr int divergence = 4;
inline constexpr int partial_sweep = 5;
}  // namespace exit_code

struct DataSource {
  SyntheticSpec synthetic;
  /// Directory written by gen-data; when set it replaces inline generation.
  std::optional<std::filesystem::path> path;
  /// Trailing fraction of each task held out for test metrics; 0 disables.
  double test_fraction = 0.2;
};

struct ExperimentConfig {
  DataSource data;
  ModelSpec model;
  TrainConfig train;
  std::filesystem::path output_dir = "runs/default";
  /// Each seed drives both data generation and model initialization.
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  /// Cross-section checks; throws ConfigError naming the field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Parses and validates; syntax errors carry line and column, schema errors the field path.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Full dataset for one seed, generated inline or read from data.path.
MultiTaskDataset load_data(const ExperimentConfig& config, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
  std::optional<Metrics> test;
};

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

nlohmann::json metrics_json(const Metrics& m);
std::string history_csv(const std::vector<EpochRecord>& history);

struct SweepRow {
  double lambda = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  double mae_mean = 0.0;
  double mae_std = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// runs[l][s]: lambda l, seed s; empty when that run diverged.
  std::vector<std::vector<std::optional<SeedRun>>> runs;
};

/// One run per (lambda, seed), spread over at most `threads` workers. Results
/// are stored by index, so they do not depend on scheduling.
SweepResult run_sweep(const ExperimentConfig& config, std::span<const double> lambdas, std::size_t threads);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Worker count for sweeps: SRDML_THREADS when set, else the OpenMP default.
std::size_t sweep_threads();

std::vector<double> parse_lambda_list(const std::string& text);

struct AblationArm {
  std::vector<SeedRun> runs;
  double rmse_mean = 0.0;
  double mae_mean = 0.0;
  /// Relation matrix averaged over seeds.
  RelationMatrix relation;
};

struct AblationReport {
  AblationArm adaptive;
  AblationArm fixed;
};

AblationReport run_ablation(const ExperimentConfig& config);
nlohmann::json ablation_json(const AblationReport& report, const ExperimentConfig& config);

int cmd_gen_data(const std::filesystem::path& config_path, const std::filesystem::path& out_dir, std::ostream& out,
                 std::ostream& err);
int cmd_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);
int cmd_sweep(const std::filesystem::path& config_path, const std::vector<double>& lambdas, std::ostream& out,
              std::ostream& err);
int cmd_ablation(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);
/// kind is one of relation_heatmap, saliency, spectrum.
int cmd_export(const std::filesystem::path& run_dir, const std::string& kind, std::ostream& out, std::ostream& err);

}  // namespace srdml

#pragma once

// Joint optimization of task losses plus the saliency regularizer by Adam,
// with single-task, hard-sharing and fixed-relation baselines.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srdml/diagnostics.hpp"
#include "srdml/loss.hpp"
#include "srdml/model.hpp"
#include "srdml/regularizer.hpp"
#include "srdml/synthetic.hpp"

namespace srdml {

enum class TrainMode { Srdml, Stl, HardShare, SrdmlFixedOmega };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  TrainMode mode = TrainMode::Srdml;
  double lambda = 0.5;
  DistanceMetric metric;
  std::size_t epochs = 1000;
  /// Rows per task per step; 0 means full batch.
  std::size_t batch_size = 0;
  double lr_model = 1e-2;
  double lr_relation = 1e-1;
  AdamSettings adam;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Mse;
  /// Cap on the rows (across all tasks) whose saliency enters the penalty; 0 uses the whole batch.
  std::size_t penalty_rows = 0;
  /// Record the bound term B every epoch.
  bool track_bound = false;

  void validate() const;
  bool uses_relation() const noexcept { return mode == TrainMode::Srdml || mode == TrainMode::SrdmlFixedOmega; }
};

/// Loss became NaN or infinite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t epoch, std::size_t batch, std::optional<std::size_t> last_stable_epoch);
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }
  std::optional<std::size_t> last_stable_epoch() const noexcept { return last_stable_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
  std::optional<std::size_t> last_stable_;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<Tensor* const> params);
};

/// One bias-corrected Adam update of every parameter in place.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               const AdamSettings& settings);

/// Per-task inputs and targets for one optimization step.
struct Batch {
  std::vector<Tensor> x;
  std::vector<Tensor> y;
};

struct LossTerms {
  ad::Var total;
  std::vector<ad::Var> task_losses;
  std::optional<PenaltyTerms> penalty;
};

/// Rows whose saliency the penalty compares: the first rows of each task's
/// batch, stacked, capped by `penalty_rows`.
Tensor penalty_inputs(const Batch& batch, std::size_t penalty_rows);

/// Mean task loss over tasks and samples plus the penalty. In single-task mode
/// the task losses are summed instead, so each replicated model sees exactly
/// its own task's gradient.
LossTerms total_loss(const BoundModel& model, std::span<const ad::Var> raw_relation, const Batch& batch,
                     const TrainConfig& config);

struct EpochRecord {
  double total = 0.0;
  std::vector<double> task_losses;
  double penalty = 0.0;
  std::optional<double> bound;
};

struct TaskMetrics {
  std::optional<double> rmse;
  std::optional<double> mae;
  std::optional<double> accuracy;
  std::optional<double> auc;
  std::optional<double> precision;
  std::optional<double> recall;
};

struct Metrics {
  std::vector<TaskMetrics> tasks;
  TaskMetrics average;
};

struct RunResult {
  MultiTaskModel model;
  std::optional<RelationParams> relation;
  std::optional<RelationMatrix> relation_matrix;
  std::vector<EpochRecord> history;
  Metrics train_metrics;
};

RunResult fit(const MultiTaskDataset& data, const ModelSpec& spec, const TrainConfig& config);

Metrics evaluate(const MultiTaskModel& model, const MultiTaskDataset& data, LossKind loss);

/// Mann-Whitney AUC with ties counted one half; empty when only one class is present.
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

}  // namespace srdml

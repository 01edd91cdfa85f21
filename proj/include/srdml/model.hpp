#pragma once

// Shared trunk h and per-task heads f_t, so task t predicts f_t(h(x)).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "srdml/autodiff.hpp"
#include "srdml/tensor.hpp"

namespace srdml {

enum class TrunkKind { Identity, Affine, Mlp };
enum class HeadKind { Linear, Mlp };
enum class Activation { Tanh, Sigmoid, Softplus };
enum class TaskKind { Regression, BinaryClassification };

struct ModelSpec {
  std::size_t input_dim = 20;
  TrunkKind trunk = TrunkKind::Identity;
  std::vector<std::size_t> trunk_widths;  // hidden widths of an mlp trunk
  std::size_t feature_dim = 20;
  HeadKind head = HeadKind::Linear;
  std::vector<std::size_t> head_widths;  // hidden widths of an mlp head
  Activation activation = Activation::Tanh;
  std::size_t num_tasks = 12;
  TaskKind task_kind = TaskKind::Regression;
  bool head_bias = true;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

/// One fully connected layer, y = x W + b, with W stored [in, out] and b [1, out].
struct Dense {
  Tensor weight;
  std::optional<Tensor> bias;
};

using Layers = std::vector<Dense>;

struct MultiTaskModel {
  ModelSpec spec;
  /// One entry when the trunk is shared; one per task when it is replicated (single-task learning).
  std::vector<Layers> trunks;
  std::vector<Layers> heads;

  bool shared_trunk() const noexcept { return trunks.size() == 1; }
  const Layers& trunk_for(std::size_t task) const { return shared_trunk() ? trunks.front() : trunks.at(task); }
};

/// Xavier-uniform weights, zero biases, deterministic in `seed`.
MultiTaskModel init_params(const ModelSpec& spec, std::uint64_t seed);

/// Copy the trunk so every task owns its own (no sharing at all).
MultiTaskModel replicate_trunk(MultiTaskModel model);

// Parameters placed on a tape as leaves.
struct DenseVars {
  ad::Var weight;
  std::optional<ad::Var> bias;
};

struct BoundModel {
  const ModelSpec* spec = nullptr;
  std::vector<std::vector<DenseVars>> trunks;
  std::vector<std::vector<DenseVars>> heads;

  const std::vector<DenseVars>& trunk_for(std::size_t task) const {
    return trunks.size() == 1 ? trunks.front() : trunks.at(task);
  }
  /// Every parameter leaf, trunk layers first, in a stable order.
  std::vector<ad::Var> parameters() const;
};

BoundModel bind(ad::Tape& tape, const MultiTaskModel& model, bool requires_grad);

/// Flat list of parameter tensors in the same order as BoundModel::parameters().
std::vector<Tensor*> parameter_tensors(MultiTaskModel& model);

/// A = h(X). The task index only matters when the trunk is replicated.
ad::Var trunk_forward(const BoundModel& model, ad::Var x, std::size_t task = 0);
/// Raw score (regression) or logit (classification) of head t, shape [n,1].
ad::Var head_forward(const BoundModel& model, std::size_t task, ad::Var features);
/// Row i holds d f_t(A_i) / d A_i. Computed as the gradient of the batch sum,
/// valid because each output row depends only on its own input row.
ad::Var input_saliency(const BoundModel& model, std::size_t task, ad::Var features, bool higher_order);

// Numeric conveniences that build a private tape.
Tensor trunk_forward(const MultiTaskModel& model, const Tensor& x, std::size_t task = 0);
Tensor head_forward(const MultiTaskModel& model, std::size_t task, const Tensor& features);
Tensor predict(const MultiTaskModel& model, std::size_t task, const Tensor& x);
Tensor input_saliency(const MultiTaskModel& model, std::size_t task, const Tensor& features);

std::string to_string(TrunkKind k);
std::string to_string(HeadKind k);
std::string to_string(Activation a);
std::string to_string(TaskKind k);
TrunkKind parse_trunk_kind(const std::string& s);
HeadKind parse_head_kind(const std::string& s);
Activation parse_activation(const std::string& s);
TaskKind parse_task_kind(const std::string& s);

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

nlohmann::json model_to_json(const MultiTaskModel& model);
MultiTaskModel model_from_json(const nlohmann::json& j);
void save_model(const MultiTaskModel& model, const std::filesystem::path& path);
MultiTaskModel load_model(const std::filesystem::path& path);

}  // namespace srdml

#include "srdml/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "srdml/kernels.hpp"
#include "srdml/rng.hpp"

namespace srdml {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Srdml: return "srdml";
    case TrainMode::Stl: return "stl";
    case TrainMode::HardShare: return "hard_share";
    case TrainMode::SrdmlFixedOmega: return "srdml_fixed_omega";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "srdml") return TrainMode::Srdml;
  if (s == "stl") return TrainMode::Stl;
  if (s == "hard_share") return TrainMode::HardShare;
  if (s == "srdml_fixed_omega") return TrainMode::SrdmlFixedOmega;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("train: lambda must be non-negative");
  if (!(lr_model > 0) || !(lr_relation > 0)) throw std::invalid_argument("train: learning rates must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("train: Adam betas must lie in [0,1)");
  }
  if (!(adam.eps > 0)) throw std::invalid_argument("train: Adam epsilon must be positive");
  if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
}

namespace {

std::string divergence_message(std::size_t epoch, std::size_t batch, std::optional<std::size_t> last) {
  std::string msg = "training diverged (non-finite loss) at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batch);
  msg += last ? "; last stable epoch " + std::to_string(*last) : "; no stable epoch";
  return msg;
}

}  // namespace

TrainingError::TrainingError(std::size_t epoch, std::size_t batch, std::optional<std::size_t> last_stable_epoch)
    : std::runtime_error(divergence_message(epoch, batch, last_stable_epoch)),
      epoch_(epoch),
      batch_(batch),
      last_stable_(last_stable_epoch) {}

AdamState AdamState::zeros_like(std::span<Tensor* const> params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->shape()));
    s.v.push_back(Tensor::zeros(p->shape()));
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               const AdamSettings& settings) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(settings.beta1, t);
  const double correction2 = 1.0 - std::pow(settings.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    if (g.shape() != w.shape()) throw ShapeError("adam_step: gradient shape mismatch");
    auto& m = state.m[p].storage();
    auto& v = state.v[p].storage();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = settings.beta1 * m[i] + (1.0 - settings.beta1) * g[i];
      v[i] = settings.beta2 * v[i] + (1.0 - settings.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + settings.eps);
    }
  }
}

Tensor penalty_inputs(const Batch& batch, std::size_t penalty_rows) {
  const auto T = batch.x.size();
  std::size_t per_task = 0;
  if (penalty_rows > 0) per_task = std::max<std::size_t>(1, (penalty_rows + T - 1) / T);
  std::vector<Tensor> parts;
  parts.reserve(T);
  for (const auto& x : batch.x) {
    const auto rows = per_task == 0 ? x.rows() : std::min(per_task, x.rows());
    parts.push_back(slice_rows(x, 0, rows));
  }
  return vstack(parts);
}

LossTerms total_loss(const BoundModel& model, std::span<const ad::Var> raw_relation, const Batch& batch,
                     const TrainConfig& config) {
  const auto T = model.heads.size();
  if (batch.x.size() != T || batch.y.size() != T) throw std::invalid_argument("total_loss: batch/task count mismatch");
  ad::Tape& tape = raw_relation.empty() ? model.heads.front().front().weight.tape() : raw_relation.front().tape();
  LossTerms terms;
  for (std::size_t t = 0; t < T; ++t) {
    ad::Var a = trunk_forward(model, tape.constant(batch.x[t]), t);
    ad::Var out = head_forward(model, t, a);
    terms.task_losses.push_back(task_loss(config.loss, out, tape.constant(batch.y[t])));
  }
  ad::Var task_sum = terms.task_losses.front();
  for (std::size_t t = 1; t < T; ++t) task_sum = ad::add(task_sum, terms.task_losses[t]);
  terms.total = config.mode == TrainMode::Stl ? task_sum : ad::scalar_mul(1.0 / static_cast<double>(T), task_sum);

  if (config.uses_relation() && config.lambda > 0) {
    const Tensor rows = penalty_inputs(batch, config.penalty_rows);
    ad::Var features = model.spec->trunk == TrunkKind::Identity ? tape.leaf(rows, true)
                                                                  : trunk_forward(model, tape.constant(rows));
    // A constant-bound trunk still needs a differentiable input for the saliency.
    if (!features.requires_grad()) features = tape.leaf(features.value(), true);
    terms.penalty = penalty(model, features, raw_relation, config.metric, config.lambda);
    terms.total = ad::add(terms.total, terms.penalty->value);
  }
  return terms;
}

namespace {

/// Per-task row orders for one epoch; identity when training full-batch.
std::vector<std::vector<std::size_t>> epoch_orders(const MultiTaskDataset& data, const TrainConfig& config,
                                                   std::size_t epoch) {
  const Rng shuffle = Rng(config.seed).split(0x5eed5).split(epoch);
  std::vector<std::vector<std::size_t>> orders;
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    std::vector<std::size_t> order(data.x[t].rows());
    std::iota(order.begin(), order.end(), 0);
    if (config.batch_size > 0 && config.batch_size < order.size()) {
      Rng rng = shuffle.split(t);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    orders.push_back(std::move(order));
  }
  return orders;
}

std::size_t steps_per_epoch(const MultiTaskDataset& data, const TrainConfig& config) {
  std::size_t largest = 0;
  for (const auto& x : data.x) largest = std::max(largest, x.rows());
  if (config.batch_size == 0 || config.batch_size >= largest) return 1;
  return (largest + config.batch_size - 1) / config.batch_size;
}

Batch make_batch(const MultiTaskDataset& data, const std::vector<std::vector<std::size_t>>& orders,
                 const TrainConfig& config, std::size_t step) {
  Batch b;
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    const auto& order = orders[t];
    if (config.batch_size == 0 || config.batch_size >= order.size()) {
      b.x.push_back(data.x[t]);
      b.y.push_back(data.y[t]);
      continue;
    }
    // Tasks with fewer rows than the largest wrap around their own order.
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < config.batch_size; ++i) rows.push_back(order[(step * config.batch_size + i) % order.size()]);
    b.x.push_back(gather_rows(data.x[t], rows));
    b.y.push_back(gather_rows(data.y[t], rows));
  }
  return b;
}

bool finite_all(const std::vector<ad::Var>& vars) {
  return std::all_of(vars.begin(), vars.end(), [](const ad::Var& v) { return v.value().all_finite(); });
}

}  // namespace

RunResult fit(const MultiTaskDataset& data, const ModelSpec& spec, const TrainConfig& config) {
  config.validate();
  spec.validate();
  if (data.num_tasks() != spec.num_tasks) {
    throw std::invalid_argument("fit: dataset has " + std::to_string(data.num_tasks()) + " tasks, model expects " +
                                std::to_string(spec.num_tasks));
  }
  for (const auto& x : data.x) {
    if (x.cols() != spec.input_dim) throw ShapeError("fit: dataset dimension does not match model input_dim");
  }

  RunResult result;
  result.model = init_params(spec, config.seed);
  if (config.mode == TrainMode::Stl) result.model = replicate_trunk(std::move(result.model));
  RelationParams relation = RelationParams::uniform(spec.num_tasks);

  const bool learn_relation = config.mode == TrainMode::Srdml && config.lambda > 0;
  auto params = parameter_tensors(result.model);
  AdamState model_state = AdamState::zeros_like(params);
  std::vector<Tensor> relation_tensors;
  for (double r : relation.raw) relation_tensors.push_back(Tensor::scalar(r));
  std::vector<Tensor*> relation_ptrs;
  for (auto& r : relation_tensors) relation_ptrs.push_back(&r);
  AdamState relation_state = AdamState::zeros_like(relation_ptrs);

  const auto steps = steps_per_epoch(data, config);
  std::optional<std::size_t> last_stable;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto orders = epoch_orders(data, config, epoch);
    EpochRecord record;
    record.task_losses.assign(spec.num_tasks, 0.0);
    double bound_acc = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const Batch batch = make_batch(data, orders, config, step);
      ad::Tape tape;
      const BoundModel bound = bind(tape, result.model, true);
      const auto raw = bind(tape, relation, learn_relation);
      const LossTerms terms = total_loss(bound, raw, batch, config);
      if (!std::isfinite(terms.total.item())) throw TrainingError(epoch, step, last_stable);

      std::vector<ad::Var> wrt = bound.parameters();
      if (learn_relation) wrt.insert(wrt.end(), raw.begin(), raw.end());
      const auto grads = ad::gradient(terms.total, wrt, false);
      if (!finite_all(grads)) throw TrainingError(epoch, step, last_stable);

      double task_mean = 0.0;
      for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        const double l = terms.task_losses[t].item();
        record.task_losses[t] += l / static_cast<double>(steps);
        task_mean += l / static_cast<double>(spec.num_tasks);
      }
      const double pen = terms.penalty ? terms.penalty->value.item() : 0.0;
      record.penalty += pen / static_cast<double>(steps);
      record.total += (task_mean + pen) / static_cast<double>(steps);
      if (config.track_bound) {
        double b = 0.0;
        if (terms.penalty) {
          std::vector<double> w, d;
          for (const auto& v : terms.penalty->weights) w.push_back(v.item());
          for (const auto& v : terms.penalty->distances) d.push_back(v.item());
          b = bound_from_distances(w, d);
        } else {
          const Tensor rows = penalty_inputs(batch, config.penalty_rows);
          b = bound_term_B(relation, result.model, trunk_forward(result.model, rows), config.metric);
        }
        bound_acc += b / static_cast<double>(steps);
      }

      std::vector<Tensor> model_grads;
      model_grads.reserve(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) model_grads.push_back(grads[p].value());
      adam_step(params, model_grads, model_state, config.lr_model, config.adam);
      if (learn_relation) {
        std::vector<Tensor> rel_grads;
        for (std::size_t p = 0; p < relation_ptrs.size(); ++p) rel_grads.push_back(grads[params.size() + p].value());
        adam_step(relation_ptrs, rel_grads, relation_state, config.lr_relation, config.adam);
        for (std::size_t p = 0; p < relation_ptrs.size(); ++p) relation.raw[p] = relation_tensors[p].item();
      }
    }
    if (config.track_bound) record.bound = bound_acc;
    result.history.push_back(std::move(record));
    last_stable = epoch;
  }

  if (config.uses_relation()) {
    result.relation = relation;
    result.relation_matrix = relation_matrix(relation);
  }
  result.train_metrics = evaluate(result.model, data, config.loss);
  return result;
}

std::optional<double> auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: score/label length mismatch");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0, negatives = 0, rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] > 0.5) {
        positives += 1;
        rank_sum += mid_rank;
      } else {
        negatives += 1;
      }
    }
    i = j;
  }
  if (positives == 0 || negatives == 0) return std::nullopt;
  return (rank_sum - positives * (positives + 1) / 2) / (positives * negatives);
}

namespace {

void accumulate_average(std::optional<double>& into, const std::optional<double>& v, std::size_t& count) {
  if (!v) return;
  into = into.value_or(0.0) + *v;
  ++count;
}

}  // namespace

Metrics evaluate(const MultiTaskModel& model, const MultiTaskDataset& data, LossKind loss) {
  Metrics metrics;
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    const Tensor out = predict(model, t, data.x[t]);
    const auto n = static_cast<double>(out.numel());
    TaskMetrics m;
    if (loss == LossKind::Mse) {
      double se = 0, ae = 0;
      for (std::size_t i = 0; i < out.numel(); ++i) {
        const double e = out[i] - data.y[t][i];
        se += e * e;
        ae += std::abs(e);
      }
      m.rmse = std::sqrt(se / n);
      m.mae = ae / n;
    } else {
      std::vector<double> scores(out.numel()), labels(out.numel());
      double tp = 0, fp = 0, fn = 0, correct = 0;
      for (std::size_t i = 0; i < out.numel(); ++i) {
        scores[i] = kernels::apply_unary(kernels::UnaryOp::Sigmoid, out[i]);
        labels[i] = data.y[t][i];
        const bool predicted = scores[i] >= 0.5;
        const bool actual = labels[i] > 0.5;
        correct += predicted == actual;
        tp += predicted && actual;
        fp += predicted && !actual;
        fn += !predicted && actual;
      }
      m.accuracy = correct / n;
      m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      m.auc = auc(scores, labels);
    }
    metrics.tasks.push_back(m);
  }
  std::size_t c_rmse = 0, c_mae = 0, c_acc = 0, c_auc = 0, c_prec = 0, c_rec = 0;
  for (const auto& m : metrics.tasks) {
    accumulate_average(metrics.average.rmse, m.rmse, c_rmse);
    accumulate_average(metrics.average.mae, m.mae, c_mae);
    accumulate_average(metrics.average.accuracy, m.accuracy, c_acc);
    accumulate_average(metrics.average.auc, m.auc, c_auc);
    accumulate_average(metrics.average.precision, m.precision, c_prec);
    accumulate_average(metrics.average.recall, m.recall, c_rec);
  }
  auto finish = [](std::optional<double>& v, std::size_t c) {
    if (v) *v /= static_cast<double>(c);
  };
  finish(metrics.average.rmse, c_rmse);
  finish(metrics.average.mae, c_mae);
  finish(metrics.average.accuracy, c_acc);
  finish(metrics.average.auc, c_auc);
  finish(metrics.average.precision, c_prec);
  finish(metrics.average.recall, c_rec);
  return metrics;
}

}  // namespace srdml

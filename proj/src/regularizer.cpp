#include "srdml/regularizer.hpp"

#include <stdexcept>

#include "srdml/kernels.hpp"

namespace srdml {

std::string to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::SquaredL2: return "squared_l2";
    case DistanceKind::L1Smoothed: return "l1_smoothed";
    case DistanceKind::Cosine: return "cosine";
  }
  return "?";
}

DistanceKind parse_distance_kind(const std::string& s) {
  if (s == "squared_l2") return DistanceKind::SquaredL2;
  if (s == "l1_smoothed") return DistanceKind::L1Smoothed;
  if (s == "cosine") return DistanceKind::Cosine;
  throw std::invalid_argument("unknown distance metric '" + s + "'");
}

std::size_t pair_index(std::size_t num_tasks, std::size_t i, std::size_t j) {
  if (i == j || i >= num_tasks || j >= num_tasks) throw std::invalid_argument("pair_index: invalid pair");
  if (i > j) std::swap(i, j);
  // Pairs (0,1..T-1), (1,2..T-1), ...
  return i * num_tasks - i * (i + 1) / 2 + (j - i - 1);
}

RelationParams RelationParams::uniform(std::size_t num_tasks, double raw_value) {
  if (num_tasks < 2) throw std::invalid_argument("relation needs at least two tasks");
  return RelationParams{num_tasks, std::vector<double>(num_pairs(num_tasks), raw_value)};
}

std::vector<ad::Var> bind(ad::Tape& tape, const RelationParams& relation, bool requires_grad) {
  std::vector<ad::Var> out;
  out.reserve(relation.raw.size());
  for (double r : relation.raw) out.push_back(tape.leaf(Tensor::scalar(r), requires_grad));
  return out;
}

std::vector<ad::Var> normalized_weights(std::span<const ad::Var> raw) {
  if (raw.empty()) throw std::invalid_argument("normalized_weights: no pairs");
  std::vector<ad::Var> omega;
  omega.reserve(raw.size());
  for (const auto& r : raw) omega.push_back(ad::softplus(r));
  ad::Var total = omega.front();
  for (std::size_t p = 1; p < omega.size(); ++p) total = ad::add(total, omega[p]);
  for (auto& w : omega) w = ad::div(w, total);
  return omega;
}

std::vector<double> normalized_weights(const RelationParams& relation) {
  std::vector<double> omega;
  omega.reserve(relation.raw.size());
  double total = 0.0;
  for (double r : relation.raw) {
    omega.push_back(kernels::apply_unary(kernels::UnaryOp::Softplus, r));
    total += omega.back();
  }
  for (auto& w : omega) w /= total;
  return omega;
}

namespace {

ad::Var normalize_rows(ad::Var g) {
  ad::Tape& tape = g.tape();
  const auto k = g.value().cols();
  // The tiny offset inside the root keeps the derivative finite on all-zero rows.
  ad::Var norm = ad::sqrt(ad::add(ad::row_sum(ad::square(g)), tape.scalar(1e-24)));
  return ad::div(g, ad::repeat_cols(ad::add(norm, tape.scalar(1e-12)), k));
}

}  // namespace

ad::Var pairwise_distance(ad::Var gi, ad::Var gj, const DistanceMetric& metric) {
  if (gi.shape() != gj.shape() || gi.value().rank() != 2) {
    throw ShapeError("pairwise_distance: saliency shapes " + shape_to_string(gi.shape()) + " and " +
                     shape_to_string(gj.shape()) + " differ");
  }
  const double rows = static_cast<double>(gi.value().rows());
  if (metric.normalize_gradients || metric.kind == DistanceKind::Cosine) {
    gi = normalize_rows(gi);
    gj = normalize_rows(gj);
  }
  ad::Var diff = ad::sub(gi, gj);
  switch (metric.kind) {
    case DistanceKind::SquaredL2: return ad::scalar_mul(1.0 / rows, ad::sum(ad::square(diff)));
    case DistanceKind::L1Smoothed: return ad::scalar_mul(1.0 / rows, ad::sum(ad::abs_smooth(diff)));
    case DistanceKind::Cosine: return ad::scalar_mul(0.5 / rows, ad::sum(ad::square(diff)));
  }
  throw std::logic_error("unreachable");
}

std::vector<ad::Var> pairwise_distances(std::span<const ad::Var> saliencies, const DistanceMetric& metric) {
  std::vector<ad::Var> out;
  out.reserve(num_pairs(saliencies.size()));
  for (std::size_t i = 0; i < saliencies.size(); ++i)
    for (std::size_t j = i + 1; j < saliencies.size(); ++j) out.push_back(pairwise_distance(saliencies[i], saliencies[j], metric));
  return out;
}

ad::Var weighted_penalty(std::span<const ad::Var> weights, std::span<const ad::Var> distances, double lambda) {
  if (weights.size() != distances.size() || weights.empty()) {
    throw std::invalid_argument("weighted_penalty: weights and distances must pair up");
  }
  ad::Var acc = ad::mul(weights[0], distances[0]);
  for (std::size_t p = 1; p < weights.size(); ++p) acc = ad::add(acc, ad::mul(weights[p], distances[p]));
  return ad::scalar_mul(lambda, acc);
}

PenaltyTerms penalty(const BoundModel& model, ad::Var features, std::span<const ad::Var> raw_relation,
                     const DistanceMetric& metric, double lambda) {
  if (lambda < 0) throw std::invalid_argument("penalty: lambda must be non-negative");
  const auto tasks = model.heads.size();
  if (raw_relation.size() != num_pairs(tasks)) throw std::invalid_argument("penalty: relation size mismatch");
  std::vector<ad::Var> saliency;
  saliency.reserve(tasks);
  for (std::size_t t = 0; t < tasks; ++t) saliency.push_back(input_saliency(model, t, features, true));
  PenaltyTerms terms;
  terms.distances = pairwise_distances(saliency, metric);
  terms.weights = normalized_weights(raw_relation);
  terms.value = weighted_penalty(terms.weights, terms.distances, lambda);
  return terms;
}

}  // namespace srdml

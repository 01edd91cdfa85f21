#pragma once

// Saliency regularizer: lambda * sum_{i<j} (w_ij / W) * dist(grad_A f_i, grad_A f_j)
// with learnable edge weights w_ij = softplus(rho_ij) > 0 and W = sum w_ij.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "srdml/autodiff.hpp"
#include "srdml/model.hpp"

namespace srdml {

enum class DistanceKind { SquaredL2, L1Smoothed, Cosine };

struct DistanceMetric {
  DistanceKind kind = DistanceKind::SquaredL2;
  bool normalize_gradients = false;
};

std::string to_string(DistanceKind k);
DistanceKind parse_distance_kind(const std::string& s);

inline std::size_t num_pairs(std::size_t num_tasks) { return num_tasks * (num_tasks - 1) / 2; }

/// Position of the unordered pair (i, j), i != j, in row-major upper-triangle order.
std::size_t pair_index(std::size_t num_tasks, std::size_t i, std::size_t j);

/// Free parameters rho_ij, one per task pair i < j.
struct RelationParams {
  std::size_t num_tasks = 0;
  std::vector<double> raw;

  /// All pairs start with the same raw value, i.e. uniform normalized weights.
  static RelationParams uniform(std::size_t num_tasks, double raw_value = 0.0);
};

/// Scalar leaves for the raw parameters, one per pair.
std::vector<ad::Var> bind(ad::Tape& tape, const RelationParams& relation, bool requires_grad);

/// omega_ij / W as differentiable scalars.
std::vector<ad::Var> normalized_weights(std::span<const ad::Var> raw);
/// omega_ij / W as plain numbers.
std::vector<double> normalized_weights(const RelationParams& relation);

/// Mean over rows of the row-wise distance between two saliency maps of shape [n,K].
/// Cosine distance is computed as 0.5 * ||g_i/|g_i| - g_j/|g_j| ||^2 = 1 - cos.
ad::Var pairwise_distance(ad::Var gi, ad::Var gj, const DistanceMetric& metric);

/// All pairwise distances in pair_index order.
std::vector<ad::Var> pairwise_distances(std::span<const ad::Var> saliencies, const DistanceMetric& metric);

/// lambda * sum_p weights[p] * distances[p].
ad::Var weighted_penalty(std::span<const ad::Var> weights, std::span<const ad::Var> distances, double lambda);

struct PenaltyTerms {
  ad::Var value;
  std::vector<ad::Var> distances;
  std::vector<ad::Var> weights;
};

/// The full penalty: saliency of every head on `features` (kept differentiable),
/// pairwise distances, normalized weights. Gradients reach trunk, heads and raw relation.
PenaltyTerms penalty(const BoundModel& model, ad::Var features, std::span<const ad::Var> raw_relation,
                     const DistanceMetric& metric, double lambda);

}  // namespace srdml

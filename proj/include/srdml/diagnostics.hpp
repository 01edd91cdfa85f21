#pragma once

// Interpretability and generalization-bound ingredients: the learned task
// relation matrix, its graph Laplacian and spectrum, the tightest bound term
// B, the clamped empirical risk, and SVG heatmaps.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srdml/loss.hpp"
#include "srdml/model.hpp"
#include "srdml/regularizer.hpp"
#include "srdml/synthetic.hpp"

namespace srdml {

using SquareMatrix = std::vector<std::vector<double>>;

/// Symmetric, zero diagonal, off-diagonal upper triangle summing to one.
struct RelationMatrix {
  SquareMatrix values;
  std::size_t size() const noexcept { return values.size(); }
};

RelationMatrix relation_matrix(const RelationParams& relation);
RelationMatrix relation_matrix_from(const SquareMatrix& values);

/// L = D - M with D the diagonal of row sums.
SquareMatrix laplacian(const RelationMatrix& m);

/// All eigenvalues of a symmetric matrix in ascending order, by cyclic Jacobi
/// rotations. Throws std::invalid_argument when the input is not symmetric.
std::vector<double> symmetric_eigenvalues(const SquareMatrix& a);

/// Smallest eigenvalue above `tol`; empty when the graph has no such eigenvalue.
std::optional<double> lambda_min_nonzero(const SquareMatrix& l, double tol = 1e-9);

/// sqrt(sum over ordered pairs i != j of w_ij * dist_ij^2) from normalized
/// weights and distances listed in pair_index order.
double bound_from_distances(std::span<const double> weights, std::span<const double> distances);

/// Saliency distance of every task pair on features A, in pair_index order.
std::vector<double> saliency_distances(const MultiTaskModel& model, const Tensor& features,
                                       const DistanceMetric& metric);

/// Tightest B for the current model on features A.
double bound_term_B(const RelationParams& relation, const MultiTaskModel& model, const Tensor& features,
                    const DistanceMetric& metric);
double bound_term_B(const RelationMatrix& relation, const MultiTaskModel& model, const Tensor& features,
                    const DistanceMetric& metric);

/// (1/T) sum_t (1/n) sum_i min(max(loss, 0), 1), evaluated on each task's own data.
double empirical_risk(const MultiTaskModel& model, const MultiTaskDataset& data, LossKind loss);

/// |d f_t / d A| for every row of A, shape [n,K].
Tensor saliency_intensity(const MultiTaskModel& model, std::size_t task, const Tensor& features);

struct HeatmapLabels {
  std::string title;
  std::string row_axis;
  std::string col_axis;
  std::string row_prefix;
  std::string col_prefix;
};

/// Standalone SVG: one cell per value on a linear color scale, with the
/// minimum and maximum annotated.
std::string heatmap_svg(const SquareMatrix& values, const HeatmapLabels& labels);

std::string saliency_heatmap(const MultiTaskModel& model, std::size_t task, const Tensor& features);
std::string relation_heatmap(const RelationMatrix& m);

}  // namespace srdml

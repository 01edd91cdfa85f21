#include "srdml/diagnostics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace srdml {

RelationMatrix relation_matrix(const RelationParams& relation) {
  const auto T = relation.num_tasks;
  if (T < 2) throw std::invalid_argument("relation_matrix: need at least two tasks");
  const auto w = normalized_weights(relation);
  RelationMatrix m{SquareMatrix(T, std::vector<double>(T, 0.0))};
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = i + 1; j < T; ++j) m.values[i][j] = m.values[j][i] = w[pair_index(T, i, j)];
  return m;
}

RelationMatrix relation_matrix_from(const SquareMatrix& values) {
  const auto T = values.size();
  for (const auto& row : values) {
    if (row.size() != T) throw std::invalid_argument("relation matrix must be square");
  }
  for (std::size_t i = 0; i < T; ++i) {
    if (values[i][i] != 0.0) throw std::invalid_argument("relation matrix diagonal must be zero");
    for (std::size_t j = 0; j < T; ++j) {
      if (values[i][j] < 0) throw std::invalid_argument("relation matrix entries must be non-negative");
      if (values[i][j] != values[j][i]) throw std::invalid_argument("relation matrix must be symmetric");
    }
  }
  return RelationMatrix{values};
}

SquareMatrix laplacian(const RelationMatrix& m) {
  const auto T = m.size();
  SquareMatrix l(T, std::vector<double>(T, 0.0));
  for (std::size_t i = 0; i < T; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      if (j == i) continue;
      degree += m.values[i][j];
      l[i][j] = -m.values[i][j];
    }
    l[i][i] = degree;
  }
  return l;
}

std::vector<double> symmetric_eigenvalues(const SquareMatrix& input) {
  const auto n = input.size();
  SquareMatrix a = input;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() != n) throw std::invalid_argument("eigenvalues: matrix must be square");
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a[i][j]));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a[i][j] - a[j][i]) > 1e-12 * std::max(1.0, scale)) {
        throw std::invalid_argument("eigenvalues: matrix is not symmetric");
      }
    }

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off <= 1e-30 * std::max(1.0, scale * scale)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        a[p][q] = a[q][p] = 0.0;
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
  std::sort(eig.begin(), eig.end());
  return eig;
}

std::optional<double> lambda_min_nonzero(const SquareMatrix& l, double tol) {
  for (double v : symmetric_eigenvalues(l)) {
    if (v > tol) return v;
  }
  return std::nullopt;
}

double bound_from_distances(std::span<const double> weights, std::span<const double> distances) {
  if (weights.size() != distances.size()) throw std::invalid_argument("bound: weights and distances differ in size");
  double acc = 0.0;
  for (std::size_t p = 0; p < weights.size(); ++p) acc += weights[p] * distances[p] * distances[p];
  // Each unordered pair appears twice in the ordered-pair sum.
  return std::sqrt(2.0 * acc);
}

std::vector<double> saliency_distances(const MultiTaskModel& model, const Tensor& features,
                                       const DistanceMetric& metric) {
  ad::Tape tape;
  auto bound = bind(tape, model, false);
  ad::Var a = tape.leaf(features, true);
  std::vector<ad::Var> saliency;
  for (std::size_t t = 0; t < model.heads.size(); ++t) saliency.push_back(input_saliency(bound, t, a, false));
  std::vector<double> dist;
  for (const auto& d : pairwise_distances(saliency, metric)) dist.push_back(d.item());
  return dist;
}

double bound_term_B(const RelationParams& relation, const MultiTaskModel& model, const Tensor& features,
                    const DistanceMetric& metric) {
  return bound_from_distances(normalized_weights(relation), saliency_distances(model, features, metric));
}

double bound_term_B(const RelationMatrix& relation, const MultiTaskModel& model, const Tensor& features,
                    const DistanceMetric& metric) {
  const auto T = relation.size();
  std::vector<double> w(num_pairs(T));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = i + 1; j < T; ++j) w[pair_index(T, i, j)] = relation.values[i][j];
  return bound_from_distances(w, saliency_distances(model, features, metric));
}

double empirical_risk(const MultiTaskModel& model, const MultiTaskDataset& data, LossKind loss) {
  const auto T = data.num_tasks();
  if (T == 0) throw std::invalid_argument("empirical_risk: empty dataset");
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor out = predict(model, t, data.x[t]);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += std::clamp(sample_loss(loss, out[i], data.y[t][i]), 0.0, 1.0);
    total += acc / static_cast<double>(out.numel());
  }
  return total / static_cast<double>(T);
}

Tensor saliency_intensity(const MultiTaskModel& model, std::size_t task, const Tensor& features) {
  Tensor g = input_saliency(model, task, features);
  for (auto& v : g.storage()) v = std::abs(v);
  return g;
}

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Dark purple to yellow, linear in t in [0, 1].
std::string color(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), stops.size() - 2);
  const double f = pos - static_cast<double>(i);
  char buf[8];
  int rgb[3];
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<int>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

}  // namespace

std::string heatmap_svg(const SquareMatrix& values, const HeatmapLabels& labels) {
  const std::size_t rows = values.size();
  const std::size_t cols = rows ? values.front().size() : 0;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& r : values)
    for (double v : r) {
      if (first) lo = hi = v, first = false;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double cell = 24.0, left = 70.0, top = 50.0;
  const double width = left + cell * static_cast<double>(cols) + 30.0;
  const double height = top + cell * static_cast<double>(rows) + 70.0;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) + "\" height=\"" +
         fmt("%.0f", height) + "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt("%.1f", left) + "\" y=\"18\" font-size=\"13\">" + escape(labels.title) + "</text>\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double t = hi > lo ? (values[i][j] - lo) / (hi - lo) : 0.0;
      svg += "<rect x=\"" + fmt("%.1f", left + cell * static_cast<double>(j)) + "\" y=\"" +
             fmt("%.1f", top + cell * static_cast<double>(i)) + "\" width=\"" + fmt("%.0f", cell) + "\" height=\"" +
             fmt("%.0f", cell) + "\" fill=\"" + color(t) + "\"><title>" + fmt("%.6g", values[i][j]) +
             "</title></rect>\n";
    }
    svg += "<text x=\"" + fmt("%.1f", left - 4) + "\" y=\"" + fmt("%.1f", top + cell * (static_cast<double>(i) + 0.65)) +
           "\" text-anchor=\"end\">" + escape(labels.row_prefix) + std::to_string(i) + "</text>\n";
  }
  for (std::size_t j = 0; j < cols; ++j) {
    svg += "<text x=\"" + fmt("%.1f", left + cell * (static_cast<double>(j) + 0.5)) + "\" y=\"" +
           fmt("%.1f", top - 4) + "\" text-anchor=\"middle\">" + escape(labels.col_prefix) + std::to_string(j) +
           "</text>\n";
  }
  const double bottom = top + cell * static_cast<double>(rows);
  svg += "<text x=\"" + fmt("%.1f", left + cell * static_cast<double>(cols) / 2) + "\" y=\"" + fmt("%.1f", bottom + 18) +
         "\" text-anchor=\"middle\">" + escape(labels.col_axis) + "</text>\n";
  svg += "<text x=\"12\" y=\"" + fmt("%.1f", top + cell * static_cast<double>(rows) / 2) +
         "\" transform=\"rotate(-90 12 " + fmt("%.1f", top + cell * static_cast<double>(rows) / 2) +
         ")\" text-anchor=\"middle\">" + escape(labels.row_axis) + "</text>\n";
  svg += "<rect x=\"" + fmt("%.1f", left) + "\" y=\"" + fmt("%.1f", bottom + 30) + "\" width=\"12\" height=\"12\" fill=\"" +
         color(0.0) + "\"/><text x=\"" + fmt("%.1f", left + 16) + "\" y=\"" + fmt("%.1f", bottom + 40) + "\">min " +
         fmt("%.6g", lo) + "</text>\n";
  svg += "<rect x=\"" + fmt("%.1f", left + 110) + "\" y=\"" + fmt("%.1f", bottom + 30) +
         "\" width=\"12\" height=\"12\" fill=\"" + color(1.0) + "\"/><text x=\"" + fmt("%.1f", left + 126) + "\" y=\"" +
         fmt("%.1f", bottom + 40) + "\">max " + fmt("%.6g", hi) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string saliency_heatmap(const MultiTaskModel& model, std::size_t task, const Tensor& features) {
  const Tensor g = saliency_intensity(model, task, features);
  SquareMatrix grid(g.rows(), std::vector<double>(g.cols()));
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t k = 0; k < g.cols(); ++k) grid[i][k] = g.at(i, k);
  return heatmap_svg(grid, {"|saliency| of task " + std::to_string(task), "sample", "feature", "s", "a"});
}

std::string relation_heatmap(const RelationMatrix& m) {
  return heatmap_svg(m.values, {"learned task relation", "task", "task", "t", "t"});
}

}  // namespace srdml

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"

#include "srdml/diagnostics.hpp"
#include "srdml/rng.hpp"

using namespace srdml;

namespace {

MultiTaskModel linear_model(const std::vector<std::vector<double>>& columns) {
  ModelSpec s;
  s.input_dim = s.feature_dim = columns.front().size();
  s.num_tasks = columns.size();
  s.head_bias = false;
  MultiTaskModel m = init_params(s, 0);
  for (std::size_t t = 0; t < columns.size(); ++t)
    for (std::size_t k = 0; k < columns[t].size(); ++k) m.heads[t][0].weight[k] = columns[t][k];
  return m;
}

SquareMatrix random_symmetric(std::size_t n, Rng& rng) {
  SquareMatrix a(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) a[i][j] = a[j][i] = rng.normal();
  return a;
}

std::size_t count(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("relation matrix from raw parameters") {
  const RelationMatrix u = relation_matrix(RelationParams::uniform(4));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(u.values[i][j] == (i == j ? 0.0 : doctest::Approx(1.0 / 6)));

  // softplus(log(e - 1)) = 1 and softplus(log(e^3 - 1)) = 3.
  const RelationParams p{3, {std::log(std::exp(1.0) - 1), std::log(std::exp(1.0) - 1), std::log(std::exp(3.0) - 1)}};
  const RelationMatrix m = relation_matrix(p);
  CHECK(m.values[0][1] == doctest::Approx(0.2));
  CHECK(m.values[0][2] == doctest::Approx(0.2));
  CHECK(m.values[1][2] == doctest::Approx(0.6));
  CHECK(m.values[2][1] == m.values[1][2]);
  CHECK_THROWS_AS(relation_matrix(RelationParams::uniform(1)), std::invalid_argument);
}

TEST_CASE("relation matrix from values is validated") {
  CHECK_NOTHROW(relation_matrix_from({{0, 1}, {1, 0}}));
  CHECK_THROWS_AS(relation_matrix_from({{0, 1}, {0.5, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(relation_matrix_from({{1, 1}, {1, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(relation_matrix_from({{0, -1}, {-1, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(relation_matrix_from({{0, 1, 0}, {1, 0}}), std::invalid_argument);
}

TEST_CASE("Laplacian of a uniform pair and of random graphs") {
  const SquareMatrix l2 = laplacian(relation_matrix(RelationParams::uniform(2)));
  CHECK(l2 == SquareMatrix{{1, -1}, {-1, 1}});

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    RelationParams p = RelationParams::uniform(6);
    for (auto& r : p.raw) r = rng.normal(0, 2);
    const SquareMatrix l = laplacian(relation_matrix(p));
    for (const auto& row : l) {
      double s = 0.0;
      for (double v : row) s += v;
      CHECK(std::abs(s) < 1e-15);
    }
    const auto eig = symmetric_eigenvalues(l);
    CHECK(eig.front() > -1e-12);
    CHECK(std::abs(eig.front()) < 1e-12);
    CHECK(lambda_min_nonzero(l).has_value());
  }
}

TEST_CASE("smallest non-zero Laplacian eigenvalue") {
  // Complete graph on three nodes with unit weights: spectrum {0, 3, 3}.
  const SquareMatrix k3{{2, -1, -1}, {-1, 2, -1}, {-1, -1, 2}};
  CHECK(*lambda_min_nonzero(k3) == doctest::Approx(3.0).epsilon(1e-12));
  // Two nodes joined by a unit edge: spectrum {0, 2}.
  CHECK(*lambda_min_nonzero(SquareMatrix{{1, -1}, {-1, 1}}) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(lambda_min_nonzero(SquareMatrix(3, std::vector<double>(3, 0.0))).has_value());
  // Two disconnected edges: the zero eigenvalue is repeated.
  const SquareMatrix split{{1, -1, 0, 0}, {-1, 1, 0, 0}, {0, 0, 0.5, -0.5}, {0, 0, -0.5, 0.5}};
  CHECK(*lambda_min_nonzero(split) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Jacobi eigenvalues agree with closed forms") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const SquareMatrix a = random_symmetric(2, rng);
    const double mean = 0.5 * (a[0][0] + a[1][1]);
    const double r = std::hypot(0.5 * (a[0][0] - a[1][1]), a[0][1]);
    const auto e = symmetric_eigenvalues(a);
    CHECK(std::abs(e[0] - (mean - r)) < 1e-10);
    CHECK(std::abs(e[1] - (mean + r)) < 1e-10);
  }
  for (int trial = 0; trial < 50; ++trial) {
    // Trigonometric solution of the characteristic cubic.
    const SquareMatrix a = random_symmetric(3, rng);
    const double p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double q = (a[0][0] + a[1][1] + a[2][2]) / 3;
    const double p2 = (a[0][0] - q) * (a[0][0] - q) + (a[1][1] - q) * (a[1][1] - q) + (a[2][2] - q) * (a[2][2] - q) + 2 * p1;
    const double p = std::sqrt(p2 / 6);
    SquareMatrix b = a;
    for (std::size_t i = 0; i < 3; ++i) b[i][i] -= q;
    for (auto& row : b)
      for (auto& v : row) v /= p;
    const double det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                       b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    const double phi = std::acos(std::clamp(det / 2, -1.0, 1.0)) / 3;
    const double pi = std::acos(-1.0);
    std::vector<double> closed{q + 2 * p * std::cos(phi), q + 2 * p * std::cos(phi + 2 * pi / 3),
                               q + 2 * p * std::cos(phi + 4 * pi / 3)};
    std::sort(closed.begin(), closed.end());
    const auto e = symmetric_eigenvalues(a);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(e[i] - closed[i]) < 1e-10);
  }
  CHECK_THROWS_AS(symmetric_eigenvalues({{1, 2}, {3, 4}}), std::invalid_argument);
  CHECK_THROWS_AS(symmetric_eigenvalues({{1, 2}}), std::invalid_argument);
}

TEST_CASE("eigenvalues of a larger matrix preserve trace and Frobenius norm") {
  Rng rng(2);
  const SquareMatrix a = random_symmetric(12, rng);
  const auto e = symmetric_eigenvalues(a);
  double trace = 0, fro = 0, sum = 0, sq = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    trace += a[i][i];
    for (double v : a[i]) fro += v * v;
    sum += e[i];
    sq += e[i] * e[i];
  }
  CHECK(sum == doctest::Approx(trace).epsilon(1e-10));
  CHECK(sq == doctest::Approx(fro).epsilon(1e-10));
  CHECK(std::is_sorted(e.begin(), e.end()));
}

TEST_CASE("bound term B") {
  const Tensor features = Tensor::matrix({{0.3, -2.0}, {1.0, 4.0}});
  const DistanceMetric l2;
  // One pair with weight one, squared distance ||(1,0) - (0,1)||^2 = 2: B = sqrt(2 * 2^2).
  const MultiTaskModel m = linear_model({{1, 0}, {0, 1}});
  CHECK(bound_term_B(RelationParams::uniform(2), m, features, l2) == doctest::Approx(2 * std::sqrt(2.0)));
  CHECK(bound_term_B(relation_matrix(RelationParams::uniform(2)), m, features, l2) ==
        doctest::Approx(2 * std::sqrt(2.0)));

  CHECK(bound_term_B(RelationParams::uniform(3), linear_model({{1, 2}, {1, 2}, {1, 2}}), features, l2) == 0.0);

  // Squared L2 distance scales quadratically with the heads, so B does too.
  const MultiTaskModel scaled = linear_model({{3, 0}, {0, 3}});
  CHECK(bound_term_B(RelationParams::uniform(2), scaled, features, l2) ==
        doctest::Approx(9 * 2 * std::sqrt(2.0)));

  DistanceMetric cosine;
  cosine.kind = DistanceKind::Cosine;
  const double b1 = bound_term_B(RelationParams::uniform(2), linear_model({{1, 2}, {-0.5, 1}}), features, cosine);
  const double b2 = bound_term_B(RelationParams::uniform(2), linear_model({{7, 14}, {-0.5, 1}}), features, cosine);
  CHECK(b1 == doctest::Approx(b2).epsilon(1e-12));

  // Matrix and parameter forms agree on a non-uniform relation.
  const RelationParams p{3, {0.2, -1.0, 2.5}};
  const MultiTaskModel three = linear_model({{1, 0}, {0.5, 2}, {-1, 1}});
  CHECK(bound_term_B(p, three, features, l2) == doctest::Approx(bound_term_B(relation_matrix(p), three, features, l2)));
}

TEST_CASE("bound from distances by hand") {
  const std::vector<double> w{0.5, 0.25, 0.25}, d{1.0, 2.0, 0.0};
  CHECK(bound_from_distances(w, d) == doctest::Approx(std::sqrt(2 * (0.5 + 1.0))));
  const std::vector<double> short_d{1.0};
  CHECK_THROWS_AS(bound_from_distances(w, short_d), std::invalid_argument);
}

TEST_CASE("saliency distances follow pair order") {
  const MultiTaskModel m = linear_model({{1, 0}, {0, 0}, {3, 0}});
  const auto d = saliency_distances(m, Tensor::matrix({{1, 1}}), DistanceMetric{});
  REQUIRE(d.size() == 3);
  CHECK(d[0] == doctest::Approx(1.0));
  CHECK(d[1] == doctest::Approx(4.0));
  CHECK(d[2] == doctest::Approx(9.0));
}

TEST_CASE("empirical risk") {
  const MultiTaskModel m = linear_model({{1, 0}, {0, 1}});
  MultiTaskDataset data;
  const Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
  data.x = {x, x};
  data.y = {Tensor::matrix({{1}, {3}}), Tensor::matrix({{2}, {4}})};
  CHECK(empirical_risk(m, data, LossKind::Mse) == 0.0);

  // Task 0 errors 0.5 and 10 (clamped to 1): risks 0.25 and 1.
  data.y[0] = Tensor::matrix({{1.5}, {13}});
  CHECK(empirical_risk(m, data, LossKind::Mse) == doctest::Approx((0.5 * (0.25 + 1.0) + 0.0) / 2));

  // Per-task risk means, then the mean over tasks.
  data.y[1] = Tensor::matrix({{2}, {4.5}});
  CHECK(empirical_risk(m, data, LossKind::Mse) == doctest::Approx((0.625 + 0.125) / 2));
  CHECK_THROWS_AS(empirical_risk(m, MultiTaskDataset{}, LossKind::Mse), std::invalid_argument);
}

TEST_CASE("heatmap SVG annotates the range") {
  const std::string svg = heatmap_svg({{0.0, 0.25}, {0.25, 0.0}}, {"t", "r", "c", "r", "c"});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("min 0<") != std::string::npos);
  CHECK(svg.find("max 0.25<") != std::string::npos);
  // The two extremes map to the ends of the color scale.
  CHECK(count(svg, "fill=\"#440154\"") == 3);
  CHECK(count(svg, "fill=\"#fde725\"") == 3);
}

TEST_CASE("saliency heatmap is linear in absolute gradient") {
  const MultiTaskModel m = linear_model({{-2, 0, 1}, {0, 0, 0}});
  const Tensor rows = Tensor::matrix({{1, 1, 1}, {5, 0, -1}});
  const Tensor g = saliency_intensity(m, 0, rows);
  CHECK(g == Tensor::matrix({{2, 0, 1}, {2, 0, 1}}));
  const std::string svg = saliency_heatmap(m, 0, rows);
  CHECK(svg.find("max 2<") != std::string::npos);
  // 1 sits halfway between 0 and 2: the middle color stop.
  CHECK(count(svg, "fill=\"#21918c\"") == 2);

  const std::string zero = saliency_heatmap(m, 1, rows);
  CHECK(zero.find("min 0<") != std::string::npos);
  CHECK(zero.find("max 0<") != std::string::npos);
}

TEST_CASE("relation heatmap labels tasks") {
  const std::string svg = relation_heatmap(relation_matrix(RelationParams::uniform(3)));
  CHECK(svg.find(">t2<") != std::string::npos);
  CHECK(count(svg, "<rect x=") == 9 + 2);
}

TEST_CASE("diagnostics leave the model untouched") {
  ModelSpec s;
  s.trunk = TrunkKind::Mlp;
  s.trunk_widths = {6};
  s.feature_dim = 4;
  s.head = HeadKind::Mlp;
  s.head_widths = {3};
  MultiTaskModel m = init_params(s, 1);
  const MultiTaskModel before = m;
  Rng rng(0);
  Tensor a = Tensor::zeros({5, 4});
  for (auto& v : a.storage()) v = rng.normal();
  const double b1 = bound_term_B(RelationParams::uniform(12), m, a, DistanceMetric{});
  const double b2 = bound_term_B(RelationParams::uniform(12), m, a, DistanceMetric{});
  CHECK(b1 == b2);
  saliency_heatmap(m, 3, a);
  auto x = parameter_tensors(m);
  MultiTaskModel copy = before;
  auto y = parameter_tensors(copy);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(*x[i] == *y[i]);
}

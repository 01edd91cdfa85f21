#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "srdml/regularizer.hpp"
#include "srdml/rng.hpp"

#include "property_trials.hpp"

using namespace srdml;

namespace {

double inverse_softplus(double w) { return std::log(std::expm1(w)); }

const DistanceMetric kMetrics[] = {
    {DistanceKind::SquaredL2, false}, {DistanceKind::L1Smoothed, false}, {DistanceKind::Cosine, false},
    {DistanceKind::SquaredL2, true},  {DistanceKind::L1Smoothed, true},
};

double distance(const Tensor& a, const Tensor& b, const DistanceMetric& m) {
  ad::Tape tape;
  return pairwise_distance(tape.constant(a), tape.constant(b), m).item();
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = Tensor::zeros({r, c});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

ModelSpec linear_spec(std::size_t d, std::size_t tasks) {
  ModelSpec s;
  s.input_dim = s.feature_dim = d;
  s.num_tasks = tasks;
  s.head_bias = false;
  return s;
}

double penalty_value(const MultiTaskModel& m, const Tensor& a, const RelationParams& rel, const DistanceMetric& metric,
                     double lambda) {
  ad::Tape tape;
  const BoundModel b = bind(tape, m, false);
  const auto raw = bind(tape, rel, false);
  return penalty(b, tape.leaf(a, true), raw, metric, lambda).value.item();
}

}  // namespace

TEST_CASE("pair index enumerates the upper triangle row by row") {
  CHECK(num_pairs(4) == 6);
  std::size_t expected = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) {
      CHECK(pair_index(4, i, j) == expected);
      CHECK(pair_index(4, j, i) == expected);
      ++expected;
    }
  CHECK_THROWS_AS(pair_index(4, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(pair_index(4, 0, 4), std::invalid_argument);
}

TEST_CASE("distance hand cases") {
  const Tensor gi = Tensor::matrix({{1, 0}}), gj = Tensor::matrix({{0, 1}});
  for (const auto& m : kMetrics) CHECK(distance(gi, gi, m) == 0.0);
  CHECK(distance(gi, gj, {DistanceKind::SquaredL2, false}) == 2.0);
  CHECK(distance(gi, gj, {DistanceKind::Cosine, false}) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(distance(gi, gj, {DistanceKind::L1Smoothed, false}) ==
        doctest::Approx(2.0 * (std::sqrt(1.0 + 1e-12) - 1e-6)).epsilon(1e-12));
  // Rows are averaged, so repeating a row leaves the distance unchanged.
  CHECK(distance(Tensor::matrix({{1, 0}, {1, 0}}), Tensor::matrix({{0, 1}, {0, 1}}), {DistanceKind::SquaredL2, false}) ==
        2.0);
  // Cosine ignores scale.
  CHECK(distance(Tensor::matrix({{3, 0}}), Tensor::matrix({{0.5, 0.5}}), {DistanceKind::Cosine, false}) ==
        doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-10));
  CHECK_THROWS_AS(distance(gi, Tensor::matrix({{1, 0, 0}}), {}), ShapeError);
}

TEST_CASE("distances are non-negative and zero on identical inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
    for (const auto& m : kMetrics) {
      CHECK(distance(a, b, m) >= 0.0);
      CHECK(distance(a, a, m) == 0.0);
    }
  }
}

TEST_CASE("normalized weights") {
  {
    ad::Tape tape;
    const auto w = normalized_weights(bind(tape, RelationParams::uniform(2, 0.3), false));
    REQUIRE(w.size() == 1);
    CHECK(w[0].item() == 1.0);
  }
  {
    RelationParams rel{3, {inverse_softplus(1), inverse_softplus(1), inverse_softplus(2)}};
    const auto w = normalized_weights(rel);
    CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w[2] == doctest::Approx(0.5).epsilon(1e-12));
  }
  for (std::size_t T : {3u, 5u, 12u}) {
    const auto w = normalized_weights(RelationParams::uniform(T, -1.7));
    for (double v : w) CHECK(v == doctest::Approx(2.0 / static_cast<double>(T * (T - 1))).epsilon(1e-14));
  }
}

TEST_CASE("normalized weights are positive, sum to one and ignore a common scale") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    RelationParams rel = RelationParams::uniform(6);
    for (auto& r : rel.raw) r = rng.uniform(-5, 5);
    const auto w = normalized_weights(rel);
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);
    for (double v : w) CHECK(v > 0.0);

    const double c = rng.uniform(0.1, 10);
    RelationParams scaled = rel;
    for (auto& r : scaled.raw) r = inverse_softplus(c * std::log1p(std::exp(r)));
    const auto ws = normalized_weights(scaled);
    for (std::size_t p = 0; p < w.size(); ++p) CHECK(std::abs(ws[p] - w[p]) < 1e-12);
  }
}

TEST_CASE("penalty hand cases") {
  MultiTaskModel m = init_params(linear_spec(2, 2), 0);
  m.heads[0][0].weight = Tensor::matrix({{1}, {0}});
  m.heads[1][0].weight = Tensor::matrix({{0}, {1}});
  const Tensor a = Tensor::matrix({{0.3, -0.4}, {2.0, 1.0}});
  const auto rel = RelationParams::uniform(2);
  CHECK(penalty_value(m, a, rel, {}, 1.0) == 2.0);
  CHECK(penalty_value(m, a, rel, {}, 0.0) == 0.0);

  m.heads[1] = m.heads[0];
  for (const auto& metric : kMetrics) CHECK(penalty_value(m, a, rel, metric, 1.0) == 0.0);
}

TEST_CASE("a zero coefficient contributes nothing to any gradient") {
  MultiTaskModel m = init_params(linear_spec(3, 3), 1);
  ad::Tape tape;
  const BoundModel b = bind(tape, m, true);
  const auto raw = bind(tape, RelationParams::uniform(3, 0.2), true);
  Rng rng(2);
  const auto terms = penalty(b, tape.leaf(random_matrix(4, 3, rng), true), raw, {}, 0.0);
  std::vector<ad::Var> wrt = b.parameters();
  wrt.insert(wrt.end(), raw.begin(), raw.end());
  for (const auto& g : ad::gradient(terms.value, wrt, false))
    for (double v : g.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("penalty is invariant to relabelling tasks") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    ModelSpec s = linear_spec(4, 4);
    s.head = HeadKind::Mlp;
    s.head_widths = {3};
    const MultiTaskModel m = init_params(s, static_cast<std::uint64_t>(trial));
    RelationParams rel = RelationParams::uniform(4);
    for (auto& r : rel.raw) r = rng.uniform(-2, 2);
    const Tensor a = random_matrix(5, 4, rng);

    // Swap tasks 1 and 3 in the heads and in the relation.
    MultiTaskModel swapped = m;
    std::swap(swapped.heads[1], swapped.heads[3]);
    RelationParams rs = rel;
    const auto relabel = [](std::size_t t) { return t == 1 ? std::size_t{3} : t == 3 ? std::size_t{1} : t; };
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) rs.raw[pair_index(4, relabel(i), relabel(j))] = rel.raw[pair_index(4, i, j)];

    for (const auto& metric : kMetrics) {
      const double p = penalty_value(m, a, rel, metric, 0.7), q = penalty_value(swapped, a, rs, metric, 0.7);
      CHECK(p >= 0.0);
      CHECK(std::abs(p - q) <= 1e-12 * std::max(1.0, std::abs(p)));
    }
  }
}

TEST_CASE("penalty gradients reach heads, trunk and relation") {
  ModelSpec s;
  s.input_dim = 3;
  s.feature_dim = 2;
  s.trunk = TrunkKind::Mlp;
  s.trunk_widths = {3};
  s.head = HeadKind::Mlp;
  s.head_widths = {2};
  s.num_tasks = 3;
  const MultiTaskModel base = init_params(s, 21);
  Rng rng(4);
  const Tensor x = random_matrix(4, 3, rng);
  RelationParams rel = RelationParams::uniform(3);
  for (auto& r : rel.raw) r = rng.uniform(-1, 1);

  for (const auto& metric : kMetrics) {
    MultiTaskModel m = base;
    const auto objective = [&](const MultiTaskModel& mm, const RelationParams& rr) {
      ad::Tape tape;
      const BoundModel b = bind(tape, mm, true);
      const auto raw = bind(tape, rr, true);
      return penalty(b, trunk_forward(b, tape.constant(x)), raw, metric, 0.8).value.item();
    };
    ad::Tape tape;
    const BoundModel b = bind(tape, m, true);
    const auto raw = bind(tape, rel, true);
    const auto terms = penalty(b, trunk_forward(b, tape.constant(x)), raw, metric, 0.8);
    std::vector<ad::Var> wrt = b.parameters();
    const auto grads = ad::gradient(terms.value, wrt, false);
    const auto rgrads = ad::gradient(terms.value, raw, false);

    auto tensors = parameter_tensors(m);
    double max_err = 0.0, max_head_grad = 0.0;
    const std::size_t first_head = 4;  // two trunk layers, weight and bias each
    for (std::size_t p = 0; p < tensors.size(); ++p) {
      for (std::size_t i = 0; i < tensors[p]->numel(); ++i) {
        const double orig = (*tensors[p])[i], h = 1e-6;
        (*tensors[p])[i] = orig + h;
        const double up = objective(m, rel);
        (*tensors[p])[i] = orig - h;
        const double down = objective(m, rel);
        (*tensors[p])[i] = orig;
        const double fd = (up - down) / (2 * h), an = grads[p].value()[i];
        max_err = std::max(max_err, std::abs(fd - an) / (std::abs(fd) + std::abs(an) + 1e-8));
        if (p >= first_head) max_head_grad = std::max(max_head_grad, std::abs(an));
      }
    }
    for (std::size_t p = 0; p < rel.raw.size(); ++p) {
      RelationParams up = rel, down = rel;
      up.raw[p] += 1e-6;
      down.raw[p] -= 1e-6;
      const double fd = (objective(m, up) - objective(m, down)) / 2e-6, an = rgrads[p].item();
      max_err = std::max(max_err, std::abs(fd - an) / (std::abs(fd) + std::abs(an) + 1e-8));
    }
    CAPTURE(to_string(metric.kind));
    CAPTURE(metric.normalize_gradients);
    CHECK(max_err < 1e-4);
    CHECK(max_head_grad > 0.0);
  }
}

TEST_CASE("identical heads have zero saliency distance (1000 trials)") {
  const auto tally = property_trials::identical_heads(1000, 2718);
  CHECK(tally.premise_held == 1000);
  CHECK(tally.failures == 0);
}

TEST_CASE("linear zero-bias heads with matching saliency predict alike (1000 trials)") {
  const auto tally = property_trials::matching_saliency(1000, 31415);
  CHECK(tally.failures == 0);
  // The perturbation range puts a good share of trials on each side of the threshold.
  CHECK(tally.premise_held > 300);
  CHECK(tally.premise_held < 900);
}

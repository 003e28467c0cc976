#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "seanet/losses.hpp"

using namespace seanet;
using oracles::random_tensor;

namespace {

/// Direct per-sample evaluation: w_y * (log sum_j exp(x_j) - x_y), averaged.
double weighted_ce_oracle(const Tensor<double>& logits, const std::vector<int>& labels,
                          const std::vector<double>& weights) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double z = 0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(logits.at({i, j}));
    const int y = labels[static_cast<std::size_t>(i)];
    total += weights[static_cast<std::size_t>(y)] * (std::log(z) - logits.at({i, y}));
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("class weight rule: counts [50,25,10,10,5] give [2,4,10,10,20]") {
  ClassWeights w = ClassWeights::from_counts({50, 25, 10, 10, 5});
  CHECK(w.total == 100);
  const std::vector<double> expect{2, 4, 10, 10, 20};
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(w.weights[k] == expect[k]);
    CHECK(w.weights[k] * static_cast<double>(w.counts[k]) == static_cast<double>(w.total));
  }
  CHECK_THROWS_AS(ClassWeights::from_counts({3, 0, 2}), ConfigError);
}

TEST_CASE("class weight rule holds exactly whenever counts divide the total") {
  Rng rng(41);
  for (int inst = 0; inst < 50; ++inst) {
    // Counts built as total/divisor so the quotients are exact in binary.
    std::vector<std::int64_t> counts;
    const std::int64_t base = 1 + static_cast<std::int64_t>(rng.below(6));
    for (int k = 0; k < 4; ++k) {
      counts.push_back(base * (std::int64_t{1} << rng.below(4)));
    }
    ClassWeights w = ClassWeights::from_counts(counts);
    for (std::size_t k = 0; k < counts.size(); ++k) {
      CHECK(w.weights[k] ==
            static_cast<double>(w.total) / static_cast<double>(counts[k]));
      if (w.total % counts[k] == 0) {
        CHECK(w.weights[k] * static_cast<double>(counts[k]) == static_cast<double>(w.total));
      }
    }
  }
}

TEST_CASE("weighted CE on uniform logits is ln K") {
  Graph<double> g(false);
  Tensor<double> logits(Shape{4, 5}, 0.7);
  ClassWeights ones = ClassWeights::explicit_weights({1, 1, 1, 1, 1});
  Tensor<double> loss = weighted_ce(g, logits, {0, 1, 2, 3}, ones);
  CHECK(std::abs(loss.data()[0] - std::log(5.0)) <= 1e-9);
}

TEST_CASE("weighted CE vanishes for confidently correct logits") {
  Graph<double> g(false);
  Tensor<double> logits(Shape{3, 5}, 0.0);
  std::vector<int> labels{0, 2, 4};
  for (std::int64_t i = 0; i < 3; ++i) logits.at({i, labels[static_cast<std::size_t>(i)]}) = 60.0;
  ClassWeights ones = ClassWeights::explicit_weights({1, 1, 1, 1, 1});
  CHECK(weighted_ce(g, logits, labels, ones).data()[0] <= 1e-12);
}

TEST_CASE("weighted CE matches the per-sample oracle on a crafted batch") {
  ClassWeights w = ClassWeights::from_counts({50, 25, 10, 10, 5});
  Rng rng(43);
  Tensor<double> logits = random_tensor(Shape{6, 5}, rng, -2, 2);
  std::vector<int> labels{0, 1, 2, 3, 4, 1};
  Graph<double> g(false);
  const double got = weighted_ce(g, logits, labels, w).data()[0];
  const double want = weighted_ce_oracle(logits, labels, w.weights);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("weighted CE is shift-invariant per sample") {
  Rng rng(47);
  ClassWeights w = ClassWeights::from_counts({8, 4, 2, 2});
  for (int inst = 0; inst < 20; ++inst) {
    Tensor<double> logits = random_tensor(Shape{5, 4}, rng, -3, 3);
    std::vector<int> labels{3, 0, 1, 2, 0};
    Graph<double> g(false);
    const double base = weighted_ce(g, logits, labels, w).data()[0];
    Tensor<double> shifted = logits.clone();
    for (std::int64_t i = 0; i < 5; ++i) {
      const double c = rng.uniform(-5, 5);
      for (std::int64_t j = 0; j < 4; ++j) shifted.at({i, j}) += c;
    }
    const double moved = weighted_ce(g, shifted, labels, w).data()[0];
    CHECK(std::abs(base - moved) <= 1e-9);
  }
}

TEST_CASE("weighted CE rejects out-of-range labels and bad weight counts") {
  Graph<double> g(false);
  Tensor<double> logits(Shape{2, 3}, 0.0);
  ClassWeights w = ClassWeights::from_counts({1, 1, 1});
  CHECK_THROWS_AS(weighted_ce(g, logits, {0, 3}, w), ShapeError);
  CHECK_THROWS_AS(weighted_ce(g, logits, {0, -1}, w), ShapeError);
  CHECK_THROWS_AS(weighted_ce(g, logits, {0}, w), ShapeError);
  ClassWeights wrong = ClassWeights::from_counts({1, 1});
  CHECK_THROWS_AS(weighted_ce(g, logits, {0, 1}, wrong), ShapeError);
}

TEST_CASE("weighted CE gradient matches finite differences") {
  Rng rng(53);
  Tensor<double> logits = random_tensor(Shape{4, 5}, rng, -1, 1);
  ClassWeights w = ClassWeights::from_counts({10, 5, 2, 2, 1});
  std::vector<int> labels{0, 4, 2, 1};
  const double err = oracles::max_grad_rel_err(
      [&](Graph<double>& g) { return weighted_ce(g, logits, labels, w); }, {logits});
  CHECK(err < 1e-5);
}

TEST_CASE("center loss: zero at the centers, hand value, nonnegativity") {
  ClassCenters<double> centers = ClassCenters<double>::zeros(3, 2);
  centers.centers.at({0, 0}) = 1.5;
  centers.centers.at({1, 1}) = -2.0;

  Graph<double> g(false);
  Tensor<double> exact(Shape{2, 2});
  exact.at({0, 0}) = 1.5;
  exact.at({1, 1}) = -2.0;
  CHECK(center_loss(g, exact, {0, 1}, centers).data()[0] == 0.0);

  ClassCenters<double> origin = ClassCenters<double>::zeros(2, 2);
  Tensor<double> x = Tensor<double>::from(Shape{1, 2}, {3, 4});
  CHECK(center_loss(g, x, {0}, origin).data()[0] == 12.5);

  Rng rng(59);
  Tensor<double> noisy = random_tensor(Shape{4, 2}, rng, 0.1, 1.0);
  CHECK(center_loss(g, noisy, {0, 1, 0, 1}, origin).data()[0] > 0.0);
}

TEST_CASE("center loss gradient matches finite differences") {
  Rng rng(61);
  ClassCenters<double> centers = ClassCenters<double>::zeros(3, 4);
  fill_uniform(centers.centers, rng, -1, 1);
  Tensor<double> features = random_tensor(Shape{5, 4}, rng, -1, 1);
  std::vector<int> labels{0, 1, 2, 1, 0};
  const double err = oracles::max_grad_rel_err(
      [&](Graph<double>& g) { return center_loss(g, features, labels, centers); }, {features});
  CHECK(err < 1e-5);
}

TEST_CASE("update_centers: alpha 0 freezes, alpha 1 moves halfway") {
  Rng rng(67);
  Tensor<double> features = random_tensor(Shape{3, 2}, rng, -1, 1);
  std::vector<int> labels{0, 1, 2};

  ClassCenters<double> frozen = ClassCenters<double>::zeros(3, 2, 0.0);
  fill_uniform(frozen.centers, rng, -1, 1);
  Tensor<double> before = frozen.centers.clone();
  update_centers(features, labels, frozen);
  for (std::int64_t i = 0; i < before.numel(); ++i) {
    CHECK(frozen.centers.data()[i] == before.data()[i]);
  }

  ClassCenters<double> half = ClassCenters<double>::zeros(3, 2, 1.0);
  fill_uniform(half.centers, rng, -1, 1);
  Tensor<double> start = half.centers.clone();
  update_centers(features, labels, half);
  for (std::int64_t k = 0; k < 3; ++k) {
    for (std::int64_t d = 0; d < 2; ++d) {
      const double want = (start.at({k, d}) + features.at({k, d})) / 2.0;
      CHECK(half.centers.at({k, d}) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("update_centers converges to class means with decreasing distance") {
  Rng rng(71);
  const int k = 3, d = 4, per = 5;
  Tensor<double> features(Shape{k * per, d});
  std::vector<int> labels;
  std::vector<std::vector<double>> means(k, std::vector<double>(d, 0.0));
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per; ++i) {
      labels.push_back(c);
      for (int j = 0; j < d; ++j) {
        const double v = rng.uniform(-1, 1) + 2.0 * c;
        features.at({c * per + i, j}) = v;
        means[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] += v / per;
      }
    }
  }
  ClassCenters<double> centers = ClassCenters<double>::zeros(k, d, 0.5);
  auto dist = [&]() {
    double total = 0;
    for (int c = 0; c < k; ++c) {
      for (int j = 0; j < d; ++j) {
        const double diff = centers.centers.at({c, j}) -
                            means[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
        total += diff * diff;
      }
    }
    return total;
  };
  double prev = dist();
  for (int it = 0; it < 30; ++it) {
    update_centers(features, labels, centers);
    const double now = dist();
    CHECK(now < prev);
    prev = now;
  }
  CHECK(prev < 1e-6);

  // Classes absent from a batch keep their centers.
  Tensor<double> only0 = Tensor<double>::from(Shape{1, 4}, {9, 9, 9, 9});
  Tensor<double> before = centers.centers.clone();
  update_centers(only0, {0}, centers);
  for (std::int64_t j = 0; j < d; ++j) {
    CHECK(centers.centers.at({1, j}) == before.at({1, j}));
    CHECK(centers.centers.at({2, j}) == before.at({2, j}));
  }
}

TEST_CASE("hybrid loss: lambda 0 equals weighted CE bit-exactly") {
  Rng rng(73);
  Tensor<double> logits = random_tensor(Shape{4, 5}, rng, -1, 1);
  Tensor<double> features = random_tensor(Shape{4, 3}, rng, -1, 1);
  std::vector<int> labels{0, 1, 2, 3};
  HybridLossConfig cfg;
  cfg.lambda = 0;
  cfg.class_weights = ClassWeights::from_counts({4, 2, 2, 1, 1});
  ClassCenters<double> centers = ClassCenters<double>::zeros(5, 3);

  Graph<double> g(false);
  HybridLoss<double> h = hybrid_loss(g, logits, features, labels, cfg, centers);
  const double ce = weighted_ce(g, logits, labels, cfg.class_weights).data()[0];
  CHECK(h.total.data()[0] == ce);
  CHECK(h.ct == 0.0);
}

TEST_CASE("hybrid loss: lambda 1 sum matches hand computation on 2 samples") {
  Tensor<double> logits = Tensor<double>::from(Shape{2, 2}, {1.0, -1.0, 0.5, 0.25});
  Tensor<double> features = Tensor<double>::from(Shape{2, 2}, {1.0, 0.0, 0.0, 2.0});
  std::vector<int> labels{0, 1};
  HybridLossConfig cfg;
  cfg.lambda = 1.0;
  cfg.class_weights = ClassWeights::from_counts({3, 6});  // weights 3 and 1.5
  ClassCenters<double> centers = ClassCenters<double>::zeros(2, 2);
  centers.centers.at({1, 1}) = 1.0;

  // ce = mean(3 * log(1 + e^-2), 1.5 * log(1 + e^0.25))
  const double ce = (3.0 * std::log(1.0 + std::exp(-2.0)) +
                     1.5 * std::log(1.0 + std::exp(0.25))) /
                    2.0;
  // ct = 0.5 * (||(1,0)-(0,0)||^2 + ||(0,2)-(0,1)||^2) = 0.5 * (1 + 1) = 1
  const double want = ce + 1.0;

  Graph<double> g(false);
  HybridLoss<double> h = hybrid_loss(g, logits, features, labels, cfg, centers);
  CHECK(h.total.data()[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(h.ct == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hybrid loss is monotone nondecreasing in lambda") {
  Rng rng(79);
  Tensor<double> logits = random_tensor(Shape{4, 3}, rng, -1, 1);
  Tensor<double> features = random_tensor(Shape{4, 2}, rng, 0.5, 1.5);  // away from the centers
  std::vector<int> labels{0, 1, 2, 0};
  ClassCenters<double> centers = ClassCenters<double>::zeros(3, 2);
  HybridLossConfig cfg;
  cfg.class_weights = ClassWeights::from_counts({2, 1, 1});
  double prev = -1;
  for (double lambda : {0.0, 0.05, 0.1, 0.5, 1.0, 2.0}) {
    cfg.lambda = lambda;
    Graph<double> g(false);
    const double v = hybrid_loss(g, logits, features, labels, cfg, centers).total.data()[0];
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("hybrid loss gradients pass finite differences") {
  Rng rng(83);
  Tensor<double> logits = random_tensor(Shape{4, 5}, rng, -1, 1);
  Tensor<double> features = random_tensor(Shape{4, 3}, rng, -1, 1);
  std::vector<int> labels{0, 2, 4, 1};
  HybridLossConfig cfg;
  cfg.lambda = 0.7;
  cfg.class_weights = ClassWeights::from_counts({10, 5, 2, 2, 1});
  ClassCenters<double> centers = ClassCenters<double>::zeros(5, 3);
  fill_uniform(centers.centers, rng, -1, 1);
  const double err = oracles::max_grad_rel_err(
      [&](Graph<double>& g) {
        return hybrid_loss(g, logits, features, labels, cfg, centers).total;
      },
      {logits, features});
  CHECK(err < 1e-4);
}

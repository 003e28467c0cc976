#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "seanet/io.hpp"
#include "seanet/ops.hpp"

using namespace seanet;
using oracles::random_tensor;

namespace {

Tensor<double> projection_loss(Graph<double>& g, const Tensor<double>& out,
                               const Tensor<double>& weights) {
  return sum(g, mul(g, out, weights));
}

}  // namespace

TEST_CASE("shape validates positive dims and counts elements") {
  Shape s{2, 3, 4};
  CHECK(s.numel() == 24);
  CHECK(s.rank() == 3);
  CHECK(s.str() == "[2x3x4]");
  CHECK_THROWS_AS(Shape{0}, ShapeError);
  CHECK_THROWS_AS(Shape({2, -1}), ShapeError);
}

TEST_CASE("tensor storage, indexing and clone semantics") {
  Tensor<double> t = Tensor<double>::from(Shape{2, 2}, {1, 2, 3, 4});
  CHECK(t.at({0, 1}) == 2);
  CHECK(t.at({1, 0}) == 3);

  Tensor<double> shallow = t;
  shallow.data()[0] = 9;
  CHECK(t.data()[0] == 9);  // handles share storage

  Tensor<double> deep = t.clone();
  deep.data()[0] = 1;
  CHECK(t.data()[0] == 9);

  CHECK_THROWS_AS(Tensor<double>::from(Shape{2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped(Shape{3}), ShapeError);
}

TEST_CASE("sgt1 files round-trip both precisions and convert between them") {
  const auto dir = std::filesystem::temp_directory_path() / "seanet_sgt1_test";
  std::filesystem::create_directories(dir);
  Rng rng(7);
  Tensor<double> t = random_tensor(Shape{2, 3, 4}, rng);

  write_tensor(dir / "t.sgt1", t);
  Tensor<double> back = read_tensor<double>(dir / "t.sgt1");
  REQUIRE(back.shape() == t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(back.data()[i] == t.data()[i]);

  // f64 file read as f32 and back: values pass through the f32 rounding.
  Tensor<float> as_f32 = read_tensor<float>(dir / "t.sgt1");
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    CHECK(as_f32.data()[i] == doctest::Approx(t.data()[i]).epsilon(1e-6));
  }
  write_tensor(dir / "t32.sgt1", as_f32);
  Tensor<double> widened = read_tensor<double>(dir / "t32.sgt1");
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    CHECK(widened.data()[i] == static_cast<double>(as_f32.data()[i]));
  }

  CHECK_THROWS_AS(read_tensor<double>(dir / "absent.sgt1"), IoError);
}

TEST_CASE("matmul: identity, hand sum, shape errors") {
  Graph<double> g;
  Tensor<double> eye = Tensor<double>::from(Shape{2, 2}, {1, 0, 0, 1});
  Tensor<double> m = Tensor<double>::from(Shape{2, 2}, {3, -1, 2, 5});
  Tensor<double> prod = matmul(g, eye, m);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(prod.data()[i] == m.data()[i]);

  Tensor<double> a = Tensor<double>::from(Shape{2, 2}, {1, 2, 3, 4});
  Tensor<double> ones = Tensor<double>::from(Shape{2, 1}, {1, 1});
  Tensor<double> r = matmul(g, a, ones);
  CHECK(r.data()[0] == 3);
  CHECK(r.data()[1] == 7);

  try {
    matmul(g, a, Tensor<double>(Shape{3, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches finite differences on random 4x3 * 3x5") {
  Rng rng(11);
  Tensor<double> a = random_tensor(Shape{4, 3}, rng);
  Tensor<double> b = random_tensor(Shape{3, 5}, rng);
  Tensor<double> w = random_tensor(Shape{4, 5}, rng);
  const double err = oracles::max_grad_rel_err(
      [&](Graph<double>& g) { return projection_loss(g, matmul(g, a, b), w); }, {a, b});
  CHECK(err < 1e-5);
}

TEST_CASE("conv1x1: identity weight, hand sum, channel mismatch") {
  Graph<double> g;
  Rng rng(3);
  Tensor<double> x = random_tensor(Shape{1, 2, 2, 2}, rng);
  Tensor<double> eye = Tensor<double>::from(Shape{2, 2}, {1, 0, 0, 1});
  Tensor<double> zero_b(Shape{2});
  Tensor<double> y = conv1x1(g, x, eye, zero_b);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor<double> tiny = Tensor<double>::from(Shape{1, 1, 1, 2}, {3, 5});
  Tensor<double> sum_w = Tensor<double>::from(Shape{2, 1}, {1, 1});
  Tensor<double> out = conv1x1(g, tiny, sum_w, Tensor<double>(Shape{1}));
  CHECK(out.data()[0] == 8);

  CHECK_THROWS_AS(conv1x1(g, x, Tensor<double>(Shape{3, 2}), zero_b), ShapeError);
}

TEST_CASE("conv1x1 equals the reshape+matmul oracle on random input") {
  Rng rng(5);
  Tensor<double> x = random_tensor(Shape{2, 3, 3, 4}, rng);
  Tensor<double> w = random_tensor(Shape{4, 3}, rng);
  Tensor<double> b = random_tensor(Shape{3}, rng);
  Graph<double> g;
  Tensor<double> y = conv1x1(g, x, w, b);
  const auto expect = oracles::conv1x1_reshape_oracle(x, w, b);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    CHECK(std::abs(y.data()[i] - expect[static_cast<std::size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("conv3x3 matches the direct-loop oracle for both strides") {
  Rng rng(17);
  for (std::int64_t stride : {std::int64_t{1}, std::int64_t{2}}) {
    Tensor<double> x = random_tensor(Shape{2, 5, 5, 3}, rng);
    Tensor<double> w = random_tensor(Shape{3, 3, 3, 4}, rng);
    Tensor<double> b = random_tensor(Shape{4}, rng);
    Graph<double> g;
    Tensor<double> y = conv3x3(g, x, w, b, stride);
    const auto expect = oracles::conv3x3_direct_oracle(x, w, b, stride);
    REQUIRE(y.numel() == static_cast<std::int64_t>(expect.size()));
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      CHECK(y.data()[i] == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("global_avg_pool: constants, hand mean, uniform gradient") {
  Graph<double> g;
  Tensor<double> c7(Shape{2, 3, 3, 4}, 7.0);
  Tensor<double> pooled = global_avg_pool(g, c7);
  REQUIRE(pooled.shape() == Shape{2, 1, 1, 4});
  for (std::int64_t i = 0; i < pooled.numel(); ++i) CHECK(pooled.data()[i] == 7.0);

  Tensor<double> quad = Tensor<double>::from(Shape{1, 2, 2, 1}, {1, 2, 3, 4});
  CHECK(global_avg_pool(g, quad).data()[0] == 2.5);

  Tensor<double> x = Tensor<double>::from(Shape{1, 2, 2, 1}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  x.zero_grad();
  Graph<double> g2;
  Tensor<double> loss = sum(g2, global_avg_pool(g2, x));
  g2.backward(loss);
  for (auto v : x.grad()) CHECK(v == 0.25);
}

TEST_CASE("global_avg_pool is linear") {
  Rng rng(23);
  Graph<double> g(false);
  for (int inst = 0; inst < 5; ++inst) {
    Tensor<double> x = random_tensor(Shape{2, 4, 3, 5}, rng);
    Tensor<double> y = random_tensor(Shape{2, 4, 3, 5}, rng);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    Tensor<double> mix(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      mix.data()[i] = alpha * x.data()[i] + beta * y.data()[i];
    }
    Tensor<double> lhs = global_avg_pool(g, mix);
    Tensor<double> px = global_avg_pool(g, x);
    Tensor<double> py = global_avg_pool(g, y);
    for (std::int64_t i = 0; i < lhs.numel(); ++i) {
      CHECK(std::abs(lhs.data()[i] - (alpha * px.data()[i] + beta * py.data()[i])) <= 1e-12);
    }
  }
}

TEST_CASE("activations: sigmoid midpoint, softmax symmetry and shift safety") {
  Graph<double> g;
  CHECK(sigmoid(g, Tensor<double>(Shape{1}, 0.0)).data()[0] == 0.5);

  Tensor<double> two(Shape{2}, 0.0);
  Tensor<double> s = softmax(g, two, 0);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));

  Tensor<double> big(Shape{3}, 1000.0);
  Tensor<double> sb = softmax(g, big, 0);
  for (std::int64_t i = 0; i < 3; ++i) {
    CHECK(sb.data()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax output is a distribution for arbitrary finite inputs") {
  Rng rng(29);
  Graph<double> g(false);
  for (int inst = 0; inst < 20; ++inst) {
    const double scale = std::pow(10.0, rng.uniform(-3, 3));
    Tensor<double> x = random_tensor(Shape{3, 7}, rng, -scale, scale);
    for (std::int64_t axis : {std::int64_t{0}, std::int64_t{1}}) {
      Tensor<double> y = softmax(g, x, axis);
      const std::int64_t outer = axis == 0 ? 1 : 3;
      const std::int64_t an = x.dim(axis);
      const std::int64_t inner = axis == 0 ? 7 : 1;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          double total = 0;
          for (std::int64_t j = 0; j < an; ++j) {
            const double v = y.data()[o * an * inner + j * inner + i];
            CHECK(v >= 0);
            total += v;
          }
          CHECK(std::abs(total - 1.0) <= 1e-6);
        }
      }
    }
  }
  CHECK_THROWS_AS(softmax(g, Tensor<double>(Shape{2, 2}, 1.0), 2), ShapeError);
}

TEST_CASE("elementwise: self-division, broadcast gating, bad broadcast") {
  Graph<double> g;
  Rng rng(31);
  Tensor<double> a = random_tensor(Shape{2, 3}, rng, 0.5, 2.0);
  Tensor<double> ones = div(g, a, a);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(ones.data()[i] == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tensor<double> map(Shape{1, 2, 2, 1}, 4.0);
  Tensor<double> gate = Tensor<double>::from(Shape{1, 1, 1, 1}, {0.5});
  Tensor<double> halved = mul(g, map, gate);
  for (std::int64_t i = 0; i < map.numel(); ++i) CHECK(halved.data()[i] == 2.0);

  CHECK_THROWS_AS(add(g, Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{2, 2})), ShapeError);
  CHECK_THROWS_AS(mul(g, Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{3, 2, 3})), ShapeError);
}

TEST_CASE("div backward matches finite differences on positive tensors") {
  Rng rng(37);
  Tensor<double> a = random_tensor(Shape{2, 3, 1, 4}, rng, 0.5, 2.0);
  Tensor<double> b = random_tensor(Shape{2, 1, 1, 4}, rng, 0.5, 2.0);  // broadcast denominator
  Tensor<double> w = random_tensor(Shape{2, 3, 1, 4}, rng);
  const double err = oracles::max_grad_rel_err(
      [&](Graph<double>& g) { return projection_loss(g, div(g, a, b), w); }, {a, b});
  CHECK(err < 1e-5);
}

TEST_CASE("backward: ones for sum, derivative of sum of squares, tape misuse") {
  Tensor<double> x = Tensor<double>::from(Shape{3}, {1, 2, 3});
  x.set_requires_grad(true);

  {
    x.zero_grad();
    Graph<double> g;
    Tensor<double> loss = sum(g, x);
    g.backward(loss);
    for (auto v : x.grad()) CHECK(v == 1.0);
    CHECK_THROWS_AS(g.backward(loss), GraphError);  // graph already consumed
  }
  {
    x.zero_grad();
    Graph<double> g;
    Tensor<double> loss = sum(g, mul(g, x, x));
    g.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(x.grad()[2] == 6.0);
  }
  {
    Graph<double> g;
    Tensor<double> y = mul(g, x, x);
    CHECK_THROWS_AS(g.backward(y), GraphError);  // non-scalar loss
  }
  {
    Graph<double> g1;
    Tensor<double> loss = sum(g1, x);
    Graph<double> g2;
    CHECK_THROWS_AS(g2.backward(loss), GraphError);  // produced elsewhere
  }
}

TEST_CASE("gradient correctness across ops on 20 random instances") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 7919 + 1);

    {
      Tensor<double> a = random_tensor(Shape{3, 4}, rng);
      Tensor<double> b = random_tensor(Shape{4, 2}, rng);
      Tensor<double> w = random_tensor(Shape{3, 2}, rng);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, matmul(g, a, b), w); },
                {a, b}) < 1e-4);
    }
    {
      Tensor<double> x = random_tensor(Shape{2, 3, 3, 4}, rng);
      Tensor<double> w = random_tensor(Shape{4, 3}, rng);
      Tensor<double> b = random_tensor(Shape{3}, rng);
      Tensor<double> pw = random_tensor(Shape{2, 3, 3, 3}, rng);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, conv1x1(g, x, w, b), pw); },
                {x, w, b}) < 1e-4);
    }
    {
      const std::int64_t stride = (seed % 2) + 1;
      Tensor<double> x = random_tensor(Shape{1, 4, 4, 2}, rng);
      Tensor<double> w = random_tensor(Shape{3, 3, 2, 3}, rng);
      Tensor<double> b = random_tensor(Shape{3}, rng);
      const std::int64_t s = (4 - 1) / stride + 1;
      Tensor<double> pw = random_tensor(Shape{1, s, s, 3}, rng);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) {
                  return projection_loss(g, conv3x3(g, x, w, b, stride), pw);
                },
                {x, w, b}) < 1e-4);
    }
    {
      Tensor<double> x = random_tensor(Shape{2, 3, 4, 2}, rng);
      Tensor<double> pw = random_tensor(Shape{2, 1, 1, 2}, rng);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) {
                  return projection_loss(g, global_avg_pool(g, x), pw);
                },
                {x}) < 1e-4);
    }
    {
      // Inputs bounded away from the ReLU kink so the finite step never
      // crosses it.
      Tensor<double> x = random_tensor(Shape{3, 5}, rng);
      for (auto& v : x.values()) {
        if (std::abs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
      }
      Tensor<double> pw = random_tensor(Shape{3, 5}, rng);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, relu(g, x), pw); }, {x}) < 1e-4);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, sigmoid(g, x), pw); },
                {x}) < 1e-4);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, softmax(g, x, 1), pw); },
                {x}) < 1e-4);
    }
    {
      Tensor<double> a = random_tensor(Shape{2, 3, 2}, rng);
      Tensor<double> b = random_tensor(Shape{1, 3, 1}, rng, 0.5, 1.5);
      Tensor<double> pw = random_tensor(Shape{2, 3, 2}, rng);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, add(g, a, b), pw); },
                {a, b}) < 1e-4);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, mul(g, a, b), pw); },
                {a, b}) < 1e-4);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) { return projection_loss(g, div(g, a, b), pw); },
                {a, b}) < 1e-4);
      CHECK(oracles::max_grad_rel_err(
                [&](Graph<double>& g) {
                  return projection_loss(g, reshape(g, scale(g, a, 1.7), Shape{6, 2}),
                                         reshape(g, pw, Shape{6, 2}));
                },
                {a}) < 1e-4);
    }
  }
}

TEST_CASE("ops reject non-finite results") {
  Graph<double> g;
  Tensor<double> big(Shape{2}, 1e308);
  CHECK_THROWS_AS(mul(g, big, big), NumericError);
}

TEST_CASE("determinism: identical seeds give bit-identical op outputs") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> x = random_tensor(Shape{2, 4, 4, 3}, rng);
    Tensor<double> w = random_tensor(Shape{3, 3, 3, 4}, rng);
    Tensor<double> b = random_tensor(Shape{4}, rng);
    Graph<double> g(false);
    Tensor<double> y = softmax(g, global_avg_pool(g, conv3x3(g, x, w, b, 1)), 3);
    return std::vector<double>(y.data(), y.data() + y.numel());
  };
  const auto a = run(42), b = run(42);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

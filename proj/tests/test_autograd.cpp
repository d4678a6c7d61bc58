#include <doctest.h>

#include <random>

#include "egpg/autograd.hpp"
#include "oracles.hpp"

using namespace egpg::nn;

namespace {

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// Checks d sum(op(inputs) * R) / d input against central differences for
// every input, R a fixed random weighting of the output.
void check_gradients(std::vector<Matrix> inputs, const Builder& op, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  Matrix weight;
  auto forward = [&](const std::vector<Parameter>& ps, Graph& g) {
    std::vector<Var> vars;
    for (const auto& p : ps) vars.push_back(g.param(p));
    Var out = op(g, vars);
    if (weight.size() == 0) weight = oracle::random_matrix(g.value(out).rows(), g.value(out).cols(), rng);
    return g.sum(g.mul(out, g.constant(weight)));
  };

  std::vector<Parameter> params(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params[i].value = inputs[i];
    params[i].zero_grad();
  }
  {
    Graph g;
    g.backward(forward(params, g));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Matrix& x) {
      std::vector<Parameter> ps = params;
      ps[i].value = x;
      Graph g(false);
      return g.scalar(forward(ps, g));
    };
    Matrix numeric = oracle::numeric_gradient(f, inputs[i]);
    INFO("input " << i);
    CHECK(oracle::relative_error(params[i].grad, numeric) < tol);
  }
}

Matrix rnd(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return oracle::random_matrix(r, c, rng, scale);
}

}  // namespace

TEST_CASE("elementwise and linear ops") {
  check_gradients({rnd(3, 4, 1), rnd(4, 2, 2)}, [](Graph& g, const auto& v) { return g.matmul(v[0], v[1]); });
  check_gradients({rnd(3, 4, 1), rnd(3, 4, 2)}, [](Graph& g, const auto& v) { return g.add(v[0], v[1]); });
  check_gradients({rnd(3, 4, 1), rnd(3, 4, 2)}, [](Graph& g, const auto& v) { return g.sub(v[0], v[1]); });
  check_gradients({rnd(3, 4, 1), rnd(3, 4, 2)}, [](Graph& g, const auto& v) { return g.mul(v[0], v[1]); });
  check_gradients({rnd(3, 4, 1)}, [](Graph& g, const auto& v) { return g.scale(v[0], -1.7); });
  check_gradients({rnd(3, 4, 1), rnd(1, 4, 2)}, [](Graph& g, const auto& v) { return g.add_row(v[0], v[1]); });
  check_gradients({rnd(3, 4, 1)}, [](Graph& g, const auto& v) { return g.tanh(v[0]); });
  check_gradients({rnd(3, 4, 1)}, [](Graph& g, const auto& v) { return g.sigmoid(v[0]); });
  check_gradients({rnd(3, 4, 1)}, [](Graph& g, const auto& v) { return g.gelu(v[0]); });
  check_gradients({rnd(3, 4, 1)}, [](Graph& g, const auto& v) { return g.sum(v[0]); });
}

TEST_CASE("shape ops") {
  check_gradients({rnd(3, 2, 1), rnd(3, 5, 2)}, [](Graph& g, const auto& v) { return g.concat_cols(v[0], v[1]); });
  check_gradients({rnd(2, 3, 1), rnd(4, 3, 2)}, [](Graph& g, const auto& v) {
    std::vector<Var> parts{v[0], v[1], v[0]};
    return g.concat_rows(parts);
  });
  check_gradients({rnd(6, 3, 1)}, [](Graph& g, const auto& v) { return g.slice_rows(v[0], 2, 3); });
  check_gradients({rnd(5, 3, 1)}, [](Graph& g, const auto& v) {
    std::vector<std::size_t> idx{4, 0, 4, 2};
    return g.gather_rows(v[0], idx);
  });
  check_gradients({rnd(4, 3, 1), rnd(4, 3, 2)}, [](Graph& g, const auto& v) {
    return g.select_rows(v[0], v[1], std::vector<bool>{true, false, false, true});
  });
}

TEST_CASE("layer norm") {
  check_gradients({rnd(4, 6, 1), rnd(1, 6, 2), rnd(1, 6, 3)},
                  [](Graph& g, const auto& v) { return g.layer_norm(v[0], v[1], v[2]); }, 1e-5);
  Graph g(false);
  Matrix x = rnd(3, 8, 4, 5.0);
  Matrix one = Matrix::Ones(1, 8), zero = Matrix::Zero(1, 8);
  const Matrix& y = g.value(g.layer_norm(g.constant(x), g.constant(one), g.constant(zero)));
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    CHECK(std::abs(y.row(r).mean()) < 1e-9);
    CHECK(std::abs(y.row(r).squaredNorm() / 8.0 - 1.0) < 1e-3);
  }
}

TEST_CASE("gru cell") {
  const int B = 3, H = 4;
  check_gradients({rnd(B, 3 * H, 1), rnd(B, H, 2), rnd(H, 3 * H, 3, 0.5), rnd(1, 3 * H, 4)},
                  [](Graph& g, const auto& v) { return g.gru_cell(v[0], v[1], v[2], v[3]); });

  // Matches the textbook equations.
  Matrix xp = rnd(1, 3 * H, 5), h = rnd(1, H, 6), w = rnd(H, 3 * H, 7), b = rnd(1, 3 * H, 8);
  Graph g(false);
  const Matrix& out = g.value(g.gru_cell(g.constant(xp), g.constant(h), g.constant(w), g.constant(b)));
  Matrix hp = h * w + b;
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (int j = 0; j < H; ++j) {
    const double r = sig(xp(0, j) + hp(0, j));
    const double z = sig(xp(0, H + j) + hp(0, H + j));
    const double n = std::tanh(xp(0, 2 * H + j) + r * hp(0, 2 * H + j));
    CHECK(out(0, j) == doctest::Approx((1 - z) * n + z * h(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("masked multi-head attention") {
  const std::size_t B = 2, S = 3, heads = 2;
  std::vector<bool> mask{true, true, false, true, true, true};
  check_gradients({rnd(B * S, 4, 1), rnd(B * S, 4, 2), rnd(B * S, 4, 3)}, [&](Graph& g, const auto& v) {
    return g.attention(v[0], v[1], v[2], B, S, heads, mask);
  });

  // A hidden key has no influence on the output.
  Matrix q = rnd(B * S, 4, 1), k = rnd(B * S, 4, 2), v = rnd(B * S, 4, 3);
  Graph g(false);
  Matrix a = g.value(g.attention(g.constant(q), g.constant(k), g.constant(v), B, S, heads, mask));
  k.row(2).setRandom();
  v.row(2).setRandom();
  Matrix b = g.value(g.attention(g.constant(q), g.constant(k), g.constant(v), B, S, heads, mask));
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("custom scalar passes gradients through") {
  check_gradients({rnd(2, 3, 1)}, [](Graph& g, const auto& v) {
    const Matrix& x = g.value(v[0]);
    std::vector<Var> in{v[0]};
    return g.custom_scalar(in, x.squaredNorm(), {2.0 * x});
  });
}

TEST_CASE("gradients accumulate across uses and graphs") {
  Parameter p;
  p.value = rnd(2, 2, 1);
  p.zero_grad();
  for (int k = 0; k < 2; ++k) {
    Graph g;
    Var x = g.param(p);
    g.backward(g.sum(g.add(x, x)));
  }
  CHECK((p.grad.array() == 4.0).all());
}

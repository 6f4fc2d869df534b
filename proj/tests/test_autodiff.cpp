#include <doctest.h>

#include <functional>

#include "hyperagg/autodiff.hpp"
#include "hyperagg/error.hpp"
#include "hyperagg/training.hpp"
#include "oracles.hpp"

using namespace hyperagg;
using ad::Graph;
using ad::NodeId;

namespace {

// Maps the input leaf to a matrix node; the harness closes it with a fixed
// random projection and a cross-entropy head.
using Builder = std::function<NodeId(Graph&, NodeId)>;

double run(const Tensor& x, const Builder& build, Tensor* grad) {
  Graph g;
  const NodeId xi = g.leaf(x, true);
  const NodeId m = build(g, xi);
  std::mt19937_64 rng(99);
  const NodeId r = g.leaf(oracle::random_tensor({3, g.value(m).dim(1)}, rng), false);
  const NodeId loss = g.cross_entropy(g.matmul(m, r, 1.7), {{0, 1}, {1, 2}, {0, 0}});
  g.backward(loss);
  if (grad) *grad = g.grad(xi);
  return g.value(loss)[0];
}

double check_builder(const Tensor& x0, const Builder& build, double h = 1e-5) {
  Tensor grad;
  run(x0, build, &grad);
  std::vector<double> x(x0.values().begin(), x0.values().end());
  const std::vector<double> analytic(grad.values().begin(), grad.values().end());
  const auto f = [&] { return run(Tensor(x0.shape(), x), build, nullptr); };
  return finite_diff_check(x, f, analytic, h).max_rel_error;
}

}  // namespace

TEST_CASE("every op's gradient matches central differences") {
  std::mt19937_64 rng(61);
  const Tensor w1 = oracle::random_tensor({4, 3}, rng), b1 = oracle::random_tensor({4}, rng);
  const Tensor w3 = oracle::random_tensor({2, 3, 3, 3}, rng), b3 = oracle::random_tensor({2}, rng);
  const Tensor map = oracle::random_tensor({3, 3, 4}, rng);

  SUBCASE("conv 1x1 input") {
    CHECK(check_builder(map, [&](Graph& g, NodeId x) {
            return g.transpose(g.conv(x, g.leaf(w1, false), g.leaf(b1, false)));
          }) <= 1e-6);
  }
  SUBCASE("conv 3x3 weight") {
    CHECK(check_builder(w3, [&](Graph& g, NodeId w) {
            return g.transpose(g.conv(g.leaf(map, false), w, g.leaf(b3, false)));
          }) <= 1e-6);
  }
  SUBCASE("conv 3x3 input and bias") {
    CHECK(check_builder(map, [&](Graph& g, NodeId x) {
            return g.transpose(g.conv(x, g.leaf(w3, false), g.leaf(b3, false)));
          }) <= 1e-6);
    CHECK(check_builder(b3, [&](Graph& g, NodeId b) {
            return g.transpose(g.conv(g.leaf(map, false), g.leaf(w3, false), b));
          }) <= 1e-6);
  }
  SUBCASE("relu") {
    Tensor away = map;
    for (double& v : away.values()) v += v > 0 ? 0.1 : -0.1;
    CHECK(check_builder(away, [&](Graph& g, NodeId x) { return g.transpose(g.relu(x)); }) <= 1e-6);
  }
  SUBCASE("resize up and down") {
    CHECK(check_builder(map, [&](Graph& g, NodeId x) { return g.transpose(g.resize(x, 7, 5)); }) <= 1e-6);
    CHECK(check_builder(map, [&](Graph& g, NodeId x) { return g.transpose(g.resize(x, 2, 2)); }) <= 1e-6);
  }
  SUBCASE("softmax with and without mirror grouping") {
    const Tensor logits = oracle::random_tensor({2, 4}, rng);
    CHECK(check_builder(logits, [&](Graph& g, NodeId x) { return g.softmax(x); }) <= 1e-6);
    CHECK(check_builder(logits, [&](Graph& g, NodeId x) { return g.softmax(x, 4); }) <= 1e-6);
  }
  SUBCASE("row normalize") {
    CHECK(check_builder(oracle::random_tensor({4, 3}, rng), [&](Graph& g, NodeId x) { return g.row_normalize(x); }) <=
          1e-6);
  }
  SUBCASE("matmul both operands") {
    const Tensor other = oracle::random_tensor({5, 3}, rng);
    CHECK(check_builder(oracle::random_tensor({4, 3}, rng),
                        [&](Graph& g, NodeId x) { return g.matmul(x, g.leaf(other, false), 0.8); }) <= 1e-6);
    CHECK(check_builder(oracle::random_tensor({4, 3}, rng),
                        [&](Graph& g, NodeId x) { return g.matmul(g.leaf(other, false), x, 0.8); }) <= 1e-6);
  }
  SUBCASE("weighted sum weights and terms") {
    const Tensor ta = oracle::random_tensor({3, 3}, rng), tb = oracle::random_tensor({3, 3}, rng);
    const Tensor tc = oracle::random_tensor({3, 3}, rng), td = oracle::random_tensor({3, 3}, rng);
    CHECK(check_builder(oracle::random_tensor({4}, rng), [&](Graph& g, NodeId w) {
            return g.weighted_sum(w, {g.leaf(ta, false), g.leaf(tb, false), g.leaf(tc, false), g.leaf(td, false)},
                                  {0, 1, 2, 3}, 2);
          }) <= 1e-6);
    const Tensor wts = oracle::random_tensor({2}, rng);
    CHECK(check_builder(ta, [&](Graph& g, NodeId x) {
            return g.weighted_sum(g.leaf(wts, false), {x, g.leaf(tb, false), x}, {0, 1, 1});
          }) <= 1e-6);
  }
  SUBCASE("add") {
    const Tensor other = oracle::random_tensor({4, 3}, rng);
    CHECK(check_builder(oracle::random_tensor({4, 3}, rng),
                        [&](Graph& g, NodeId x) { return g.add(x, g.add(x, g.leaf(other, false))); }) <= 1e-6);
  }
}

TEST_CASE("cross-entropy gradient on a raw similarity matrix") {
  std::mt19937_64 rng(62);
  const Tensor sim0 = oracle::random_tensor({4, 5}, rng, 2.0);
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 4}, {3, 1}, {3, 1}};
  auto eval = [&](const Tensor& s, Tensor* grad) {
    Graph g;
    const NodeId x = g.leaf(s);
    const NodeId l = g.cross_entropy(x, pairs);
    g.backward(l);
    if (grad) *grad = g.grad(x);
    return g.value(l)[0];
  };
  Tensor grad;
  eval(sim0, &grad);
  std::vector<double> x(sim0.values().begin(), sim0.values().end());
  const auto report = finite_diff_check(
      x, [&] { return eval(Tensor(sim0.shape(), x), nullptr); },
      std::vector<double>(grad.values().begin(), grad.values().end()), 1e-6);
  CHECK(report.max_rel_error <= 1e-6);
  CHECK(report.checked == 20);
}

TEST_CASE("scale-and-add weight gradient is the summed product with the upstream gradient") {
  std::mt19937_64 rng(63);
  const Tensor a = oracle::random_tensor({1, 5}, rng), b = oracle::random_tensor({1, 5}, rng);
  const Tensor upstream = oracle::random_tensor({1, 5}, rng);
  Graph g;
  const NodeId w = g.leaf(Tensor({2}, {0.3, -1.2}));
  const NodeId sum = g.weighted_sum(w, {g.leaf(a, false), g.leaf(b, false)}, {0, 1});
  const NodeId loss = g.matmul(sum, g.leaf(upstream, false), 1.0);
  g.backward(loss);
  double ga = 0.0, gb = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    ga += a[i] * upstream[i];
    gb += b[i] * upstream[i];
  }
  CHECK(std::abs(g.grad(w)[0] - ga) <= 1e-14);
  CHECK(std::abs(g.grad(w)[1] - gb) <= 1e-14);
}

TEST_CASE("a branch with an exactly zero injected weight gets zero gradient") {
  std::mt19937_64 rng(64);
  Graph g;
  std::vector<NodeId> weights, terms;
  for (std::size_t l = 0; l < 2; ++l) {
    const NodeId w = g.leaf(oracle::random_tensor({4, 3}, rng));
    const NodeId b = g.leaf(oracle::random_tensor({4}, rng));
    weights.push_back(w);
    terms.push_back(g.conv(g.leaf(oracle::random_tensor({3, 3, 3}, rng), false), w, b));
  }
  const NodeId mix = g.leaf(Tensor({2}, {1.0, 0.0}), false);
  const NodeId desc = g.row_normalize(g.transpose(g.weighted_sum(mix, terms, {0, 1})));
  const NodeId other = g.row_normalize(g.leaf(oracle::random_tensor({9, 4}, rng), false));
  const NodeId loss = g.cross_entropy(g.matmul(desc, other, kDefaultTemperature), {{0, 3}, {5, 2}});
  g.backward(loss);
  for (double v : g.grad(weights[1]).values()) CHECK(v == 0.0);
  double alive = 0.0;
  for (double v : g.grad(weights[0]).values()) alive += std::abs(v);
  CHECK(alive > 0.0);
}

TEST_CASE("graph misuse raises GraphError") {
  Graph g;
  const NodeId x = g.leaf(Tensor({2, 2}, 1.0));
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidInput;
  };
  CHECK(code_of([&] { g.backward(x); }) == ErrorCode::GraphError);
  const NodeId frozen = g.cross_entropy(g.leaf(Tensor({2, 2}, 1.0), false), {{0, 0}});
  CHECK(code_of([&] { g.backward(frozen); }) == ErrorCode::GraphError);
  CHECK(code_of([&] { g.cross_entropy(x, {}); }) == ErrorCode::GraphError);
  CHECK(code_of([&] { g.cross_entropy(x, {{2, 0}}); }) == ErrorCode::GraphError);
  CHECK(code_of([&] { g.relu(99); }) == ErrorCode::GraphError);
  CHECK(code_of([&] { g.matmul(x, g.leaf(Tensor({2, 3})), 1.0); }) == ErrorCode::InvalidShape);
}

TEST_CASE("gradients accumulate until zero_grad") {
  Graph g;
  const NodeId x = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  const NodeId loss = g.cross_entropy(x, {{0, 1}});
  g.backward(loss);
  const Tensor once = g.grad(x);
  g.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.grad(x)[i] == doctest::Approx(2 * once[i]));
  g.zero_grad();
  for (double v : g.grad(x).values()) CHECK(v == 0.0);
}

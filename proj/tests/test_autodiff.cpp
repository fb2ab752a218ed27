#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mixloc/array.hpp"
#include "mixloc/graph.hpp"
#include "mixloc/ops.hpp"
#include "mixloc/rng.hpp"
#include "testutil.hpp"

using mixloc::Array;
using mixloc::Rng;
using testutil::mat;
using testutil::random_array;
using testutil::rowvec;
namespace ad = mixloc::ad;

namespace {

using BuildFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

// Projects the op output onto fixed random weights so the loss is scalar,
// then compares reverse-mode gradients of every input coordinate against
// central differences. Inputs must sit away from any kinks of the op.
void fd_check(const std::vector<Array>& inputs, const BuildFn& build, double tol = 1e-6) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const Array& x : inputs) vars.push_back(g.parameter(x));
  ad::Var out = build(g, vars);

  Rng wrng(99);
  Array w(out.value().shape());
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = wrng.uniform(-1.0, 1.0);
  ad::Var loss = ad::sum_all(ad::multiply(out, g.constant(w)));
  const ad::GradientMap grads = g.backward(loss);

  auto value_at = [&](std::size_t which, std::size_t coord, double delta) {
    std::vector<Array> shifted = inputs;
    shifted[which][coord] += delta;
    ad::Graph g2;
    std::vector<ad::Var> vs;
    for (const Array& x : shifted) vs.push_back(g2.parameter(x));
    const Array& o = build(g2, vs).value();
    double total = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) total += o[i] * w[i];
    return total;
  };

  const double h = 1e-6;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const Array& analytic = grads.at(vars[which]);
    REQUIRE(analytic.shape() == inputs[which].shape());
    for (std::size_t c = 0; c < inputs[which].numel(); ++c) {
      const double fd = (value_at(which, c, h) - value_at(which, c, -h)) / (2.0 * h);
      const double an = analytic[c];
      const double scale = std::max({1.0, std::fabs(fd), std::fabs(an)});
      CAPTURE(which);
      CAPTURE(c);
      CHECK(std::fabs(fd - an) <= tol * scale);
    }
  }
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("finite differences per op") {
  Rng rng(7);
  Array a = random_array(rng, {3, 4});
  Array b = random_array(rng, {3, 4});
  Array c = random_array(rng, {4, 2});

  SUBCASE("add") {
    fd_check({a, b}, [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::add(v[0], v[1]); });
  }
  SUBCASE("subtract") {
    fd_check({a, b},
             [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::subtract(v[0], v[1]); });
  }
  SUBCASE("multiply") {
    fd_check({a, b},
             [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::multiply(v[0], v[1]); });
  }
  SUBCASE("scale") {
    fd_check({a}, [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::scale(v[0], -1.7); });
  }
  SUBCASE("exp") {
    fd_check({a}, [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::exp(v[0]); });
  }
  SUBCASE("log") {
    Array pos = random_array(rng, {3, 4}, 0.2, 1.8);
    fd_check({pos}, [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::log(v[0]); });
  }
  SUBCASE("tanh") {
    fd_check({a}, [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::tanh(v[0]); });
  }
  SUBCASE("matmul") {
    fd_check({a, c},
             [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::matmul(v[0], v[1]); });
  }
  SUBCASE("transpose") {
    fd_check({a},
             [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::transpose(v[0]); });
  }
  SUBCASE("softmax_rows") {
    fd_check({a}, [](ad::Graph&, const std::vector<ad::Var>& v) {
      return ad::softmax_rows(v[0], 0.4);
    });
  }
  SUBCASE("max_rows") {
    // Entries spread out so no row has a near-tie at the fd step size.
    Array spread = mat({{0.1, 0.9, 0.4}, {2.0, -1.0, 0.3}});
    fd_check({spread},
             [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::max_rows(v[0]); });
  }
  SUBCASE("trace_log") {
    Array sq = random_array(rng, {3, 3}, -1.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) sq.at(i, i) = 0.5 + rng.uniform();
    fd_check({sq},
             [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::trace_log(v[0]); });
  }
  SUBCASE("l2_normalize_rows") {
    Array x = random_array(rng, {3, 4}, 0.3, 1.5);
    fd_check({x}, [](ad::Graph&, const std::vector<ad::Var>& v) {
      return ad::l2_normalize_rows(v[0], 1e-8);
    });
  }
  SUBCASE("concat and slice rows") {
    fd_check({a, b}, [](ad::Graph&, const std::vector<ad::Var>& v) {
      return ad::slice_rows(ad::concat_rows({v[0], v[1]}), 2, 3);
    });
  }
  SUBCASE("sum_all") {
    fd_check({a}, [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::sum_all(v[0]); });
  }
  SUBCASE("affine") {
    Array w = random_array(rng, {4, 2});
    Array bias = random_array(rng, {1, 2});
    fd_check({a, w, bias}, [](ad::Graph&, const std::vector<ad::Var>& v) {
      return ad::affine(v[0], v[1], v[2]);
    });
  }
  SUBCASE("composite expression") {
    fd_check({a, c}, [](ad::Graph&, const std::vector<ad::Var>& v) {
      return ad::softmax_rows(ad::matmul(ad::tanh(v[0]), v[1]), 0.5);
    });
  }
}

TEST_CASE("softmax op value") {
  ad::Graph g;
  ad::Var x = g.constant(mat({{1.0, 0.0}}));
  ad::Var p = ad::softmax_rows(x, 1.0);
  CHECK(std::fabs(p.value()[0] - 0.7311) <= 1e-4);
  CHECK(std::fabs(p.value()[1] - 0.2689) <= 1e-4);
}

TEST_CASE("max_rows tie sends gradient to the lowest column") {
  ad::Graph g;
  ad::Var x = g.parameter(mat({{1.0, 1.0}}));
  ad::Var loss = ad::sum_all(ad::max_rows(x));
  const Array grad = g.backward(loss).at(x);
  CHECK(grad[0] == 1.0);
  CHECK(grad[1] == 0.0);
}

TEST_CASE("sum of squares gradient") {
  ad::Graph g;
  ad::Var x = g.parameter(rowvec({1.0, 2.0}));
  ad::Var loss = ad::sum_all(ad::multiply(x, x));
  const Array grad = g.backward(loss).at(x);
  CHECK(grad[0] == 2.0);
  CHECK(grad[1] == 4.0);
}

TEST_CASE("unreachable parameters get zero gradients") {
  ad::Graph g;
  ad::Var used = g.parameter(rowvec({3.0}));
  ad::Var unused = g.parameter(mat({{1, 2}, {3, 4}}));
  ad::Var loss = ad::sum_all(ad::scale(used, 2.0));
  const ad::GradientMap grads = g.backward(loss);

  CHECK(grads.size() == 2);
  CHECK(grads.at(used)[0] == 2.0);
  const Array& dz = grads.at(unused);
  REQUIRE(dz.shape() == unused.value().shape());
  for (std::size_t i = 0; i < dz.numel(); ++i) CHECK(dz[i] == 0.0);
}

TEST_CASE("gradient map follows parameter insertion order") {
  ad::Graph g;
  ad::Var p0 = g.parameter(rowvec({1.0}));
  ad::Var p1 = g.parameter(rowvec({2.0}));
  ad::Var p2 = g.parameter(rowvec({3.0}));
  ad::Var loss = ad::sum_all(ad::add(ad::add(p0, p1), p2));
  const ad::GradientMap grads = g.backward(loss);

  std::vector<std::size_t> ids;
  for (const auto& [id, grad] : grads) ids.push_back(id);
  CHECK(ids == std::vector<std::size_t>{p0.id, p1.id, p2.id});
}

TEST_CASE("recompute replays stored nodes bit for bit") {
  Rng rng(21);
  ad::Graph g;
  ad::Var x = g.parameter(random_array(rng, {4, 3}));
  ad::Var w = g.parameter(random_array(rng, {3, 3}));
  ad::Var out = ad::softmax_rows(ad::matmul(ad::tanh(x), w), 0.2);
  ad::Var loss = ad::sum_all(ad::log(out));
  (void)loss;

  for (std::size_t id = 0; id < g.size(); ++id) {
    if (g.kind(id) != ad::NodeKind::Derived) continue;
    CHECK(g.recompute(id) == g.value(id));
  }
}

TEST_CASE("graph validation") {
  ad::Graph g;
  ad::Var a = g.parameter(mat({{1, 2}, {3, 4}}));
  ad::Var b = g.parameter(mat({{1, 2, 3}}));

  // Eager forward surfaces shape errors at build time.
  CHECK_THROWS_AS(ad::matmul(b, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);

  // The loss handed to backward must be a scalar from this graph.
  CHECK_THROWS_AS(g.backward(a), std::invalid_argument);
  ad::Graph other;
  ad::Var foreign = ad::sum_all(other.parameter(rowvec({1.0})));
  CHECK_THROWS_AS(g.backward(foreign), std::invalid_argument);
  CHECK_THROWS_AS(ad::add(a, other.parameter(mat({{1, 2}, {3, 4}}))), std::invalid_argument);
}

TEST_SUITE_END();

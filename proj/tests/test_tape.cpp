// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "svrf/rng.hpp"
#include "svrf/tape.hpp"

using svrf::Rng;
using namespace svrf::ad;

namespace {

ParameterStore single(const std::string& name, std::vector<double> v) {
  ParameterStore s;
  const auto n = static_cast<std::uint32_t>(v.size());
  s.set(name, {n}, std::move(v));
  return s;
}

std::vector<double> random_values(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("forward evaluates simple expressions", "[tape]") {
  Tape t;
  NodeRef w = t.param("w", 1, 1);
  NodeRef y = t.mul(w, w);
  auto store = single("w", {3.0});
  CHECK(t.evaluate(store, y)[0] == 9.0);

  Tape t2;
  NodeRef z = t2.exp(t2.scalar(0.0));
  CHECK(t2.evaluate(ParameterStore{}, z)[0] == 1.0);
}

TEST_CASE("forward matches a straight-line two-layer MLP", "[tape]") {
  // Independent oracle: explicit loops, no tape involved.
  const int in_dim = 5, hidden = 7, out_dim = 3, batch = 4;
  Rng rng(42);
  auto x = random_values(batch * in_dim, rng, -1.0, 1.0);
  auto w1 = random_values(in_dim * hidden, rng, -0.7, 0.7);
  auto b1 = random_values(hidden, rng, -0.3, 0.3);
  auto w2 = random_values(hidden * out_dim, rng, -0.7, 0.7);
  auto b2 = random_values(out_dim, rng, -0.3, 0.3);

  std::vector<double> expect(batch * out_dim);
  for (int r = 0; r < batch; ++r) {
    std::vector<double> h(hidden);
    for (int j = 0; j < hidden; ++j) {
      double acc = b1[j];
      for (int i = 0; i < in_dim; ++i) acc += x[r * in_dim + i] * w1[i * hidden + j];
      h[j] = std::max(acc, 0.0);
    }
    for (int k = 0; k < out_dim; ++k) {
      double acc = b2[k];
      for (int j = 0; j < hidden; ++j) acc += h[j] * w2[j * out_dim + k];
      expect[r * out_dim + k] = acc;
    }
  }

  ParameterStore store;
  store.set("w1", {static_cast<std::uint32_t>(in_dim), static_cast<std::uint32_t>(hidden)}, w1);
  store.set("b1", {static_cast<std::uint32_t>(hidden)}, b1);
  store.set("w2", {static_cast<std::uint32_t>(hidden), static_cast<std::uint32_t>(out_dim)}, w2);
  store.set("b2", {static_cast<std::uint32_t>(out_dim)}, b2);

  Tape t;
  NodeRef xn = t.constant(batch, in_dim, x);
  NodeRef h = t.relu(t.add(t.matmul(xn, t.param("w1", in_dim, hidden)), t.param("b1", 1, hidden)));
  NodeRef y = t.add(t.matmul(h, t.param("w2", hidden, out_dim)), t.param("b2", 1, out_dim));
  auto got = t.evaluate(store, y);

  REQUIRE(got.size() == expect.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got[i] - expect[i]) < 1e-12);
}

TEST_CASE("gradient of basic expressions", "[tape]") {
  {
    Tape t;
    NodeRef w = t.param("w", 1, 1);
    NodeRef y = t.mul(w, w);
    auto g = t.gradient(single("w", {3.0}), y);
    CHECK(g.values("w")[0] == Catch::Approx(6.0));
  }
  {
    Tape t;
    NodeRef a = t.param("a", 1, 1);
    NodeRef b = t.param("b", 1, 1);
    NodeRef y = t.mul(a, b);
    ParameterStore s;
    s.set("a", {1}, {2.0});
    s.set("b", {1}, {5.0});
    auto g = t.gradient(s, y);
    CHECK(g.values("a")[0] == Catch::Approx(5.0));
    CHECK(g.values("b")[0] == Catch::Approx(2.0));
  }
}

TEST_CASE("untouched parameters get zero gradients", "[tape]") {
  Tape t;
  NodeRef w = t.param("w", 1, 1);
  NodeRef y = t.mul(w, w);
  ParameterStore s;
  s.set("w", {1}, {2.0});
  s.set("unused", {3}, {1.0, 2.0, 3.0});
  auto g = t.gradient(s, y);
  CHECK(g.values("unused") == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("gradient rejects non-scalar outputs", "[tape]") {
  Tape t;
  NodeRef w = t.param("w", 2, 1);
  NodeRef y = t.mul(w, w);
  CHECK_THROWS_AS(t.gradient(single("w", {1.0, 2.0}), y), std::invalid_argument);
}

TEST_CASE("errors: unresolved name and contraction shape mismatch", "[tape]") {
  {
    Tape t;
    NodeRef w = t.param("missing", 1, 1);
    CHECK_THROWS_AS(t.evaluate(ParameterStore{}, w), std::invalid_argument);
  }
  {
    Tape t;
    NodeRef a = t.constant(2, 3, std::vector<double>(6, 1.0));
    NodeRef b = t.constant(2, 3, std::vector<double>(6, 1.0));
    CHECK_THROWS_AS(t.matmul(a, b), std::invalid_argument);
  }
  {
    Tape t;
    // store says 3 elements, node expects 4
    NodeRef w = t.param("w", 2, 2);
    NodeRef y = t.sum(w);
    CHECK_THROWS_AS(t.evaluate(single("w", {1, 2, 3}), y), std::invalid_argument);
  }
}

TEST_CASE("every primitive matches central finite differences", "[tape]") {
  Rng rng(7);
  const double step = 1e-5;

  auto check_unary = [&](auto make, double lo, double hi) {
    Tape t;
    NodeRef w = t.param("w", 2, 3);
    NodeRef y = t.sum(make(t, w));
    auto store = single("w", random_values(6, rng, lo, hi));
    auto fd = finite_difference_check(t, store, y, step);
    CHECK(fd.max_rel_error < 1e-6);
  };

  check_unary([](Tape& t, NodeRef w) { return t.neg(w); }, -2.0, 2.0);
  check_unary([](Tape& t, NodeRef w) { return t.reciprocal(w); }, 0.5, 2.0);
  check_unary([](Tape& t, NodeRef w) { return t.exp(w); }, -1.0, 1.0);
  check_unary([](Tape& t, NodeRef w) { return t.log(w); }, 0.5, 3.0);
  check_unary([](Tape& t, NodeRef w) { return t.sin(w); }, -2.0, 2.0);
  check_unary([](Tape& t, NodeRef w) { return t.cos(w); }, -2.0, 2.0);
  check_unary([](Tape& t, NodeRef w) { return t.sqrt(w); }, 0.5, 3.0);
  check_unary([](Tape& t, NodeRef w) { return t.mul(w, w); }, -2.0, 2.0);

  // binary with both args as parameters, plus broadcasts
  {
    Tape t;
    NodeRef a = t.param("a", 2, 3);
    NodeRef b = t.param("b", 1, 3);
    NodeRef y = t.sum(t.mul(t.add(a, b), a));
    ParameterStore s;
    s.set("a", {2, 3}, random_values(6, rng, -2.0, 2.0));
    s.set("b", {3}, random_values(3, rng, -2.0, 2.0));
    CHECK(finite_difference_check(t, s, y, step).max_rel_error < 1e-6);
  }
  {
    Tape t;
    NodeRef a = t.param("a", 2, 3);
    NodeRef b = t.param("b", 2, 1);
    NodeRef y = t.sum(t.mul(a, b));
    ParameterStore s;
    s.set("a", {2, 3}, random_values(6, rng, -2.0, 2.0));
    s.set("b", {2}, random_values(2, rng, 0.5, 2.0));
    CHECK(finite_difference_check(t, s, y, step).max_rel_error < 1e-6);
  }
  // max away from ties
  {
    Tape t;
    NodeRef a = t.param("a", 2, 2);
    NodeRef y = t.sum(t.max(a, t.scalar(0.0)));
    ParameterStore s;
    s.set("a", {4}, {1.5, -2.0, 0.7, -0.4});
    auto fd = finite_difference_check(t, s, y, step);
    CHECK(fd.max_rel_error < 1e-6);
    CHECK_FALSE(fd.unreliable);
  }
  // contraction
  {
    Tape t;
    NodeRef a = t.param("a", 3, 4);
    NodeRef b = t.param("b", 4, 2);
    NodeRef y = t.sum(t.matmul(a, b));
    ParameterStore s;
    s.set("a", {3, 4}, random_values(12, rng, -1.0, 1.0));
    s.set("b", {4, 2}, random_values(8, rng, -1.0, 1.0));
    CHECK(finite_difference_check(t, s, y, step).max_rel_error < 1e-6);
  }
  // composed activations
  {
    Tape t;
    NodeRef a = t.param("a", 1, 4);
    NodeRef y = t.sum(t.add(t.softplus(a), t.mul(t.sigmoid(a), t.tanh(a))));
    ParameterStore s;
    s.set("a", {4}, {-3.0, -0.4, 0.9, 2.5});
    CHECK(finite_difference_check(t, s, y, step).max_rel_error < 1e-6);
  }
}

TEST_CASE("finite difference check behaviors", "[tape]") {
  // exact for a linear function
  {
    Tape t;
    NodeRef w = t.param("w", 1, 3);
    NodeRef y = t.sum(t.mul(w, t.constant(1, 3, {2.0, -1.0, 0.5})));
    auto fd = finite_difference_check(t, single("w", {0.3, 0.7, -0.2}), y, 1e-5);
    CHECK(fd.max_rel_error < 1e-10);
  }
  // exp at w = 1
  {
    Tape t;
    NodeRef w = t.param("w", 1, 1);
    NodeRef y = t.exp(w);
    auto fd = finite_difference_check(t, single("w", {1.0}), y, 1e-5);
    CHECK(fd.max_rel_error < 1e-8);
  }
  // max at a tie point is flagged
  {
    Tape t;
    NodeRef w = t.param("w", 1, 1);
    NodeRef y = t.max(w, t.scalar(1.0));
    auto fd = finite_difference_check(t, single("w", {1.0}), y, 1e-5);
    CHECK(fd.unreliable);
  }
  CHECK_THROWS_AS(
      [] {
        Tape t;
        NodeRef w = t.param("w", 1, 1);
        finite_difference_check(t, single("w", {1.0}), w, 0.0);
      }(),
      std::invalid_argument);
}

TEST_CASE("gradient is linear in the objective", "[tape]") {
  Rng rng(11);
  auto vals = random_values(4, rng, 0.3, 1.7);
  const double ca = 2.5, cb = -1.25;

  auto build_f = [](Tape& t, NodeRef w) { return t.sum(t.mul(w, w)); };
  auto build_g = [](Tape& t, NodeRef w) { return t.sum(t.exp(w)); };

  Tape tf;
  auto gf = tf.gradient(single("w", vals), build_f(tf, tf.param("w", 2, 2)));
  Tape tg;
  auto gg = tg.gradient(single("w", vals), build_g(tg, tg.param("w", 2, 2)));

  Tape th;
  NodeRef w = th.param("w", 2, 2);
  NodeRef h = th.add(th.mul(th.scalar(ca), build_f(th, w)),
                     th.mul(th.scalar(cb), build_g(th, w)));
  auto gh = th.gradient(single("w", vals), h);

  for (int i = 0; i < 4; ++i)
    CHECK(gh.values("w")[i] ==
          Catch::Approx(ca * gf.values("w")[i] + cb * gg.values("w")[i]).epsilon(1e-12));
}

TEST_CASE("evaluate and gradient are bitwise deterministic", "[tape]") {
  Rng rng(3);
  Tape t;
  NodeRef a = t.param("a", 4, 4);
  NodeRef b = t.param("b", 4, 4);
  NodeRef y = t.sum(t.mul(t.sigmoid(t.matmul(a, b)), t.sin(a)));
  ParameterStore s;
  s.set("a", {4, 4}, random_values(16, rng, -1.0, 1.0));
  s.set("b", {4, 4}, random_values(16, rng, -1.0, 1.0));

  auto v1 = t.evaluate(s, y);
  auto v2 = t.evaluate(s, y);
  REQUIRE(v1.size() == v2.size());
  for (std::size_t i = 0; i < v1.size(); ++i) REQUIRE(v1[i] == v2[i]);

  auto g1 = t.gradient(s, y);
  auto g2 = t.gradient(s, y);
  for (const auto& name : g1.names()) {
    const auto& x1 = g1.values(name);
    const auto& x2 = g2.values(name);
    REQUIRE(x1.size() == x2.size());
    for (std::size_t i = 0; i < x1.size(); ++i) REQUIRE(x1[i] == x2[i]);
  }
}

TEST_CASE("parameter store validates shapes and names", "[tape]") {
  ParameterStore s;
  CHECK_THROWS_AS(s.set("x", {2, 2}, {1.0, 2.0}), std::invalid_argument);
  s.set("x", {2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(s.total_parameters() == 4);
  CHECK_THROWS_AS(s.values("nope"), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bitwise exact", "[tape]") {
  Rng rng(19);
  ParameterStore s;
  s.set("alpha", {3, 2}, random_values(6, rng, -10.0, 10.0));
  s.set("beta", {5}, random_values(5, rng, -1e-8, 1e-8));
  s.set("scalar", {1}, {0.0});

  const std::string path =
      (std::filesystem::temp_directory_path() / "svrf_ckpt_test.svrf").string();
  save_checkpoint(s, path, "PARM");
  auto ck = load_checkpoint(path);
  CHECK(ck.section == "PARM");
  REQUIRE(ck.params.names() == s.names());
  for (const auto& name : s.names()) {
    REQUIRE(ck.params.dims(name) == s.dims(name));
    const auto& a = ck.params.values(name);
    const auto& b = s.values(name);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(std::bit_cast<std::uint64_t>(a[i]) == std::bit_cast<std::uint64_t>(b[i]));
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(parse_checkpoint("JUNKDATA"), std::runtime_error);
}

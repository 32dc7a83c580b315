// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "svrf/field.hpp"

using namespace svrf;

TEST_CASE("positional encoding basics", "[field]") {
  {
    auto enc = positional_encode(Vec3::Zero(), 5);
    REQUIRE(enc.size() == 30);
    for (std::size_t i = 0; i < enc.size(); i += 2) {
      CHECK(enc[i] == 0.0);
      CHECK(enc[i + 1] == 1.0);
    }
  }
  {
    auto enc = positional_encode(Vec3(0.5, 0, 0), 1);
    REQUIRE(enc.size() == 6);
    CHECK(enc[0] == Catch::Approx(1.0));                // sin(pi/2)
    CHECK(enc[1] == Catch::Approx(0.0).margin(1e-15));  // cos(pi/2)
  }
  for (int bands : {1, 3, 8})
    CHECK(positional_encode(Vec3(0.1, 0.2, 0.3), bands).size() ==
          static_cast<std::size_t>(6 * bands));
}

TEST_CASE("first-band encoding separates points in the unit cube", "[field]") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 a(rng.uniform(), rng.uniform(), rng.uniform());
    Vec3 b(rng.uniform(), rng.uniform(), rng.uniform());
    if ((a - b).cwiseAbs().maxCoeff() < 1e-9) continue;
    auto ea = positional_encode(a, 1);
    auto eb = positional_encode(b, 1);
    double diff = 0.0;
    for (std::size_t i = 0; i < 6; ++i) diff = std::max(diff, std::abs(ea[i] - eb[i]));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("integrated encoding damps by segment extent", "[field]") {
  SegmentGaussian seg;
  seg.mean = Vec3(0.37, -0.81, 0.12);

  // zero covariance reduces to the point encoding exactly
  auto a = integrated_encode(seg, 4);
  auto b = positional_encode(seg.mean, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // huge variance kills every term
  seg.variance = Vec3(1e6, 1e6, 1e6);
  for (double v : integrated_encode(seg, 4)) CHECK(std::abs(v) < 1e-300);

  // unit variance on the first axis scales band-0 x terms by exp(-pi^2/2)
  seg.variance = Vec3(1.0, 0.0, 0.0);
  auto c = integrated_encode(seg, 1);
  const double damp = std::exp(-0.5 * 3.14159265358979323846 * 3.14159265358979323846);
  CHECK(damp == Catch::Approx(0.00719).margin(2e-5));
  CHECK(c[0] == Catch::Approx(damp * b[0]).margin(1e-15));
  CHECK(c[1] == Catch::Approx(damp * b[1]).margin(1e-15));
  CHECK(c[2] == b[2]);
  CHECK(c[3] == b[3]);
}

TEST_CASE("segment gaussian moments", "[field]") {
  Ray ray;
  ray.origin = Vec3(1, 0, 0);
  ray.direction = Vec3::UnitZ();
  ray.t_near = 1.0;
  ray.t_far = 5.0;
  ray.footprint = 0.01;
  SegmentGaussian seg = segment_gaussian(ray, 2.0, 2.5);
  CHECK((seg.mean - Vec3(1, 0, 2.25)).norm() < 1e-12);
  const double along = 0.5 * 0.5 / 12.0;
  CHECK(seg.variance[2] == Catch::Approx(along));  // along the ray
  const double radius = 0.01 * 2.25;
  CHECK(seg.variance[0] == Catch::Approx(along + 0.25 * radius * radius));
  CHECK((seg.variance.array() >= 0.0).all());
}

TEST_CASE("query field respects activation ranges", "[field]") {
  FieldConfig cfg;
  cfg.hidden_width = 16;
  cfg.color_width = 8;
  cfg.encoding.position_bands = 3;
  cfg.encoding.direction_bands = 2;
  cfg.encoding.integrated = false;

  Rng rng(17);
  auto params = init_field_params(cfg, rng);
  for (int i = 0; i < 20; ++i) {
    Vec3 x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    Vec3 d = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    FieldSample s = query_field(cfg, params, x, d);
    CHECK(s.sigma >= 0.0);
    CHECK((s.color.array() >= 0.0).all());
    CHECK((s.color.array() <= 1.0).all());
    CHECK(std::isfinite(s.sigma));
  }

  // zero weights: density softplus(0), color sigmoid(0)
  auto zero = init_field_params_zero(cfg);
  FieldSample s = query_field(cfg, zero, Vec3(0.3, 0.2, 0.1), Vec3::UnitZ());
  CHECK(s.sigma == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(s.color.x() == Catch::Approx(0.5));
  CHECK(s.color.y() == Catch::Approx(0.5));
  CHECK(s.color.z() == Catch::Approx(0.5));

  CHECK_THROWS_AS(query_field(cfg, params, Vec3::Zero(), Vec3(0, 0, 2)),
                  std::invalid_argument);
}

TEST_CASE("density ignores the viewing direction", "[field]") {
  FieldConfig cfg;
  cfg.hidden_width = 16;
  cfg.color_width = 8;
  cfg.encoding.position_bands = 3;
  cfg.encoding.direction_bands = 2;
  cfg.encoding.integrated = false;
  Rng rng(23);
  auto params = init_field_params(cfg, rng);

  Vec3 x(0.4, -0.2, 0.9);
  double sigma0 = query_field(cfg, params, x, Vec3::UnitZ()).sigma;
  for (int i = 0; i < 10; ++i) {
    Vec3 d = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    FieldSample s = query_field(cfg, params, x, d);
    CHECK(s.sigma == sigma0);
    CHECK(std::isfinite(s.color.sum()));
  }
}

TEST_CASE("outputs stay finite under extreme weights", "[field]") {
  FieldConfig cfg;
  cfg.hidden_width = 8;
  cfg.color_width = 4;
  cfg.encoding.position_bands = 2;
  cfg.encoding.direction_bands = 1;
  cfg.encoding.integrated = false;
  Rng rng(29);
  auto params = init_field_params(cfg, rng);
  for (const auto& name : params.names())
    for (auto& v : params.values(name)) v *= 1e4;

  FieldSample s = query_field(cfg, params, Vec3(0.5, 0.5, 0.5), Vec3::UnitX());
  CHECK(std::isfinite(s.sigma));
  CHECK(std::isfinite(s.color.x()));
  CHECK(std::isfinite(s.color.y()));
  CHECK(std::isfinite(s.color.z()));
  CHECK((s.color.array() >= 0.0).all());
  CHECK((s.color.array() <= 1.0).all());
}

TEST_CASE("on-tape encoding matches the numeric encoding", "[field]") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    Vec3 x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    ad::Tape t;
    ad::NodeRef xn = t.param("x", 1, 3);
    ad::NodeRef enc = build_positional_encode(t, xn, 4);
    ad::ParameterStore s;
    s.set("x", {3}, {x.x(), x.y(), x.z()});
    auto got = t.evaluate(s, enc);
    auto expect = positional_encode(x, 4);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == Catch::Approx(expect[i]).margin(1e-14));
  }
}

TEST_CASE("density gradient w.r.t. position matches finite differences", "[field]") {
  FieldConfig cfg;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 2;
  cfg.skip_layer = 1;
  cfg.color_width = 4;
  cfg.encoding.position_bands = 2;
  cfg.encoding.direction_bands = 0;
  cfg.encoding.integrated = false;

  Rng rng(47);
  ad::ParameterStore params = init_field_params(cfg, rng);
  params.set("x", {3}, {0.31, -0.44, 0.27});

  ad::Tape t;
  FieldParamNodes pn = make_field_param_nodes(t, cfg, /*trainable=*/true);
  ad::NodeRef xn = t.param("x", 1, 3);
  ad::NodeRef enc = build_positional_encode(t, xn, cfg.encoding.position_bands);
  FieldNodes f = build_field_graph(t, cfg, pn, enc);

  auto fd = ad::finite_difference_check(t, params, f.sigma, 1e-5);
  CHECK(fd.max_rel_error < 1e-4);
}

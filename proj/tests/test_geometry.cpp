// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "svrf/geometry.hpp"

using namespace svrf;

namespace {

CameraPose ring_pose(double angle, double radius, double height, const Vec3& focus) {
  Vec3 pos(radius * std::cos(angle), height, radius * std::sin(angle));
  return CameraPose{lookat_rotation(Vec3::UnitY(), focus, pos), pos};
}

}  // namespace

TEST_CASE("lookat points the forward column at the focus", "[geometry]") {
  {
    Mat3 R = lookat_rotation(Vec3(0, 1, 0), Vec3::Zero(), Vec3(0, 0, -1));
    CHECK((R.col(2) - Vec3(0, 0, 1)).norm() < 1e-12);
    // camera up axis is -y column
    CHECK((-R.col(1) - Vec3(0, 1, 0)).norm() < 1e-12);
  }
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    Vec3 pos(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    Vec3 focus(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    if ((focus - pos).norm() < 1e-3) continue;
    Vec3 up = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    if (std::abs(up.dot((focus - pos).normalized())) > 0.99) continue;
    Mat3 R = lookat_rotation(up, focus, pos);
    CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(R.determinant() == Catch::Approx(1.0).margin(1e-12));
    CHECK((R.col(2) - (focus - pos).normalized()).norm() < 1e-12);
  }
  CHECK_THROWS_AS(lookat_rotation(Vec3(0, 1, 0), Vec3::Zero(), Vec3::Zero()),
                  std::invalid_argument);
  CHECK_THROWS_AS(lookat_rotation(Vec3(0, 0, 1), Vec3(0, 0, 5), Vec3::Zero()),
                  std::invalid_argument);
}

TEST_CASE("ray generation follows the pinhole model", "[geometry]") {
  CameraIntrinsics intr{65.0, 65.0, 32.5, 32.5, 65, 65};
  CameraPose identity;

  // principal point pixel: (32 + 0.5) == principal -> optical axis
  Ray center = pixel_ray(identity, intr, 32, 32, 0.5, 5.0);
  CHECK((center.direction - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK((center.origin - Vec3::Zero()).norm() == 0.0);

  // corner pixel with focal == width: |x/z| close to 0.5
  Ray corner = pixel_ray(identity, intr, 0, 64, 0.5, 5.0);
  CHECK(std::abs(corner.direction.x() / corner.direction.z()) ==
        Catch::Approx(0.5).margin(0.01));

  Rng rng(9);
  std::vector<std::pair<int, int>> pixels;
  for (int i = 0; i < 100; ++i)
    pixels.push_back({static_cast<int>(rng.index(65)), static_cast<int>(rng.index(65))});
  CameraPose pose = ring_pose(1.1, 4.0, 1.0, Vec3::Zero());
  for (const Ray& r : generate_rays(pose, intr, pixels, 2.0, 6.0)) {
    CHECK(std::abs(r.direction.norm() - 1.0) < 1e-12);
    CHECK((r.origin - pose.position()).norm() == 0.0);
  }

  CHECK_THROWS_AS(pixel_ray(identity, intr, -1, 0, 0.5, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(pixel_ray(identity, intr, 0, 65, 0.5, 5.0), std::invalid_argument);
}

TEST_CASE("mean focus point recovers axis intersections", "[geometry]") {
  // x axis through (1,0,0) and y axis through (0,1,0) meet at the origin
  CameraPose a, b;
  a.rotation = lookat_rotation(Vec3(0, 0, 1), Vec3(5, 0, 0), Vec3::Zero());
  a.translation = Vec3(1, 0, 0);
  b.rotation = lookat_rotation(Vec3(0, 0, 1), Vec3(0, 5, 0), Vec3::Zero());
  b.translation = Vec3(0, 1, 0);
  // both axes pass through the origin after shifting origins along directions
  a.translation = Vec3(1, 0, 0);  // on the x axis
  b.translation = Vec3(0, 1, 0);  // on the y axis
  Vec3 p = mean_focus_point({a, b});
  CHECK(p.norm() < 1e-9);

  // construct axes through a known point from random origins
  Rng rng(21);
  Vec3 q(0.3, -1.2, 0.8);
  std::vector<CameraPose> poses;
  for (int i = 0; i < 6; ++i) {
    Vec3 o(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
    if ((q - o).norm() < 0.5) continue;
    poses.push_back(CameraPose{lookat_rotation(Vec3::UnitY(), q, o), o});
  }
  REQUIRE(poses.size() >= 3);
  CHECK((mean_focus_point(poses) - q).norm() < 1e-9);

  // invariance to sliding an origin along its own axis
  std::vector<CameraPose> slid = poses;
  slid[0].translation += 1.7 * slid[0].forward();
  CHECK((mean_focus_point(slid) - mean_focus_point(poses)).norm() < 1e-9);

  // two parallel axes are singular
  CameraPose c = a, d = a;
  d.translation += Vec3(0, 0, 1);
  CHECK_THROWS_AS(mean_focus_point({c, d}), std::invalid_argument);
}

TEST_CASE("sample space from target poses", "[geometry]") {
  std::vector<CameraPose> poses;
  for (int i = 0; i < 4; ++i)
    poses.push_back(ring_pose(i * 1.5707963267948966, 3.0, 1.0, Vec3::Zero()));
  PoseSampleSpace space = build_sample_space(poses, 0.125);

  CHECK((space.box_min.array() <= space.box_max.array()).all());
  CHECK(std::abs(space.mean_up.norm() - 1.0) < 1e-12);
  CHECK((space.focus - Vec3::Zero()).norm() < 1e-9);
  CHECK(space.jitter_std ==
        Catch::Approx(0.125 * (space.box_max - space.box_min).norm()));

  // explicit positions; both cameras look at a shared focus from distinct spots
  CameraPose p1, p2;
  p1.translation = Vec3(0, 0, 0);
  p2.translation = Vec3(1, 2, 3);
  p1.rotation = lookat_rotation(Vec3::UnitY(), Vec3(5, 0, 5), p1.translation);
  p2.rotation = lookat_rotation(Vec3::UnitY(), Vec3(5, 0, 5), p2.translation);
  PoseSampleSpace s2 = build_sample_space({p1, p2});
  CHECK((s2.box_min - Vec3(0, 0, 0)).norm() == 0.0);
  CHECK((s2.box_max - Vec3(1, 2, 3)).norm() == 0.0);

  // cameras on a level ring share the exact same up axis; the mean keeps it
  std::vector<CameraPose> level;
  for (int i = 0; i < 3; ++i) level.push_back(ring_pose(0.3 + i * 2.0, 3.0, 0.0, Vec3::Zero()));
  for (const auto& p : level) REQUIRE((p.up_axis() - Vec3::UnitY()).norm() < 1e-12);
  CHECK((build_sample_space(level).mean_up - Vec3::UnitY()).norm() < 1e-12);
}

TEST_CASE("unobserved pose sampling", "[geometry]") {
  std::vector<CameraPose> poses;
  for (int i = 0; i < 4; ++i)
    poses.push_back(ring_pose(0.4 + i * 1.5707963267948966, 3.0, 1.2, Vec3::Zero()));
  PoseSampleSpace space = build_sample_space(poses, 0.125);

  {
    Rng rng(123);
    for (int i = 0; i < 10000; ++i) {
      CameraPose p = sample_unobserved_pose(space, rng);
      CHECK((p.position().array() >= space.box_min.array() - 1e-12).all());
      CHECK((p.position().array() <= space.box_max.array() + 1e-12).all());
      if (i < 100) CHECK(p.orthonormal(1e-9));
    }
  }

  // empirical box coverage: per-axis min/max converge to bounds
  {
    Rng rng(77);
    Vec3 lo = space.box_max, hi = space.box_min;
    for (int i = 0; i < 100000; ++i) {
      Vec3 p = sample_unobserved_pose(space, rng).position();
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    Vec3 extent = space.box_max - space.box_min;
    for (int k = 0; k < 3; ++k) {
      if (extent[k] < 1e-9) continue;
      CHECK(std::abs(lo[k] - space.box_min[k]) < 0.01 * extent[k]);
      CHECK(std::abs(hi[k] - space.box_max[k]) < 0.01 * extent[k]);
    }
  }

  // zero jitter looks exactly at the shared focus
  {
    PoseSampleSpace nojit = space;
    nojit.jitter_std = 0.0;
    Rng rng(5);
    CameraPose p = sample_unobserved_pose(nojit, rng);
    Vec3 expect = (nojit.focus - p.position()).normalized();
    CHECK((p.forward() - expect).norm() < 1e-12);
  }

  // fixed seed reproduces the pose exactly
  {
    Rng r1(99), r2(99);
    CameraPose p1 = sample_unobserved_pose(space, r1);
    CameraPose p2 = sample_unobserved_pose(space, r2);
    CHECK((p1.rotation - p2.rotation).norm() == 0.0);
    CHECK((p1.translation - p2.translation).norm() == 0.0);
  }
}

TEST_CASE("annealed bounds widen around the center", "[geometry]") {
  AnnealSchedule s{2.0, 6.0, 4.0, 100, 0.5};
  s.validate();

  auto [n0, f0] = anneal_bounds(s, 0);
  CHECK(n0 == Catch::Approx(3.0));
  CHECK(f0 == Catch::Approx(5.0));

  auto [n75, f75] = anneal_bounds(s, 75);
  CHECK(n75 == Catch::Approx(2.5));
  CHECK(f75 == Catch::Approx(5.5));

  for (std::int64_t i : {100, 101, 100000}) {
    auto [n, f] = anneal_bounds(s, i);
    CHECK(n == Catch::Approx(2.0));
    CHECK(f == Catch::Approx(6.0));
  }

  // eta monotone, starts at the start fraction, clamps at 1
  double prev = 0.0;
  for (int i = 0; i <= 150; ++i) {
    double eta = anneal_fraction(s, i);
    CHECK(eta >= prev);
    CHECK(eta <= 1.0);
    prev = eta;
    auto [n, f] = anneal_bounds(s, i);
    CHECK(n >= s.t_near - 1e-12);
    CHECK(f <= s.t_far + 1e-12);
    CHECK(n <= s.t_mid);
    CHECK(f >= s.t_mid);
  }
  CHECK(anneal_fraction(s, 0) == Catch::Approx(0.5));
  CHECK(anneal_fraction(s, 100) == Catch::Approx(1.0));

  CHECK_THROWS_AS(anneal_bounds(s, -1), std::invalid_argument);
  AnnealSchedule bad{2.0, 6.0, 7.0, 100, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("stratified sampling", "[geometry]") {
  Rng rng(3);

  auto mid = stratified_samples(0.0, 1.0, 4, rng, false);
  REQUIRE(mid.size() == 4);
  CHECK(mid[0] == Catch::Approx(0.125));
  CHECK(mid[1] == Catch::Approx(0.375));
  CHECK(mid[2] == Catch::Approx(0.625));
  CHECK(mid[3] == Catch::Approx(0.875));

  auto two = stratified_samples(2.0, 6.0, 2, rng, false);
  CHECK(two[0] == Catch::Approx(3.0));
  CHECK(two[1] == Catch::Approx(5.0));

  // jittered: sample k stays in bin k, sequence strictly increasing
  for (int trial = 0; trial < 20; ++trial) {
    auto ts = stratified_samples(2.0, 6.0, 16, rng, true);
    const double w = 4.0 / 16;
    for (int k = 0; k < 16; ++k) {
      CHECK(ts[k] >= 2.0 + k * w);
      CHECK(ts[k] < 2.0 + (k + 1) * w);
      if (k) CHECK(ts[k] > ts[k - 1]);
    }
  }

  CHECK_THROWS_AS(stratified_samples(0.0, 1.0, 1, rng, false), std::invalid_argument);
}

// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "svrf/rng.hpp"

namespace svrf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole intrinsics in pixel units.
struct CameraIntrinsics {
  double focal_x = 0.0;
  double focal_y = 0.0;
  double principal_x = 0.0;
  double principal_y = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (focal_x <= 0.0 || focal_y <= 0.0)
      throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (principal_x < 0.0 || principal_x > width || principal_y < 0.0 ||
        principal_y > height)
      throw std::invalid_argument("intrinsics: principal point outside image");
  }
};

/// Camera-to-world pose. Columns of `rotation` are the camera axes in world
/// coordinates: x right, y down, z forward (OpenCV convention). `translation`
/// is the camera position in world units.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 position() const { return translation; }
  Vec3 forward() const { return rotation.col(2); }
  Vec3 up_axis() const { return -rotation.col(1); }

  bool orthonormal(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // unit length
  double t_near = 0.0;
  double t_far = 0.0;
  /// Pixel footprint radius per unit distance along the ray; zero for rays
  /// that were not generated through a camera.
  double footprint = 0.0;
};

inline Vec3 ray_point(const Ray& r, double t) { return r.origin + t * r.direction; }

/// Rays through the centers of the given (row, col) pixels. Image-plane
/// coordinates are (col + 0.5, row + 0.5).
inline std::vector<Ray> generate_rays(const CameraPose& pose, const CameraIntrinsics& intr,
                                      const std::vector<std::pair<int, int>>& pixels,
                                      double t_near, double t_far) {
  intr.validate();
  if (!(t_near > 0.0) || !(t_near < t_far))
    throw std::invalid_argument("generate_rays: need 0 < t_near < t_far");
  const double footprint = 0.25 * (1.0 / intr.focal_x + 1.0 / intr.focal_y);
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (auto [row, col] : pixels) {
    if (row < 0 || row >= intr.height || col < 0 || col >= intr.width)
      throw std::invalid_argument("generate_rays: pixel out of bounds");
    const double x = (col + 0.5 - intr.principal_x) / intr.focal_x;
    const double y = (row + 0.5 - intr.principal_y) / intr.focal_y;
    Vec3 dir_cam(x, y, 1.0);
    Vec3 dir = (pose.rotation * dir_cam).normalized();
    rays.push_back(Ray{pose.position(), dir, t_near, t_far, footprint});
  }
  return rays;
}

inline Ray pixel_ray(const CameraPose& pose, const CameraIntrinsics& intr, int row,
                     int col, double t_near, double t_far) {
  return generate_rays(pose, intr, {{row, col}}, t_near, t_far)[0];
}

/// Rotation whose +z column points from `position` toward `focus`, with the
/// camera's up axis (-y column) aligned as closely as possible with `up`.
inline Mat3 lookat_rotation(const Vec3& up, const Vec3& focus, const Vec3& position) {
  Vec3 fwd = focus - position;
  const double len = fwd.norm();
  if (len <= 1e-9) throw std::invalid_argument("lookat_rotation: focus equals position");
  fwd /= len;
  Vec3 down = -up.normalized();
  Vec3 right = down.cross(fwd);
  const double rn = right.norm();
  if (rn <= 1e-9) throw std::invalid_argument("lookat_rotation: up parallel to view direction");
  right /= rn;
  Vec3 ydown = fwd.cross(right);
  Mat3 R;
  R.col(0) = right;
  R.col(1) = ydown;
  R.col(2) = fwd;
  return R;
}

/// Point with minimum total squared distance to all optical axes, from the
/// 3x3 normal equations of sum_i ||(I - d_i d_i^T)(p - o_i)||^2.
inline Vec3 mean_focus_point(const std::vector<CameraPose>& poses) {
  if (poses.size() < 2)
    throw std::invalid_argument("mean_focus_point: need at least 2 poses");
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const auto& p : poses) {
    Mat3 proj = Mat3::Identity() - p.forward() * p.forward().transpose();
    A += proj;
    b += proj * p.position();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(A);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0 || hi / lo > 1e12)
    throw std::invalid_argument("mean_focus_point: optical axes are (near) parallel, "
                                "normal matrix is singular");
  return A.ldlt().solve(b);
}

/// Distribution of virtual camera poses: positions uniform in the bounding
/// box of the target positions, rotations looking at a jittered shared focus.
struct PoseSampleSpace {
  Vec3 box_min = Vec3::Zero();
  Vec3 box_max = Vec3::Zero();
  Vec3 mean_up = Vec3::UnitY();
  Vec3 focus = Vec3::Zero();
  double jitter_std = 0.0;  // world units
};

/// `jitter_std_normalized` is in units of the target box diagonal, so the
/// default keeps its meaning across scene scales.
inline PoseSampleSpace build_sample_space(const std::vector<CameraPose>& poses,
                                          double jitter_std_normalized = 0.125) {
  if (poses.size() < 2)
    throw std::invalid_argument("build_sample_space: need at least 2 poses");
  PoseSampleSpace space;
  space.box_min = poses[0].position();
  space.box_max = poses[0].position();
  Vec3 up_sum = Vec3::Zero();
  for (const auto& p : poses) {
    space.box_min = space.box_min.cwiseMin(p.position());
    space.box_max = space.box_max.cwiseMax(p.position());
    up_sum += p.up_axis();
  }
  const double un = up_sum.norm();
  if (un <= 1e-9)
    throw std::invalid_argument("build_sample_space: up axes cancel out");
  space.mean_up = up_sum / un;
  space.focus = mean_focus_point(poses);
  space.jitter_std = jitter_std_normalized * (space.box_max - space.box_min).norm();
  return space;
}

inline CameraPose sample_unobserved_pose(const PoseSampleSpace& space, Rng& rng) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    Vec3 pos;
    for (int k = 0; k < 3; ++k) pos[k] = rng.uniform(space.box_min[k], space.box_max[k]);
    Vec3 eps;
    for (int k = 0; k < 3; ++k) eps[k] = rng.normal(0.0, space.jitter_std);
    try {
      Mat3 R = lookat_rotation(space.mean_up, space.focus + eps, pos);
      return CameraPose{R, pos};
    } catch (const std::invalid_argument&) {
      // degenerate draw, retry
    }
  }
  throw std::runtime_error("sample_unobserved_pose: 16 degenerate draws in a row");
}

/// Near/far schedule that starts as a window around `t_mid` and widens
/// linearly to the full range over `ramp_iters` iterations.
struct AnnealSchedule {
  double t_near = 0.0;
  double t_far = 0.0;
  double t_mid = 0.0;
  int ramp_iters = 256;
  double start_fraction = 0.5;

  void validate() const {
    if (!(t_near < t_mid && t_mid < t_far))
      throw std::invalid_argument("anneal: need t_near < t_mid < t_far");
    if (ramp_iters < 1) throw std::invalid_argument("anneal: ramp_iters must be >= 1");
    if (!(start_fraction > 0.0 && start_fraction <= 1.0))
      throw std::invalid_argument("anneal: start_fraction must be in (0, 1]");
  }

  static AnnealSchedule centered(double t_near, double t_far, int ramp_iters,
                                 double start_fraction) {
    return AnnealSchedule{t_near, t_far, 0.5 * (t_near + t_far), ramp_iters,
                          start_fraction};
  }
};

inline double anneal_fraction(const AnnealSchedule& s, std::int64_t iteration) {
  double eta = std::max(static_cast<double>(iteration) / s.ramp_iters, s.start_fraction);
  return std::min(eta, 1.0);
}

inline std::pair<double, double> anneal_bounds(const AnnealSchedule& s,
                                               std::int64_t iteration) {
  if (iteration < 0) throw std::invalid_argument("anneal_bounds: negative iteration");
  const double eta = anneal_fraction(s, iteration);
  return {s.t_mid + (s.t_near - s.t_mid) * eta, s.t_mid + (s.t_far - s.t_mid) * eta};
}

/// `n` strictly increasing quadrature positions in [lo, hi]: bin midpoints,
/// or uniform draws within each bin when `jitter` is set.
inline std::vector<double> stratified_samples(double lo, double hi, int n, Rng& rng,
                                              bool jitter) {
  if (n < 2) throw std::invalid_argument("stratified_samples: need n >= 2");
  if (!(lo < hi)) throw std::invalid_argument("stratified_samples: need lo < hi");
  const double w = (hi - lo) / n;
  std::vector<double> ts(n);
  for (int i = 0; i < n; ++i) {
    const double off = jitter ? rng.uniform() : 0.5;
    ts[i] = lo + (i + off) * w;
  }
  return ts;
}

inline std::vector<double> stratified_samples(const Ray& ray, int n, Rng& rng,
                                              bool jitter) {
  return stratified_samples(ray.t_near, ray.t_far, n, rng, jitter);
}

}  // namespace svrf

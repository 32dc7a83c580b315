// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "svrf/manifest.hpp"
#include "svrf/renderer.hpp"

namespace svrf {

enum class PrimitiveKind { Sphere, Box, Slab };
enum class TexturePattern { None, Checker, Gradient };

/// Analytic density blob. Density falls off linearly over `edge` world units
/// at the boundary, which keeps quadrature well behaved and the shape
/// learnable at desk-scale resolutions.
struct ScenePrimitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // sphere: size.x() is the radius; box: full extents;
                             // slab: size.z() is the thickness along z
  Vec3 albedo = Vec3::Ones();
  Vec3 albedo_b = Vec3::Zero();
  TexturePattern texture = TexturePattern::None;
  double texture_scale = 1.0;
  double sigma = 1.0;  // density inside
  double edge = 0.1;

  double inside_factor(const Vec3& p) const {
    auto ramp = [this](double half, double dist) {
      return std::clamp((half - dist) / edge, 0.0, 1.0);
    };
    switch (kind) {
      case PrimitiveKind::Sphere:
        return ramp(size.x(), (p - center).norm());
      case PrimitiveKind::Box: {
        double f = 1.0;
        for (int j = 0; j < 3; ++j)
          f = std::min(f, ramp(0.5 * size[j], std::abs(p[j] - center[j])));
        return f;
      }
      case PrimitiveKind::Slab:
        return ramp(0.5 * size.z(), std::abs(p.z() - center.z()));
    }
    return 0.0;
  }

  Vec3 local_albedo(const Vec3& p) const {
    switch (texture) {
      case TexturePattern::None:
        return albedo;
      case TexturePattern::Checker: {
        const Vec3 q = (p - center) / texture_scale;
        const int parity = (static_cast<int>(std::floor(q.x())) +
                            static_cast<int>(std::floor(q.y())) +
                            static_cast<int>(std::floor(q.z()))) & 1;
        return parity ? albedo_b : albedo;
      }
      case TexturePattern::Gradient: {
        const Vec3 q = (p - center) * (2.0 * 3.14159265358979323846 / texture_scale);
        const double w =
            0.5 + 0.5 * std::sin(q.x()) * std::sin(q.y() + 0.7) * std::sin(q.z() + 1.3);
        return (1.0 - w) * albedo + w * albedo_b;
      }
    }
    return albedo;
  }
};

struct SyntheticScene {
  std::string name;
  std::vector<ScenePrimitive> primitives;
  Vec3 background = Vec3::Zero();
  bool white_background = false;
  double t_near = 2.0;
  double t_far = 6.0;
  // camera placement
  bool arc = false;           // full ring when false
  double arc_span = 1.0;      // radians, centered on -z, arc only
  double camera_radius = 4.0;
  double camera_height = 1.4;
  Vec3 focus = Vec3::Zero();

  /// Densities add; colors are the density-weighted albedo mix.
  std::pair<double, Vec3> density_albedo(const Vec3& p) const {
    double sigma = 0.0;
    Vec3 color = Vec3::Zero();
    for (const auto& prim : primitives) {
      const double s = prim.sigma * prim.inside_factor(p);
      if (s <= 0.0) continue;
      sigma += s;
      color += s * prim.local_albedo(p);
    }
    if (sigma > 0.0) color /= sigma;
    return {sigma, color};
  }
};

inline std::vector<std::string> bundled_scene_names() {
  return {"slab", "spheres", "texture-box"};
}

inline SyntheticScene bundled_scene(const std::string& name) {
  SyntheticScene s;
  s.name = name;
  if (name == "slab") {
    // two large thin boxes at different depths; the front one is translucent
    ScenePrimitive front;
    front.kind = PrimitiveKind::Box;
    front.center = Vec3(0.0, 0.0, 0.2);
    front.size = Vec3(2.2, 2.2, 0.3);
    front.albedo = Vec3(0.85, 0.25, 0.2);
    front.sigma = 3.0;
    front.edge = 0.15;
    ScenePrimitive back;
    back.kind = PrimitiveKind::Box;
    back.center = Vec3(0.35, 0.25, 1.15);
    back.size = Vec3(3.0, 3.0, 0.3);
    back.albedo = Vec3(0.2, 0.3, 0.85);
    back.sigma = 50.0;
    back.edge = 0.15;
    s.primitives = {front, back};
    s.arc = true;
    s.arc_span = 0.9;
    s.camera_height = 0.5;
    return s;
  }
  if (name == "spheres") {
    ScenePrimitive ground;
    ground.kind = PrimitiveKind::Box;
    ground.center = Vec3(0.0, -0.7, 0.0);
    ground.size = Vec3(3.2, 0.4, 3.2);
    ground.albedo = Vec3(0.55, 0.6, 0.5);
    ground.sigma = 40.0;
    ground.edge = 0.08;

    auto ball = [](const Vec3& c, double r, const Vec3& a) {
      ScenePrimitive p;
      p.kind = PrimitiveKind::Sphere;
      p.center = c;
      p.size = Vec3(r, r, r);
      p.albedo = a;
      p.sigma = 40.0;
      p.edge = 0.08;
      return p;
    };
    s.primitives = {ground,
                    ball(Vec3(-0.55, -0.2, -0.15), 0.30, Vec3(0.85, 0.2, 0.15)),
                    ball(Vec3(0.50, -0.25, 0.30), 0.25, Vec3(0.2, 0.35, 0.85)),
                    ball(Vec3(0.05, -0.15, -0.50), 0.35, Vec3(0.9, 0.75, 0.2))};
    s.camera_radius = 3.8;
    s.camera_height = 1.6;
    return s;
  }
  if (name == "texture-box") {
    ScenePrimitive box;
    box.kind = PrimitiveKind::Box;
    box.center = Vec3::Zero();
    box.size = Vec3(1.5, 1.5, 1.5);
    box.albedo = Vec3(0.9, 0.6, 0.2);
    box.albedo_b = Vec3(0.15, 0.4, 0.8);
    box.texture = TexturePattern::Gradient;
    box.texture_scale = 1.1;
    box.sigma = 50.0;
    box.edge = 0.08;
    s.primitives = {box};
    s.background = Vec3::Ones();
    s.white_background = true;
    s.camera_height = 1.2;
    return s;
  }
  throw std::invalid_argument("unknown bundled scene '" + name + "'");
}

/// Exact-field quadrature ground truth: color image plus expected-depth and
/// opacity grids, from `n_dense` uniform samples per ray.
struct OracleRender {
  Image color;
  Grid depth;
  Grid opacity;
};

inline OracleRender oracle_render(const SyntheticScene& scene, const CameraPose& pose,
                                  const CameraIntrinsics& intr, int n_dense) {
  if (n_dense < 1024) throw std::invalid_argument("oracle_render: n_dense must be >= 1024");
  intr.validate();
  OracleRender out;
  out.color = Image::filled(intr.width, intr.height, 0, 0, 0);
  out.depth.width = out.opacity.width = intr.width;
  out.depth.height = out.opacity.height = intr.height;
  out.depth.values.assign(static_cast<std::size_t>(intr.width) * intr.height, 0.0);
  out.opacity.values.assign(static_cast<std::size_t>(intr.width) * intr.height, 0.0);

  RenderOptions opts;
  opts.n_samples = n_dense;
  if (scene.white_background || scene.background.norm() > 0.0)
    opts.background = scene.white_background ? Vec3::Ones() : scene.background;

  auto field = [&scene](const Vec3& p, const Vec3&) { return scene.density_albedo(p); };
  Rng rng(0);  // midpoint sampling, no jitter draws
  for (int i = 0; i < intr.height; ++i) {
    for (int j = 0; j < intr.width; ++j) {
      Ray ray = pixel_ray(pose, intr, i, j, scene.t_near, scene.t_far);
      auto ts = stratified_samples(ray, n_dense, rng, false);
      RenderResult res = render_ray_analytic(field, ray, ts, opts);
      for (int c = 0; c < 3; ++c) out.color.at(i, j, c) = res.color[c];
      out.depth.at(i, j) = res.depth;
      out.opacity.at(i, j) = res.opacity;
    }
  }
  return out;
}

/// Evenly spaced poses on the scene's ring (or arc), all looking at the
/// scene focus with the world up axis.
inline std::vector<CameraPose> scene_camera_ring(const SyntheticScene& scene, int count) {
  std::vector<CameraPose> poses;
  poses.reserve(count);
  for (int k = 0; k < count; ++k) {
    double angle;
    if (scene.arc) {
      const double t = count > 1 ? static_cast<double>(k) / (count - 1) : 0.5;
      angle = -0.5 * scene.arc_span + t * scene.arc_span;
    } else {
      angle = 2.0 * 3.14159265358979323846 * k / count;
    }
    // arc cameras cluster around -z looking toward +z
    const Vec3 pos(scene.camera_radius * std::sin(angle), scene.camera_height,
                   -scene.camera_radius * std::cos(angle));
    poses.push_back(CameraPose{lookat_rotation(Vec3::UnitY(), scene.focus, pos), pos});
  }
  return poses;
}

inline CameraIntrinsics scene_intrinsics(int resolution) {
  CameraIntrinsics intr;
  intr.width = intr.height = resolution;
  intr.focal_x = intr.focal_y = 1.1 * resolution;
  intr.principal_x = intr.principal_y = 0.5 * resolution;
  return intr;
}

/// Renders ground truth for `n_input + n_test` ring cameras and writes the
/// dataset (images, depth and opacity grids, dataset.json). Input views are
/// picked evenly from the ring. Returns the manifest path.
inline std::string make_dataset(const SyntheticScene& scene, int n_input, int n_test,
                                int resolution, int n_dense, std::uint64_t seed,
                                const std::string& out_dir) {
  if (n_input < 1 || n_test < 1)
    throw std::invalid_argument("make_dataset: need at least one input and one test view");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "depth");

  const int total = n_input + n_test;
  auto poses = scene_camera_ring(scene, total);
  CameraIntrinsics intr = scene_intrinsics(resolution);

  // spread the input views evenly over the ring; the rest are test views
  std::vector<bool> is_input(total, false);
  for (int k = 0; k < n_input; ++k)
    is_input[static_cast<int>(std::llround(static_cast<double>(k) * total / n_input)) %
             total] = true;
  // rounding collisions fall back to the next free slot
  int assigned = 0;
  for (bool b : is_input) assigned += b ? 1 : 0;
  for (int k = 0; assigned < n_input && k < total; ++k) {
    if (!is_input[k]) {
      is_input[k] = true;
      ++assigned;
    }
  }

  DatasetManifest m;
  m.t_near = scene.t_near;
  m.t_far = scene.t_far;
  m.white_background = scene.white_background;
  m.scene = scene.name;

  char buf[32];
  for (int k = 0; k < total; ++k) {
    std::snprintf(buf, sizeof(buf), "view_%03d", k);
    const std::string id = buf;
    OracleRender gt = oracle_render(scene, poses[k], intr, n_dense);

    ViewRecord rec;
    rec.id = id;
    rec.file = "images/" + id + ".png";
    rec.depth_file = "depth/" + id + ".svdp";
    rec.opacity_file = "depth/" + id + "_opacity.svdp";
    rec.pose = poses[k];
    rec.intrinsics = intr;

    write_png(gt.color, (fs::path(out_dir) / rec.file).string());
    write_grid(gt.depth, (fs::path(out_dir) / rec.depth_file).string());
    write_grid(gt.opacity, (fs::path(out_dir) / rec.opacity_file).string());
    write_grid_preview(gt.depth, (fs::path(out_dir) / "depth" / (id + "_preview.png")).string());

    m.views.push_back(rec);
    (is_input[k] ? m.input_ids : m.test_ids).push_back(id);
  }
  (void)seed;  // camera layout is deterministic; kept for the manifest record

  const std::string path = (fs::path(out_dir) / "dataset.json").string();
  save_dataset_manifest(m, path);
  return path;
}

}  // namespace svrf

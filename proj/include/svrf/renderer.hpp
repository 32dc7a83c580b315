// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cmath>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "svrf/field.hpp"
#include "svrf/geometry.hpp"

namespace svrf {

/// Per-ray rendering output. weights[i] >= 0, sum(weights) == opacity, and
/// transmittance is non-increasing with transmittance[0] == 1.
struct RenderResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double opacity = 0.0;
  std::vector<double> weights;
  std::vector<double> transmittance;
};

/// Quadrature weights for sorted sample positions: delta_i = t_{i+1} - t_i
/// (the last interval ends at `far`), alpha_i = 1 - exp(-sigma_i delta_i),
/// T_i the running product of (1 - alpha), w_i = T_i alpha_i.
inline std::pair<std::vector<double>, std::vector<double>> composite_weights(
    const std::vector<double>& sigmas, const std::vector<double>& ts, double far) {
  if (sigmas.size() != ts.size())
    throw std::invalid_argument("composite_weights: sigma/t length mismatch");
  if (ts.empty()) throw std::invalid_argument("composite_weights: empty sample list");
  const std::size_t n = ts.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmas[i] < 0.0) throw std::invalid_argument("composite_weights: negative density");
    if (i + 1 < n && !(ts[i] < ts[i + 1]))
      throw std::invalid_argument("composite_weights: samples not strictly increasing");
  }
  if (far < ts.back())
    throw std::invalid_argument("composite_weights: far bound precedes last sample");

  std::vector<double> weights(n), trans(n);
  double T = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? ts[i + 1] : far) - ts[i];
    const double alpha = 1.0 - std::exp(-sigmas[i] * delta);
    trans[i] = T;
    weights[i] = T * alpha;
    T *= 1.0 - alpha;
  }
  return {std::move(weights), std::move(trans)};
}

struct RenderOptions {
  int n_samples = 64;
  bool jitter = false;
  std::optional<Vec3> background;  // composited as (1 - opacity) * background

  static RenderOptions with_white_background(int n_samples, bool jitter) {
    RenderOptions o;
    o.n_samples = n_samples;
    o.jitter = jitter;
    o.background = Vec3::Ones();
    return o;
  }
};

/// Handles into a batched rendering subgraph.
struct RayBatchNodes {
  ad::NodeRef color;          // [R, 3]
  ad::NodeRef depth;          // [R, 1]
  ad::NodeRef opacity;        // [R, 1]
  ad::NodeRef weights;        // [R, N]
  ad::NodeRef transmittance;  // [R, N]
  int n_rays = 0;
  int n_samples = 0;
};

namespace detail {

inline ad::NodeRef strict_upper_ones(ad::Tape& t, int n) {
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = j + 1; i < n; ++i) m[static_cast<std::size_t>(j) * n + i] = 1.0;
  return t.constant(n, n, std::move(m));
}

inline ad::NodeRef channel_sum_matrix(ad::Tape& t, int n) {
  std::vector<double> m(static_cast<std::size_t>(3 * n) * 3, 0.0);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < 3; ++c) m[static_cast<std::size_t>(s * 3 + c) * 3 + c] = 1.0;
  return t.constant(3 * n, 3, std::move(m));
}

inline ad::NodeRef ones_column(ad::Tape& t, int n) {
  return t.constant(n, 1, std::vector<double>(n, 1.0));
}

}  // namespace detail

/// Compositing subgraph: density [R,N] and per-sample colors [R*N,3] in,
/// color/depth/opacity out. `deltas` and `tq` are the row-major interval
/// lengths and sample positions.
inline RayBatchNodes build_composite(ad::Tape& t, ad::NodeRef sigma_rn,
                                     ad::NodeRef colors, std::vector<double> deltas,
                                     std::vector<double> tq, int R, int N,
                                     const RenderOptions& opts) {
  const int P = R * N;
  ad::NodeRef sd = t.mul(sigma_rn, t.constant(R, N, std::move(deltas)));
  ad::NodeRef acc = t.matmul(sd, detail::strict_upper_ones(t, N));
  ad::NodeRef trans = t.exp(t.neg(acc));
  ad::NodeRef alpha = t.sub(t.scalar(1.0), t.exp(t.neg(sd)));
  ad::NodeRef w = t.mul(trans, alpha);

  ad::NodeRef ones = detail::ones_column(t, N);
  ad::NodeRef opacity = t.matmul(w, ones);
  ad::NodeRef depth = t.matmul(t.mul(w, t.constant(R, N, std::move(tq))), ones);

  ad::NodeRef weighted = t.mul(colors, t.reshape(w, P, 1));
  ad::NodeRef color =
      t.matmul(t.reshape(weighted, R, 3 * N), detail::channel_sum_matrix(t, N));
  if (opts.background) {
    const Vec3& bg = *opts.background;
    ad::NodeRef vacancy = t.sub(t.scalar(1.0), opacity);
    color = t.add(color, t.matmul(vacancy, t.constant(1, 3, {bg.x(), bg.y(), bg.z()})));
  }
  return RayBatchNodes{color, depth, opacity, w, trans, R, N};
}

/// Joint color/depth/opacity rendering subgraph over a ray batch. Sample
/// positions are supplied per ray (strictly increasing, within the ray's
/// [t_near, t_far]); one weight computation feeds all three outputs.
inline RayBatchNodes build_ray_batch(ad::Tape& t, const FieldConfig& cfg,
                                     const FieldParamNodes& pn,
                                     const std::vector<Ray>& rays,
                                     const std::vector<std::vector<double>>& ts_per_ray,
                                     const RenderOptions& opts) {
  const int R = static_cast<int>(rays.size());
  if (R == 0) throw std::invalid_argument("build_ray_batch: empty ray batch");
  const int N = static_cast<int>(ts_per_ray.at(0).size());
  if (N < 2) throw std::invalid_argument("build_ray_batch: need at least 2 samples");
  const int P = R * N;
  const int dx = cfg.position_input_dim();
  const int dd = cfg.direction_input_dim();

  std::vector<double> enc_x;
  enc_x.reserve(static_cast<std::size_t>(P) * dx);
  std::vector<double> enc_d;
  if (cfg.encoding.direction_bands > 0)
    enc_d.reserve(static_cast<std::size_t>(P) * dd);
  std::vector<double> deltas(static_cast<std::size_t>(P));
  std::vector<double> tq(static_cast<std::size_t>(P));

  for (int r = 0; r < R; ++r) {
    const Ray& ray = rays[r];
    const auto& ts = ts_per_ray[r];
    if (static_cast<int>(ts.size()) != N)
      throw std::invalid_argument("build_ray_batch: ragged sample lists");
    std::vector<double> dir_enc;
    if (cfg.encoding.direction_bands > 0)
      dir_enc = positional_encode(ray.direction, cfg.encoding.direction_bands);
    for (int i = 0; i < N; ++i) {
      const double t_end = i + 1 < N ? ts[i + 1] : ray.t_far;
      deltas[static_cast<std::size_t>(r) * N + i] = t_end - ts[i];
      tq[static_cast<std::size_t>(r) * N + i] = ts[i];
      std::vector<double> e;
      if (cfg.encoding.integrated) {
        e = integrated_encode(segment_gaussian(ray, ts[i], t_end),
                              cfg.encoding.position_bands);
      } else {
        e = positional_encode(ray_point(ray, ts[i]), cfg.encoding.position_bands);
      }
      enc_x.insert(enc_x.end(), e.begin(), e.end());
      if (cfg.encoding.direction_bands > 0)
        enc_d.insert(enc_d.end(), dir_enc.begin(), dir_enc.end());
    }
  }

  ad::NodeRef ex = t.constant(P, dx, std::move(enc_x));
  ad::NodeRef ed;
  if (cfg.encoding.direction_bands > 0) ed = t.constant(P, dd, std::move(enc_d));
  FieldNodes f = build_field_graph(t, cfg, pn, ex, ed);
  return build_composite(t, t.reshape(f.sigma, R, N), f.color, std::move(deltas),
                         std::move(tq), R, N, opts);
}

/// Numeric rendering of one ray against a callable density/color field, for
/// ground-truth generation and oracle comparisons. Shares its weight math
/// with composite_weights, not with the tape.
template <typename FieldFn>
RenderResult render_ray_analytic(FieldFn&& field, const Ray& ray,
                                 const std::vector<double>& ts,
                                 const RenderOptions& opts) {
  const std::size_t n = ts.size();
  std::vector<double> sigmas(n);
  std::vector<Vec3> colors(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [sigma, color] = field(ray_point(ray, ts[i]), ray.direction);
    sigmas[i] = sigma;
    colors[i] = color;
  }
  auto [weights, trans] = composite_weights(sigmas, ts, ray.t_far);
  RenderResult out;
  out.weights = weights;
  out.transmittance = std::move(trans);
  for (std::size_t i = 0; i < n; ++i) {
    out.color += weights[i] * colors[i];
    out.depth += weights[i] * ts[i];
    out.opacity += weights[i];
  }
  if (opts.background) out.color += (1.0 - out.opacity) * (*opts.background);
  return out;
}

inline std::vector<std::vector<double>> draw_samples(const std::vector<Ray>& rays,
                                                     int n_samples, Rng& rng,
                                                     bool jitter) {
  std::vector<std::vector<double>> ts;
  ts.reserve(rays.size());
  for (const Ray& r : rays) ts.push_back(stratified_samples(r, n_samples, rng, jitter));
  return ts;
}

inline std::vector<RenderResult> extract_results(const ad::Tape& t,
                                                 const ad::Evaluation& ev,
                                                 const RayBatchNodes& nodes) {
  const auto& color = ev.value(nodes.color);
  const auto& depth = ev.value(nodes.depth);
  const auto& opacity = ev.value(nodes.opacity);
  const auto& w = ev.value(nodes.weights);
  const auto& trans = ev.value(nodes.transmittance);
  const int R = nodes.n_rays, N = nodes.n_samples;
  std::vector<RenderResult> out(R);
  for (int r = 0; r < R; ++r) {
    RenderResult& res = out[r];
    res.color = Vec3(color[r * 3 + 0], color[r * 3 + 1], color[r * 3 + 2]);
    res.depth = depth[r];
    res.opacity = opacity[r];
    res.weights.assign(w.begin() + static_cast<std::ptrdiff_t>(r) * N,
                       w.begin() + static_cast<std::ptrdiff_t>(r + 1) * N);
    res.transmittance.assign(trans.begin() + static_cast<std::ptrdiff_t>(r) * N,
                             trans.begin() + static_cast<std::ptrdiff_t>(r + 1) * N);
  }
  return out;
}

/// Renders a batch of rays (color, expected depth, opacity, per-sample
/// weights) against frozen parameters.
inline std::vector<RenderResult> render_rays(const FieldConfig& cfg,
                                             const ad::ParameterStore& params,
                                             const std::vector<Ray>& rays,
                                             Rng& rng, const RenderOptions& opts) {
  ad::Tape t;
  FieldParamNodes pn = make_field_param_nodes(t, cfg, /*trainable=*/false);
  auto ts = draw_samples(rays, opts.n_samples, rng, opts.jitter);
  RayBatchNodes nodes = build_ray_batch(t, cfg, pn, rays, ts, opts);
  ad::Evaluation ev = t.forward(params);
  return extract_results(t, ev, nodes);
}

inline RenderResult render_ray(const FieldConfig& cfg, const ad::ParameterStore& params,
                               const Ray& ray, Rng& rng, const RenderOptions& opts) {
  return render_rays(cfg, params, {ray}, rng, opts)[0];
}

/// Pixel grid of a square patch whose top-left corner sits at
/// (center - size/2). Throws when the patch leaves the image.
inline std::vector<std::pair<int, int>> patch_pixels(const CameraIntrinsics& intr,
                                                     int center_row, int center_col,
                                                     int size) {
  const int r0 = center_row - size / 2;
  const int c0 = center_col - size / 2;
  if (r0 < 0 || c0 < 0 || r0 + size > intr.height || c0 + size > intr.width)
    throw std::invalid_argument("patch does not fit inside the image bounds");
  std::vector<std::pair<int, int>> px;
  px.reserve(static_cast<std::size_t>(size) * size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) px.push_back({r0 + i, c0 + j});
  return px;
}

struct PatchRender {
  int size = 0;
  std::vector<RenderResult> rays;  // row-major size x size

  double depth_at(int i, int j) const { return rays[i * size + j].depth; }
  Vec3 color_at(int i, int j) const { return rays[i * size + j].color; }
};

/// Jointly renders the size x size patch centered at the given pixel,
/// returning both the RGB and the expected-depth patch.
inline PatchRender render_patch(const FieldConfig& cfg, const ad::ParameterStore& params,
                                const CameraPose& pose, const CameraIntrinsics& intr,
                                int center_row, int center_col, int patch_size,
                                double t_near, double t_far, Rng& rng,
                                const RenderOptions& opts) {
  auto px = patch_pixels(intr, center_row, center_col, patch_size);
  auto rays = generate_rays(pose, intr, px, t_near, t_far);
  PatchRender out;
  out.size = patch_size;
  out.rays = render_rays(cfg, params, rays, rng, opts);
  return out;
}

struct ImageRender {
  int width = 0;
  int height = 0;
  std::vector<double> color;    // rgb interleaved, row-major
  std::vector<double> depth;    // row-major
  std::vector<double> opacity;  // row-major
};

/// Full-frame render with deterministic midpoint sampling. Work is split
/// into fixed row bands rendered into a preallocated output, so the result
/// is byte-identical for any thread count.
inline ImageRender render_image(const FieldConfig& cfg, const ad::ParameterStore& params,
                                const CameraPose& pose, const CameraIntrinsics& intr,
                                double t_near, double t_far, const RenderOptions& opts,
                                int threads = 1) {
  intr.validate();
  ImageRender out;
  out.width = intr.width;
  out.height = intr.height;
  out.color.assign(static_cast<std::size_t>(intr.width) * intr.height * 3, 0.0);
  out.depth.assign(static_cast<std::size_t>(intr.width) * intr.height, 0.0);
  out.opacity.assign(static_cast<std::size_t>(intr.width) * intr.height, 0.0);

  constexpr int kBandRows = 8;
  const int n_bands = (intr.height + kBandRows - 1) / kBandRows;

  auto render_band = [&](int band) {
    const int row0 = band * kBandRows;
    const int row1 = std::min(intr.height, row0 + kBandRows);
    std::vector<std::pair<int, int>> px;
    for (int i = row0; i < row1; ++i)
      for (int j = 0; j < intr.width; ++j) px.push_back({i, j});
    auto rays = generate_rays(pose, intr, px, t_near, t_far);
    RenderOptions band_opts = opts;
    band_opts.jitter = false;
    Rng rng(0);  // unused with jitter off
    auto results = render_rays(cfg, params, rays, rng, band_opts);
    for (std::size_t k = 0; k < rays.size(); ++k) {
      const auto [i, j] = px[k];
      const std::size_t p = static_cast<std::size_t>(i) * intr.width + j;
      out.color[p * 3 + 0] = results[k].color.x();
      out.color[p * 3 + 1] = results[k].color.y();
      out.color[p * 3 + 2] = results[k].color.z();
      out.depth[p] = results[k].depth;
      out.opacity[p] = results[k].opacity;
    }
  };

  if (threads <= 1) {
    for (int band = 0; band < n_bands; ++band) render_band(band);
    return out;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int n_workers = std::min(threads, n_bands);
  pool.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w) {
    pool.emplace_back([&] {
      for (int band = next.fetch_add(1); band < n_bands; band = next.fetch_add(1))
        render_band(band);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace svrf

// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "svrf/geometry.hpp"
#include "svrf/rng.hpp"
#include "svrf/tape.hpp"

namespace svrf {

/// Fourier feature configuration for positions and view directions.
struct EncodingConfig {
  int position_bands = 8;   // frequencies for positions
  int direction_bands = 4;  // frequencies for directions, 0 disables view input
  bool integrated = true;   // damp bands by the sample segment's Gaussian extent

  void validate() const {
    if (position_bands < 1)
      throw std::invalid_argument("encoding: position_bands must be >= 1");
    if (direction_bands < 0)
      throw std::invalid_argument("encoding: direction_bands must be >= 0");
  }
};

/// MLP layout for the density trunk and view-conditioned color branch.
struct FieldConfig {
  EncodingConfig encoding;
  int hidden_width = 128;
  int hidden_layers = 4;
  int skip_layer = 2;      // layer index whose input also sees the raw encoding
  int color_width = 64;
  double density_bias_init = -1.0;  // keeps a fresh field close to transparent

  int position_input_dim() const { return 6 * encoding.position_bands; }
  int direction_input_dim() const { return 6 * encoding.direction_bands; }
};

// ---- encodings ----

/// (sin(2^k pi x_j), cos(2^k pi x_j)) for k = 0..L-1, j = 0..2 in that
/// nesting: band-major, axis within band, sin before cos.
inline std::vector<double> positional_encode(const Vec3& x, int bands) {
  std::vector<double> out;
  out.reserve(6 * bands);
  for (int k = 0; k < bands; ++k) {
    const double freq = std::ldexp(3.14159265358979323846, k);  // 2^k * pi
    for (int j = 0; j < 3; ++j) {
      out.push_back(std::sin(freq * x[j]));
      out.push_back(std::cos(freq * x[j]));
    }
  }
  return out;
}

/// Ray segment as an axis-aligned Gaussian: mean at the segment midpoint,
/// per-axis variances from the segment length and transverse pixel footprint.
struct SegmentGaussian {
  Vec3 mean = Vec3::Zero();
  Vec3 variance = Vec3::Zero();
  double t_begin = 0.0;
  double t_end = 0.0;
};

inline SegmentGaussian segment_gaussian(const Ray& ray, double t_begin, double t_end) {
  SegmentGaussian seg;
  seg.t_begin = t_begin;
  seg.t_end = t_end;
  const double t_mid = 0.5 * (t_begin + t_end);
  seg.mean = ray_point(ray, t_mid);
  const double len = t_end - t_begin;
  const double along = len * len / 12.0;
  const double radius = ray.footprint * t_mid;
  const double across = 0.25 * radius * radius;
  for (int j = 0; j < 3; ++j) {
    const double dj2 = ray.direction[j] * ray.direction[j];
    seg.variance[j] = along + across * (1.0 - dj2);
  }
  return seg;
}

/// Expected Fourier features under the segment Gaussian: each band-j term is
/// damped by exp(-(2^k pi)^2 var_j / 2). Zero variance reduces to
/// positional_encode exactly.
inline std::vector<double> integrated_encode(const SegmentGaussian& seg, int bands) {
  std::vector<double> out;
  out.reserve(6 * bands);
  for (int k = 0; k < bands; ++k) {
    const double freq = std::ldexp(3.14159265358979323846, k);
    for (int j = 0; j < 3; ++j) {
      const double damp = std::exp(-0.5 * freq * freq * seg.variance[j]);
      out.push_back(damp * std::sin(freq * seg.mean[j]));
      out.push_back(damp * std::cos(freq * seg.mean[j]));
    }
  }
  return out;
}

// ---- parameters ----

namespace detail {

inline std::vector<double> he_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return v;
}

}  // namespace detail

/// Fresh trainable parameters under "field.*" names. Weight matrices are laid
/// out [in, out] so a row-major batch multiplies on the left.
inline ad::ParameterStore init_field_params(const FieldConfig& cfg, Rng& rng) {
  cfg.encoding.validate();
  ad::ParameterStore store;
  const auto u32 = [](int v) { return static_cast<std::uint32_t>(v); };
  const int in = cfg.position_input_dim();
  const int w = cfg.hidden_width;

  int prev = in;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    const std::string base = "field.trunk" + std::to_string(l);
    store.set(base + ".w", {u32(prev), u32(w)}, detail::he_uniform(prev, w, rng));
    store.set(base + ".b", {u32(w)}, std::vector<double>(w, 0.0));
    if (l == cfg.skip_layer && l > 0)
      store.set(base + ".skip_w", {u32(in), u32(w)}, detail::he_uniform(in, w, rng));
    prev = w;
  }

  store.set("field.density.w", {u32(w), 1}, detail::he_uniform(w, 1, rng));
  store.set("field.density.b", {1}, {cfg.density_bias_init});

  const int cw = cfg.color_width;
  store.set("field.color0.w", {u32(w), u32(cw)}, detail::he_uniform(w, cw, rng));
  if (cfg.encoding.direction_bands > 0) {
    const int din = cfg.direction_input_dim();
    store.set("field.color0.dir_w", {u32(din), u32(cw)},
              detail::he_uniform(din, cw, rng));
  }
  store.set("field.color0.b", {u32(cw)}, std::vector<double>(cw, 0.0));
  store.set("field.color1.w", {u32(cw), 3}, detail::he_uniform(cw, 3, rng));
  store.set("field.color1.b", {3}, std::vector<double>(3, 0.0));
  return store;
}

inline ad::ParameterStore init_field_params_zero(const FieldConfig& cfg) {
  Rng rng(0);
  ad::ParameterStore store = init_field_params(cfg, rng);
  for (const auto& name : store.names())
    for (auto& v : store.values(name)) v = 0.0;
  return store;
}

// ---- tape graph ----

/// Leaf nodes for every field parameter, shared by all subgraphs on a tape.
struct FieldParamNodes {
  std::map<std::string, ad::NodeRef> by_name;
  ad::NodeRef at(const std::string& name) const { return by_name.at(name); }
  bool has(const std::string& name) const { return by_name.count(name) != 0; }
};

inline FieldParamNodes make_field_param_nodes(ad::Tape& tape, const FieldConfig& cfg,
                                              bool trainable) {
  FieldParamNodes out;
  const auto leaf = [&](const std::string& name, int rows, int cols) {
    out.by_name[name] = trainable ? tape.param(name, rows, cols)
                                  : tape.frozen(name, rows, cols);
  };
  const int in = cfg.position_input_dim();
  const int w = cfg.hidden_width;
  int prev = in;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    const std::string base = "field.trunk" + std::to_string(l);
    leaf(base + ".w", prev, w);
    leaf(base + ".b", 1, w);
    if (l == cfg.skip_layer && l > 0) leaf(base + ".skip_w", in, w);
    prev = w;
  }
  leaf("field.density.w", w, 1);
  leaf("field.density.b", 1, 1);
  leaf("field.color0.w", w, cfg.color_width);
  if (cfg.encoding.direction_bands > 0)
    leaf("field.color0.dir_w", cfg.direction_input_dim(), cfg.color_width);
  leaf("field.color0.b", 1, cfg.color_width);
  leaf("field.color1.w", cfg.color_width, 3);
  leaf("field.color1.b", 1, 3);
  return out;
}

struct FieldNodes {
  ad::NodeRef sigma;  // [P, 1], nonnegative
  ad::NodeRef color;  // [P, 3], in (0, 1)
};

/// MLP subgraph mapping encoded positions (and optionally directions) to
/// density and color. `enc_x` is [P, 6*position_bands]; `enc_d` is
/// [P, 6*direction_bands] and ignored when direction_bands is 0.
inline FieldNodes build_field_graph(ad::Tape& t, const FieldConfig& cfg,
                                    const FieldParamNodes& pn, ad::NodeRef enc_x,
                                    ad::NodeRef enc_d = {}) {
  ad::NodeRef h = enc_x;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    const std::string base = "field.trunk" + std::to_string(l);
    ad::NodeRef pre = t.matmul(h, pn.at(base + ".w"));
    if (l == cfg.skip_layer && l > 0)
      pre = t.add(pre, t.matmul(enc_x, pn.at(base + ".skip_w")));
    h = t.relu(t.add(pre, pn.at(base + ".b")));
  }

  ad::NodeRef density_pre =
      t.add(t.matmul(h, pn.at("field.density.w")), pn.at("field.density.b"));
  ad::NodeRef sigma = t.softplus(density_pre);

  ad::NodeRef color_pre0 = t.matmul(h, pn.at("field.color0.w"));
  if (cfg.encoding.direction_bands > 0) {
    if (!enc_d.valid())
      throw std::invalid_argument("build_field_graph: direction encoding required");
    color_pre0 = t.add(color_pre0, t.matmul(enc_d, pn.at("field.color0.dir_w")));
  }
  ad::NodeRef hc = t.relu(t.add(color_pre0, pn.at("field.color0.b")));
  ad::NodeRef color_pre =
      t.add(t.matmul(hc, pn.at("field.color1.w")), pn.at("field.color1.b"));
  return FieldNodes{sigma, t.sigmoid(color_pre)};
}

/// On-tape Fourier encoding of a [P, 3] position node, for differentiating
/// through positions. Built from a spread contraction plus sin/cos masks so
/// only tape primitives appear.
inline ad::NodeRef build_positional_encode(ad::Tape& t, ad::NodeRef x, int bands) {
  const std::int32_t cols = 6 * bands;
  std::vector<double> spread(3 * cols, 0.0);
  std::vector<double> sin_mask(cols, 0.0), cos_mask(cols, 0.0);
  for (int k = 0; k < bands; ++k) {
    const double freq = std::ldexp(3.14159265358979323846, k);
    for (int j = 0; j < 3; ++j) {
      const int c_sin = 6 * k + 2 * j;
      spread[j * cols + c_sin] = freq;
      spread[j * cols + c_sin + 1] = freq;
      sin_mask[c_sin] = 1.0;
      cos_mask[c_sin + 1] = 1.0;
    }
  }
  ad::NodeRef phases = t.matmul(x, t.constant(3, cols, spread));
  ad::NodeRef sin_part = t.mul(t.sin(phases), t.constant(1, cols, sin_mask));
  ad::NodeRef cos_part = t.mul(t.cos(phases), t.constant(1, cols, cos_mask));
  return t.add(sin_part, cos_part);
}

// ---- point queries ----

struct FieldSample {
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
};

namespace detail {

inline ad::NodeRef encoding_constant(ad::Tape& t, const std::vector<double>& enc) {
  return t.constant(1, static_cast<std::int32_t>(enc.size()), enc);
}

}  // namespace detail

/// Density and color at one point (or segment, when integrated encoding is
/// enabled). Pure in the parameters; used by tests and debugging paths. Bulk
/// rendering goes through the renderer's batched graphs instead.
inline FieldSample query_field(const FieldConfig& cfg, const ad::ParameterStore& params,
                               const SegmentGaussian& seg, const Vec3& direction) {
  cfg.encoding.validate();
  if (std::abs(direction.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("query_field: direction must be unit length");
  ad::Tape t;
  FieldParamNodes pn = make_field_param_nodes(t, cfg, /*trainable=*/false);
  std::vector<double> enc_x = cfg.encoding.integrated
                                  ? integrated_encode(seg, cfg.encoding.position_bands)
                                  : positional_encode(seg.mean, cfg.encoding.position_bands);
  ad::NodeRef ex = detail::encoding_constant(t, enc_x);
  ad::NodeRef ed;
  if (cfg.encoding.direction_bands > 0)
    ed = detail::encoding_constant(t, positional_encode(direction, cfg.encoding.direction_bands));
  FieldNodes f = build_field_graph(t, cfg, pn, ex, ed);
  ad::Evaluation ev = t.forward(params);
  FieldSample s;
  s.sigma = ev.value(f.sigma)[0];
  const auto& c = ev.value(f.color);
  s.color = Vec3(c[0], c[1], c[2]);
  return s;
}

inline FieldSample query_field(const FieldConfig& cfg, const ad::ParameterStore& params,
                               const Vec3& position, const Vec3& direction) {
  SegmentGaussian seg;
  seg.mean = position;
  return query_field(cfg, params, seg, direction);
}

// ---- checkpoints ----

inline void save_field(const std::string& path, const FieldConfig& cfg,
                       const ad::ParameterStore& params) {
  ad::ParameterStore store = params;
  store.set("meta.field", {8},
            {static_cast<double>(cfg.encoding.position_bands),
             static_cast<double>(cfg.encoding.direction_bands),
             cfg.encoding.integrated ? 1.0 : 0.0, static_cast<double>(cfg.hidden_width),
             static_cast<double>(cfg.hidden_layers), static_cast<double>(cfg.skip_layer),
             static_cast<double>(cfg.color_width), cfg.density_bias_init});
  ad::save_checkpoint(store, path, "PARM");
}

struct FieldCheckpoint {
  FieldConfig config;
  ad::ParameterStore params;
};

inline FieldCheckpoint load_field(const std::string& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  if (ck.section != "PARM")
    throw std::runtime_error("load_field: checkpoint section is '" + ck.section +
                             "', expected 'PARM'");
  const auto& meta = ck.params.values("meta.field");
  FieldCheckpoint out;
  out.config.encoding.position_bands = static_cast<int>(meta[0]);
  out.config.encoding.direction_bands = static_cast<int>(meta[1]);
  out.config.encoding.integrated = meta[2] != 0.0;
  out.config.hidden_width = static_cast<int>(meta[3]);
  out.config.hidden_layers = static_cast<int>(meta[4]);
  out.config.skip_layer = static_cast<int>(meta[5]);
  out.config.color_width = static_cast<int>(meta[6]);
  out.config.density_bias_init = meta[7];
  out.params = ck.params;
  return out;
}

}  // namespace svrf

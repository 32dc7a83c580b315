// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "svrf/field.hpp"
#include "svrf/rng.hpp"
#include "svrf/tape.hpp"

namespace svrf {

/// RGB patch in [0,1], flattened row-major as (pixel row, pixel col, channel).
struct Patch {
  int size = 0;
  std::vector<double> values;  // size*size*3

  int dim() const { return size * size * 3; }

  void validate() const {
    if (values.size() != static_cast<std::size_t>(dim()))
      throw std::invalid_argument("patch: value count does not match size");
    for (double v : values)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("patch: entries must lie in [0,1]");
  }
};

/// Coupling-flow configuration. Masks are checkerboards over pixel parity,
/// complemented every layer, so each coordinate is transformed in half of the
/// layers. Scales are bounded by scale_cap * tanh(raw).
struct FlowConfig {
  int patch_size = 8;
  int coupling_layers = 6;
  int hidden_width = 128;
  double scale_cap = 2.0;
  double logit_eps = 1e-3;
  bool preprocess = true;  // squeeze into [eps, 1-eps] then logit

  int dim() const { return patch_size * patch_size * 3; }

  void validate() const {
    if (patch_size < 1) throw std::invalid_argument("flow: patch_size must be >= 1");
    if (coupling_layers < 1)
      throw std::invalid_argument("flow: coupling_layers must be >= 1");
    if (hidden_width < 1) throw std::invalid_argument("flow: hidden_width must be >= 1");
    if (!(logit_eps > 0.0 && logit_eps < 0.5))
      throw std::invalid_argument("flow: logit_eps must be in (0, 0.5)");
  }
};

/// 0/1 pass-through mask of coupling layer `layer`; masked (1) entries are
/// copied, unmasked entries are transformed.
inline std::vector<double> coupling_mask(const FlowConfig& cfg, int layer) {
  std::vector<double> m(cfg.dim());
  for (int i = 0; i < cfg.patch_size; ++i)
    for (int j = 0; j < cfg.patch_size; ++j) {
      const double keep = ((i + j + layer) % 2 == 0) ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c)
        m[(static_cast<std::size_t>(i) * cfg.patch_size + j) * 3 + c] = keep;
    }
  return m;
}

/// Coupling nets start at zero so the whole flow begins as the identity map.
inline ad::ParameterStore init_flow_params(const FlowConfig& cfg, Rng& rng) {
  cfg.validate();
  ad::ParameterStore store;
  const auto u32 = [](int v) { return static_cast<std::uint32_t>(v); };
  const int d = cfg.dim();
  const int h = cfg.hidden_width;
  for (int l = 0; l < cfg.coupling_layers; ++l) {
    const std::string base = "flow.layer" + std::to_string(l);
    store.set(base + ".w1", {u32(d), u32(h)}, detail::he_uniform(d, h, rng));
    store.set(base + ".b1", {u32(h)}, std::vector<double>(h, 0.0));
    store.set(base + ".ws", {u32(h), u32(d)}, std::vector<double>(static_cast<std::size_t>(h) * d, 0.0));
    store.set(base + ".bs", {u32(d)}, std::vector<double>(d, 0.0));
    store.set(base + ".wt", {u32(h), u32(d)}, std::vector<double>(static_cast<std::size_t>(h) * d, 0.0));
    store.set(base + ".bt", {u32(d)}, std::vector<double>(d, 0.0));
  }
  return store;
}

struct FlowParamNodes {
  std::map<std::string, ad::NodeRef> by_name;
  ad::NodeRef at(const std::string& name) const { return by_name.at(name); }
};

inline FlowParamNodes make_flow_param_nodes(ad::Tape& t, const FlowConfig& cfg,
                                            bool trainable) {
  FlowParamNodes out;
  const int d = cfg.dim();
  const int h = cfg.hidden_width;
  const auto leaf = [&](const std::string& name, int rows, int cols) {
    out.by_name[name] = trainable ? t.param(name, rows, cols) : t.frozen(name, rows, cols);
  };
  for (int l = 0; l < cfg.coupling_layers; ++l) {
    const std::string base = "flow.layer" + std::to_string(l);
    leaf(base + ".w1", d, h);
    leaf(base + ".b1", 1, h);
    leaf(base + ".ws", h, d);
    leaf(base + ".bs", 1, d);
    leaf(base + ".wt", h, d);
    leaf(base + ".bt", 1, d);
  }
  return out;
}

struct FlowForwardNodes {
  ad::NodeRef z;        // [B, d]
  ad::NodeRef log_det;  // [B, 1], includes the preprocessing term
};

/// Forward bijection subgraph over a [B, d] batch node with entries in (0,1)
/// (or all of R when preprocessing is disabled).
inline FlowForwardNodes build_flow_forward(ad::Tape& t, const FlowConfig& cfg,
                                           const FlowParamNodes& pn, ad::NodeRef x) {
  cfg.validate();
  const int d = cfg.dim();
  const int B = t.rows(x);
  if (t.cols(x) != d)
    throw std::invalid_argument("flow forward: input width does not match flow dim");

  ad::NodeRef ones_d = t.constant(d, 1, std::vector<double>(d, 1.0));
  ad::NodeRef y = x;
  ad::NodeRef log_det;

  if (cfg.preprocess) {
    const double a = cfg.logit_eps;
    const double b = 1.0 - 2.0 * cfg.logit_eps;
    ad::NodeRef u = t.add(t.scalar(a), t.mul(t.scalar(b), y));
    ad::NodeRef one_minus_u = t.sub(t.scalar(1.0), u);
    y = t.sub(t.log(u), t.log(one_minus_u));
    // d/dx logit(a + b x) = b / (u (1-u))
    ad::NodeRef per_dim =
        t.sub(t.scalar(std::log(b)), t.add(t.log(u), t.log(one_minus_u)));
    log_det = t.matmul(per_dim, ones_d);
  } else {
    log_det = t.constant(B, 1, std::vector<double>(B, 0.0));
  }

  for (int l = 0; l < cfg.coupling_layers; ++l) {
    const std::string base = "flow.layer" + std::to_string(l);
    std::vector<double> keep = coupling_mask(cfg, l);
    std::vector<double> move(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) move[i] = 1.0 - keep[i];
    ad::NodeRef keep_row = t.constant(1, d, std::move(keep));
    ad::NodeRef move_row = t.constant(1, d, std::move(move));

    ad::NodeRef masked = t.mul(y, keep_row);
    ad::NodeRef hidden =
        t.relu(t.add(t.matmul(masked, pn.at(base + ".w1")), pn.at(base + ".b1")));
    ad::NodeRef s_raw = t.add(t.matmul(hidden, pn.at(base + ".ws")), pn.at(base + ".bs"));
    ad::NodeRef s = t.mul(t.scalar(cfg.scale_cap), t.tanh(s_raw));
    ad::NodeRef shift = t.add(t.matmul(hidden, pn.at(base + ".wt")), pn.at(base + ".bt"));

    ad::NodeRef s_eff = t.mul(s, move_row);
    ad::NodeRef transformed = t.add(t.mul(y, t.exp(s_eff)), t.mul(shift, move_row));
    y = t.add(masked, t.mul(transformed, move_row));
    log_det = t.add(log_det, t.matmul(s_eff, ones_d));
  }
  return FlowForwardNodes{y, log_det};
}

/// Per-sample negative log-likelihood column under a standard Gaussian base:
/// ||z||^2/2 + (d/2) log 2pi - log_det.
inline ad::NodeRef build_patch_nll(ad::Tape& t, const FlowConfig& cfg,
                                   const FlowParamNodes& pn, ad::NodeRef x) {
  FlowForwardNodes f = build_flow_forward(t, cfg, pn, x);
  const int d = cfg.dim();
  ad::NodeRef ones_d = t.constant(d, 1, std::vector<double>(d, 1.0));
  ad::NodeRef sq = t.mul(t.scalar(0.5), t.matmul(t.mul(f.z, f.z), ones_d));
  const double log_two_pi = std::log(2.0 * 3.14159265358979323846);
  ad::NodeRef base = t.scalar(0.5 * d * log_two_pi);
  return t.add(t.add(sq, base), t.neg(f.log_det));
}

// ---- numeric wrappers ----

struct FlowForwardResult {
  std::vector<double> z;
  double log_det = 0.0;
};

/// phi(patch) and log|det dphi/dpatch|, evaluated through the same graph the
/// training path differentiates.
inline FlowForwardResult flow_forward(const FlowConfig& cfg,
                                      const ad::ParameterStore& params,
                                      const Patch& patch) {
  patch.validate();
  if (patch.dim() != cfg.dim())
    throw std::invalid_argument("flow_forward: patch size does not match flow");
  ad::Tape t;
  FlowParamNodes pn = make_flow_param_nodes(t, cfg, /*trainable=*/false);
  ad::NodeRef x = t.constant(1, cfg.dim(), patch.values);
  FlowForwardNodes f = build_flow_forward(t, cfg, pn, x);
  ad::Evaluation ev = t.forward(params);
  FlowForwardResult out;
  out.z = ev.value(f.z);
  out.log_det = ev.value(f.log_det)[0];
  for (double v : out.z)
    if (!std::isfinite(v))
      throw std::runtime_error("flow_forward: non-finite output coordinate");
  if (!std::isfinite(out.log_det))
    throw std::runtime_error("flow_forward: non-finite log determinant");
  return out;
}

namespace detail {

struct CouplingNets {
  // evaluates s (bounded) and shift for a given masked input row
  const FlowConfig& cfg;
  const ad::ParameterStore& params;
  int layer;

  void eval(const std::vector<double>& masked, std::vector<double>& s,
            std::vector<double>& shift) const {
    const std::string base = "flow.layer" + std::to_string(layer);
    const int d = cfg.dim();
    const int h = cfg.hidden_width;
    const auto& w1 = params.values(base + ".w1");
    const auto& b1 = params.values(base + ".b1");
    const auto& ws = params.values(base + ".ws");
    const auto& bs = params.values(base + ".bs");
    const auto& wt = params.values(base + ".wt");
    const auto& bt = params.values(base + ".bt");
    std::vector<double> hidden(h);
    for (int j = 0; j < h; ++j) {
      double acc = b1[j];
      for (int i = 0; i < d; ++i) acc += masked[i] * w1[static_cast<std::size_t>(i) * h + j];
      hidden[j] = acc > 0.0 ? acc : 0.0;
    }
    s.assign(d, 0.0);
    shift.assign(d, 0.0);
    for (int k = 0; k < d; ++k) {
      double sa = bs[k], ta = bt[k];
      for (int j = 0; j < h; ++j) {
        sa += hidden[j] * ws[static_cast<std::size_t>(j) * d + k];
        ta += hidden[j] * wt[static_cast<std::size_t>(j) * d + k];
      }
      s[k] = cfg.scale_cap * std::tanh(sa);
      shift[k] = ta;
    }
  }
};

}  // namespace detail

/// Exact analytic inverse of the coupling stack and the logit preprocessing.
inline Patch flow_inverse(const FlowConfig& cfg, const ad::ParameterStore& params,
                          const std::vector<double>& z) {
  cfg.validate();
  const int d = cfg.dim();
  if (static_cast<int>(z.size()) != d)
    throw std::invalid_argument("flow_inverse: dimension mismatch");
  for (double v : z)
    if (!std::isfinite(v)) throw std::invalid_argument("flow_inverse: non-finite input");

  std::vector<double> y = z;
  for (int l = cfg.coupling_layers - 1; l >= 0; --l) {
    std::vector<double> keep = coupling_mask(cfg, l);
    std::vector<double> masked(d);
    for (int i = 0; i < d; ++i) masked[i] = keep[i] * y[i];
    std::vector<double> s, shift;
    detail::CouplingNets{cfg, params, l}.eval(masked, s, shift);
    for (int i = 0; i < d; ++i)
      if (keep[i] == 0.0) y[i] = (y[i] - shift[i]) * std::exp(-s[i]);
  }

  Patch out;
  out.size = cfg.patch_size;
  out.values.resize(d);
  if (cfg.preprocess) {
    const double a = cfg.logit_eps;
    const double b = 1.0 - 2.0 * cfg.logit_eps;
    for (int i = 0; i < d; ++i) {
      const double u = 1.0 / (1.0 + std::exp(-y[i]));  // in (0,1)
      out.values[i] = (u - a) / b;
    }
  } else {
    out.values = y;
  }
  return out;
}

inline double patch_nll(const FlowConfig& cfg, const ad::ParameterStore& params,
                        const Patch& patch) {
  FlowForwardResult f = flow_forward(cfg, params, patch);
  double sq = 0.0;
  for (double v : f.z) sq += v * v;
  const double log_two_pi = std::log(2.0 * 3.14159265358979323846);
  return 0.5 * sq + 0.5 * cfg.dim() * log_two_pi - f.log_det;
}

// ---- corpora ----

/// Procedural stand-in corpus: smooth color gradients with band-limited
/// noise, roughly matching low-order natural image statistics.
inline std::vector<std::vector<double>> bundled_corpus_images(int count, int size,
                                                              std::uint64_t seed) {
  std::vector<std::vector<double>> images;
  images.reserve(count);
  Rng rng(seed);
  for (int n = 0; n < count; ++n) {
    std::vector<double> img(static_cast<std::size_t>(size) * size * 3);
    Vec3 c0(rng.uniform(), rng.uniform(), rng.uniform());
    Vec3 c1(rng.uniform(), rng.uniform(), rng.uniform());
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double gx = std::cos(angle), gy = std::sin(angle);

    // low-frequency noise: white noise box-blurred a few times
    std::vector<double> noise(static_cast<std::size_t>(size) * size);
    for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
    std::vector<double> tmp(noise.size());
    for (int pass = 0; pass < 3; ++pass) {
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          double acc = 0.0;
          int cnt = 0;
          for (int dj = -2; dj <= 2; ++dj) {
            int jj = j + dj;
            if (jj < 0 || jj >= size) continue;
            acc += noise[static_cast<std::size_t>(i) * size + jj];
            ++cnt;
          }
          tmp[static_cast<std::size_t>(i) * size + j] = acc / cnt;
        }
      for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i) {
          double acc = 0.0;
          int cnt = 0;
          for (int di = -2; di <= 2; ++di) {
            int ii = i + di;
            if (ii < 0 || ii >= size) continue;
            acc += tmp[static_cast<std::size_t>(ii) * size + j];
            ++cnt;
          }
          noise[static_cast<std::size_t>(i) * size + j] = acc / cnt;
        }
    }

    const double noise_amp = rng.uniform(0.05, 0.35);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        const double u = (gx * j + gy * i) / size * 0.5 + 0.5;
        const double w = std::clamp(u, 0.0, 1.0);
        const double nz = noise[static_cast<std::size_t>(i) * size + j] * noise_amp;
        for (int c = 0; c < 3; ++c) {
          double v = (1.0 - w) * c0[c] + w * c1[c] + nz;
          img[(static_cast<std::size_t>(i) * size + j) * 3 + c] = std::clamp(v, 0.0, 1.0);
        }
      }
    images.push_back(std::move(img));
  }
  return images;
}

/// Extraction plan over source images; images are square RGB buffers.
struct PatchCorpus {
  std::vector<std::vector<double>> images;  // row-major rgb, square
  int image_size = 0;
  int stride = 4;
  int max_patches = 0;  // 0 keeps everything
  std::uint64_t shuffle_seed = 1;
};

inline std::vector<Patch> extract_patches(const PatchCorpus& corpus, int patch_size) {
  if (corpus.image_size < patch_size)
    throw std::invalid_argument("extract_patches: images smaller than the patch");
  std::vector<Patch> patches;
  for (const auto& img : corpus.images) {
    for (int i = 0; i + patch_size <= corpus.image_size; i += corpus.stride)
      for (int j = 0; j + patch_size <= corpus.image_size; j += corpus.stride) {
        Patch p;
        p.size = patch_size;
        p.values.reserve(static_cast<std::size_t>(patch_size) * patch_size * 3);
        for (int pi = 0; pi < patch_size; ++pi)
          for (int pj = 0; pj < patch_size; ++pj)
            for (int c = 0; c < 3; ++c)
              p.values.push_back(
                  img[(static_cast<std::size_t>(i + pi) * corpus.image_size + (j + pj)) * 3 + c]);
        patches.push_back(std::move(p));
      }
  }
  // Fisher-Yates with the corpus seed
  Rng rng(corpus.shuffle_seed);
  for (std::size_t i = patches.size(); i > 1; --i)
    std::swap(patches[i - 1], patches[rng.index(i)]);
  if (corpus.max_patches > 0 &&
      patches.size() > static_cast<std::size_t>(corpus.max_patches))
    patches.resize(corpus.max_patches);
  return patches;
}

// ---- training ----

struct FlowTrainConfig {
  int steps = 2000;
  int batch = 64;
  double lr_init = 1e-3;
  double lr_final = 1e-4;
  double holdout_fraction = 0.1;
  int min_patches = 256;
  bool dequantize = true;  // add U[0, 1/255) noise to soften 8-bit levels
  std::uint64_t seed = 1;
};

struct FlowTrainRecord {
  int step = 0;
  double lr = 0.0;
  double train_nll = 0.0;
};

struct FlowTrainResult {
  ad::ParameterStore params;
  std::vector<FlowTrainRecord> log;
  double final_train_nll = 0.0;
  double final_holdout_nll = 0.0;
};

inline double mean_nll(const FlowConfig& cfg, const ad::ParameterStore& params,
                       const std::vector<Patch>& patches) {
  if (patches.empty()) throw std::invalid_argument("mean_nll: empty patch set");
  double acc = 0.0;
  for (const auto& p : patches) acc += patch_nll(cfg, params, p);
  return acc / patches.size();
}

/// Maximum-likelihood training with Adam on the mean patch NLL. Deterministic
/// given the seed. Throws on divergence (non-finite loss).
inline FlowTrainResult train_flow(const std::vector<Patch>& all_patches,
                                  const FlowConfig& cfg, const FlowTrainConfig& tc) {
  cfg.validate();
  if (static_cast<int>(all_patches.size()) < tc.min_patches)
    throw std::invalid_argument("train_flow: corpus yields too few patches (" +
                                std::to_string(all_patches.size()) + " < " +
                                std::to_string(tc.min_patches) + ")");
  const int d = cfg.dim();
  const std::size_t holdout =
      std::max<std::size_t>(1, static_cast<std::size_t>(all_patches.size() * tc.holdout_fraction));
  std::vector<Patch> held(all_patches.end() - holdout, all_patches.end());
  std::vector<Patch> train(all_patches.begin(), all_patches.end() - holdout);

  Rng rng(tc.seed);
  FlowTrainResult out;
  out.params = init_flow_params(cfg, rng);

  ad::ParameterStore m = ad::ParameterStore::zeros_like(out.params);
  ad::ParameterStore v = ad::ParameterStore::zeros_like(out.params);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  for (int step = 0; step < tc.steps; ++step) {
    // assemble batch
    std::vector<double> x(static_cast<std::size_t>(tc.batch) * d);
    for (int b = 0; b < tc.batch; ++b) {
      const Patch& p = train[rng.index(train.size())];
      for (int k = 0; k < d; ++k) {
        double val = p.values[k];
        if (tc.dequantize) val = std::min(1.0, val + rng.uniform() / 255.0);
        x[static_cast<std::size_t>(b) * d + k] = val;
      }
    }

    ad::Tape t;
    FlowParamNodes pn = make_flow_param_nodes(t, cfg, /*trainable=*/true);
    ad::NodeRef xs = t.constant(tc.batch, d, std::move(x));
    ad::NodeRef nll_col = build_patch_nll(t, cfg, pn, xs);
    ad::NodeRef loss = t.mul(t.scalar(1.0 / tc.batch), t.sum(nll_col));

    ad::Evaluation ev = t.forward(out.params);
    const double loss_val = ev.scalar(loss);
    if (!std::isfinite(loss_val))
      throw std::runtime_error("train_flow: non-finite loss at step " +
                               std::to_string(step));
    ad::ParameterStore grads = t.gradient(ev, out.params, loss);

    const double lr =
        tc.lr_init * std::pow(tc.lr_final / tc.lr_init,
                              static_cast<double>(step) / std::max(1, tc.steps - 1));
    const double bc1 = 1.0 - std::pow(beta1, step + 1);
    const double bc2 = 1.0 - std::pow(beta2, step + 1);
    for (const auto& name : out.params.names()) {
      auto& pv = out.params.values(name);
      auto& mv = m.values(name);
      auto& vv = v.values(name);
      const auto& gv = grads.values(name);
      for (std::size_t k = 0; k < pv.size(); ++k) {
        mv[k] = beta1 * mv[k] + (1.0 - beta1) * gv[k];
        vv[k] = beta2 * vv[k] + (1.0 - beta2) * gv[k] * gv[k];
        pv[k] -= lr * (mv[k] / bc1) / (std::sqrt(vv[k] / bc2) + eps);
      }
    }

    if (step % 25 == 0 || step + 1 == tc.steps)
      out.log.push_back(FlowTrainRecord{step, lr, loss_val});
  }

  out.final_train_nll = mean_nll(cfg, out.params, train);
  out.final_holdout_nll = mean_nll(cfg, out.params, held);
  return out;
}

// ---- checkpoints ----

inline void save_flow(const std::string& path, const FlowConfig& cfg,
                      const ad::ParameterStore& params) {
  ad::ParameterStore store = params;
  store.set("meta.flow", {6},
            {static_cast<double>(cfg.patch_size), static_cast<double>(cfg.coupling_layers),
             static_cast<double>(cfg.hidden_width), cfg.scale_cap, cfg.logit_eps,
             cfg.preprocess ? 1.0 : 0.0});
  ad::save_checkpoint(store, path, "FLOW");
}

struct FlowCheckpoint {
  FlowConfig config;
  ad::ParameterStore params;
};

inline FlowCheckpoint load_flow(const std::string& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  if (ck.section != "FLOW")
    throw std::runtime_error("load_flow: checkpoint section is '" + ck.section +
                             "', expected 'FLOW'");
  const auto& meta = ck.params.values("meta.flow");
  FlowCheckpoint out;
  out.config.patch_size = static_cast<int>(meta[0]);
  out.config.coupling_layers = static_cast<int>(meta[1]);
  out.config.hidden_width = static_cast<int>(meta[2]);
  out.config.scale_cap = meta[3];
  out.config.logit_eps = meta[4];
  out.config.preprocess = meta[5] != 0.0;
  out.params = ck.params;
  return out;
}

}  // namespace svrf

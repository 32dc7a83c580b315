// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "svrf/flow.hpp"
#include "svrf/manifest.hpp"
#include "svrf/metrics.hpp"
#include "svrf/renderer.hpp"

namespace svrf {

struct TrainConfig {
  // rendering
  int samples_per_ray = 64;
  int batch_rays = 512;
  int patches_per_step = 4;
  int patch_size = 8;
  bool jitter_samples = true;
  // loss weights; the reconstruction term is mean-normalized over the ray
  // batch, so these defaults are calibrated against that scale
  double lambda_ds = 0.05;
  double lambda_nll = 1e-4;
  double lambda_opacity = 0.0;
  // optimizer
  double lr_init = 2e-3;
  double lr_final = 2e-5;
  double clip_value = 0.1;
  double clip_norm = 0.1;
  // sample-space annealing; start fraction 1 disables the ramp
  int anneal_iters = 256;
  double anneal_start = 0.5;
  // schedule
  double pixel_epochs = 500.0;
  std::uint64_t seed = 1;
  double pose_jitter = 0.125;  // focus jitter, units of the pose box diagonal
  FieldConfig field;
  // bookkeeping
  int log_every = 50;
  int checkpoint_every = 0;  // 0 keeps only the final checkpoint
  int eval_every = 0;        // 0 evaluates test views only at the end

  void validate() const {
    if (samples_per_ray < 2) throw std::invalid_argument("train: samples_per_ray >= 2");
    if (batch_rays < 1) throw std::invalid_argument("train: batch_rays >= 1");
    if (patches_per_step < 0) throw std::invalid_argument("train: patches_per_step >= 0");
    if (patch_size < 2) throw std::invalid_argument("train: patch_size >= 2");
    if (lambda_ds < 0 || lambda_nll < 0 || lambda_opacity < 0)
      throw std::invalid_argument("train: loss weights must be >= 0");
    if (!(lr_init > 0) || !(lr_final > 0))
      throw std::invalid_argument("train: learning rates must be > 0");
    if (pixel_epochs <= 0) throw std::invalid_argument("train: pixel_epochs > 0");
  }
};

struct LossBreakdown {
  double mse = 0.0;
  double ds = 0.0;
  double nll = 0.0;
  double opacity_reg = 0.0;
  double total = 0.0;
  // populated on logged iterations only
  double grad_norm_mse = 0.0;
  double grad_norm_ds = 0.0;
  double grad_norm_nll = 0.0;
  double grad_norm_opacity = 0.0;
};

/// Raised when a step produces a non-finite loss; carries the last breakdown
/// for diagnostics.
struct TrainingDiverged : std::runtime_error {
  LossBreakdown breakdown;
  TrainingDiverged(const std::string& what, LossBreakdown b)
      : std::runtime_error(what), breakdown(b) {}
};

inline double lr_schedule(std::int64_t iteration, std::int64_t total_iters,
                          double lr_init, double lr_final) {
  if (iteration < 0 || iteration > total_iters)
    throw std::invalid_argument("lr_schedule: iteration outside [0, total]");
  if (total_iters == 0) return lr_init;
  const double t = static_cast<double>(iteration) / static_cast<double>(total_iters);
  return lr_init * std::pow(lr_final / lr_init, t);
}

inline std::int64_t iterations_for(double pixel_epochs, std::int64_t total_pixels,
                                   int batch_rays) {
  const double steps = pixel_epochs * static_cast<double>(total_pixels) / batch_rays;
  return static_cast<std::int64_t>(std::ceil(steps - 1e-9));
}

// ---- loss subgraphs ----

/// Sum over the batch of squared color errors.
inline ad::NodeRef build_mse_sum(ad::Tape& t, ad::NodeRef color,
                                 const std::vector<double>& gt_rgb) {
  const int R = t.rows(color);
  if (static_cast<int>(gt_rgb.size()) != R * 3)
    throw std::invalid_argument("mse: ground truth size mismatch");
  ad::NodeRef diff = t.sub(color, t.constant(R, 3, gt_rgb));
  return t.sum(t.mul(diff, diff));
}

/// Squared differences of adjacent expected depths, both directions, over
/// the whole patch.
inline ad::NodeRef build_depth_smoothness(ad::Tape& t, ad::NodeRef depth_patch) {
  const int S = t.rows(depth_patch);
  if (t.cols(depth_patch) != S || S < 2)
    throw std::invalid_argument("depth smoothness: need a square patch, size >= 2");
  // horizontal diffs: depth * Dh, with Dh [S, S-1] mapping col j to col j - col j+1
  std::vector<double> dh(static_cast<std::size_t>(S) * (S - 1), 0.0);
  for (int j = 0; j < S - 1; ++j) {
    dh[static_cast<std::size_t>(j) * (S - 1) + j] = 1.0;
    dh[static_cast<std::size_t>(j + 1) * (S - 1) + j] = -1.0;
  }
  // vertical diffs: Dv * depth, with Dv [S-1, S] mapping row i to row i - row i+1
  std::vector<double> dv(static_cast<std::size_t>(S - 1) * S, 0.0);
  for (int i = 0; i < S - 1; ++i) {
    dv[static_cast<std::size_t>(i) * S + i] = 1.0;
    dv[static_cast<std::size_t>(i) * S + i + 1] = -1.0;
  }
  ad::NodeRef h = t.matmul(depth_patch, t.constant(S, S - 1, std::move(dh)));
  ad::NodeRef v = t.matmul(t.constant(S - 1, S, std::move(dv)), depth_patch);
  return t.add(t.sum(t.mul(h, h)), t.sum(t.mul(v, v)));
}

/// Binarization penalty -log(o^2 + (1-o)^2) summed over ray opacities.
inline ad::NodeRef build_opacity_reg(ad::Tape& t, ad::NodeRef opacity_col) {
  ad::NodeRef one_minus = t.sub(t.scalar(1.0), opacity_col);
  ad::NodeRef inner = t.add(t.mul(opacity_col, opacity_col), t.mul(one_minus, one_minus));
  return t.sum(t.neg(t.log(inner)));
}

// ---- optimizer ----

struct OptimizerState {
  ad::ParameterStore m;
  ad::ParameterStore v;
  std::int64_t step = 0;

  static OptimizerState like(const ad::ParameterStore& params) {
    return OptimizerState{ad::ParameterStore::zeros_like(params),
                          ad::ParameterStore::zeros_like(params), 0};
  }
};

/// Elementwise clamp to [-clip_value, clip_value], then a global rescale so
/// the joint norm does not exceed clip_norm. Returns the final global norm.
inline double clip_gradients(ad::ParameterStore& grads, double clip_value,
                             double clip_norm) {
  double sq = 0.0;
  for (const auto& name : grads.names()) {
    for (auto& g : grads.values(name)) {
      g = std::clamp(g, -clip_value, clip_value);
      sq += g * g;
    }
  }
  double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (const auto& name : grads.names())
      for (auto& g : grads.values(name)) g *= scale;
    norm = clip_norm;
  }
  return norm;
}

inline void adam_step(OptimizerState& opt, ad::ParameterStore& params,
                      const ad::ParameterStore& grads, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
  for (const auto& name : params.names()) {
    auto& pv = params.values(name);
    auto& mv = opt.m.values(name);
    auto& vv = opt.v.values(name);
    const auto& gv = grads.values(name);
    for (std::size_t k = 0; k < pv.size(); ++k) {
      mv[k] = beta1 * mv[k] + (1.0 - beta1) * gv[k];
      vv[k] = beta2 * vv[k] + (1.0 - beta2) * gv[k] * gv[k];
      pv[k] -= lr * (mv[k] / bc1) / (std::sqrt(vv[k] / bc2) + eps);
    }
  }
}

/// Clip-by-value, clip-by-norm, then one Adam update. Throws on non-finite
/// gradients.
inline void clip_and_step(OptimizerState& opt, ad::ParameterStore& params,
                          ad::ParameterStore grads, double lr, double clip_value = 0.1,
                          double clip_norm = 0.1) {
  for (const auto& name : grads.names())
    for (double g : grads.values(name))
      if (!std::isfinite(g))
        throw std::runtime_error("clip_and_step: non-finite gradient in '" + name + "'");
  clip_gradients(grads, clip_value, clip_norm);
  adam_step(opt, params, grads, lr);
}

// ---- scene training ----

struct TrainLogRecord {
  std::int64_t iteration = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double anneal_near = 0.0;
  double anneal_far = 0.0;
  double sample_t_min = 0.0;  // extremes of the t values drawn this step
  double sample_t_max = 0.0;
  double test_psnr = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  std::function<void(std::int64_t, const ad::ParameterStore&)> on_checkpoint;
  std::function<void(const TrainLogRecord&)> on_log;
};

struct TrainResult {
  ad::ParameterStore params;  // field entries plus frozen flow entries
  std::vector<TrainLogRecord> log;
  std::int64_t iterations = 0;
  double final_test_psnr = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

struct StepNodes {
  ad::NodeRef total, mse, ds, nll, opacity;
};

inline double mean_test_psnr(const Dataset& data, const FieldConfig& cfg,
                             const ad::ParameterStore& params, int n_samples) {
  RenderOptions opts;
  opts.n_samples = n_samples;
  if (data.manifest.white_background) opts.background = Vec3::Ones();
  double acc = 0.0;
  int count = 0;
  for (const auto& id : data.manifest.test_ids) {
    const int idx = data.view_index(id);
    const ViewRecord& rec = data.manifest.views[idx];
    ImageRender r = render_image(cfg, params, rec.pose, rec.intrinsics,
                                 data.manifest.t_near, data.manifest.t_far, opts);
    Image img;
    img.width = r.width;
    img.height = r.height;
    img.rgb = r.color;
    acc += psnr(img, data.images[idx]);
    ++count;
  }
  return count ? acc / count : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Optimizes a radiance field on the dataset's input views with unobserved
/// patch regularization and annealed sampling bounds. Deterministic for a
/// fixed seed. `flow` may be null when lambda_nll is zero.
inline TrainResult train_scene(const Dataset& data, const FlowCheckpoint* flow,
                               const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (data.manifest.input_ids.empty())
    throw std::invalid_argument("train_scene: dataset has no input views");
  const bool use_nll = cfg.lambda_nll > 0.0 && cfg.patches_per_step > 0;
  if (use_nll && !flow)
    throw std::invalid_argument("train_scene: lambda_nll > 0 requires a flow checkpoint");
  if (use_nll && flow->config.patch_size != cfg.patch_size)
    throw std::invalid_argument("train_scene: flow patch size differs from config");
  const bool use_patches =
      cfg.patches_per_step > 0 && (cfg.lambda_ds > 0.0 || use_nll || cfg.lambda_opacity > 0.0);

  Rng master(cfg.seed);
  Rng init_rng = master.split(1);
  Rng ray_rng = master.split(2);
  Rng pose_rng = master.split(3);

  TrainResult out;
  out.params = init_field_params(cfg.field, init_rng);
  if (flow)
    for (const auto& name : flow->params.names())
      if (name.rfind("flow.", 0) == 0)
        out.params.set(name, flow->params.dims(name), flow->params.values(name));

  OptimizerState opt = OptimizerState::like(out.params);

  std::vector<int> input_idx;
  std::vector<CameraPose> input_poses;
  for (const auto& id : data.manifest.input_ids) {
    input_idx.push_back(data.view_index(id));
    input_poses.push_back(data.manifest.views[input_idx.back()].pose);
  }
  PoseSampleSpace pose_space;
  if (use_patches) pose_space = build_sample_space(input_poses, cfg.pose_jitter);

  const CameraIntrinsics patch_intr =
      data.manifest.views[input_idx.front()].intrinsics;
  if (patch_intr.width < cfg.patch_size || patch_intr.height < cfg.patch_size)
    throw std::invalid_argument("train_scene: image smaller than the patch size");

  AnnealSchedule sched = AnnealSchedule::centered(
      data.manifest.t_near, data.manifest.t_far, cfg.anneal_iters, cfg.anneal_start);
  sched.validate();

  RenderOptions opts;
  opts.n_samples = cfg.samples_per_ray;
  opts.jitter = cfg.jitter_samples;
  if (data.manifest.white_background) opts.background = Vec3::Ones();

  out.iterations = iterations_for(cfg.pixel_epochs, data.total_input_pixels(),
                                  cfg.batch_rays);

  for (std::int64_t it = 0; it < out.iterations; ++it) {
    const auto [lo, hi] = anneal_bounds(sched, it);

    ad::Tape tape;
    FieldParamNodes field_nodes = make_field_param_nodes(tape, cfg.field, true);
    FlowParamNodes flow_nodes;
    if (use_nll) flow_nodes = make_flow_param_nodes(tape, flow->config, false);

    // reconstruction batch from the input views
    std::vector<Ray> rays;
    std::vector<double> gt;
    rays.reserve(cfg.batch_rays);
    gt.reserve(static_cast<std::size_t>(cfg.batch_rays) * 3);
    for (int k = 0; k < cfg.batch_rays; ++k) {
      const int which = static_cast<int>(ray_rng.index(input_idx.size()));
      const int view = input_idx[which];
      const ViewRecord& rec = data.manifest.views[view];
      const int row = static_cast<int>(ray_rng.index(rec.intrinsics.height));
      const int col = static_cast<int>(ray_rng.index(rec.intrinsics.width));
      rays.push_back(pixel_ray(rec.pose, rec.intrinsics, row, col, lo, hi));
      for (int c = 0; c < 3; ++c) gt.push_back(data.images[view].at(row, col, c));
    }
    auto ts = draw_samples(rays, cfg.samples_per_ray, ray_rng, cfg.jitter_samples);

    double t_min = ts[0][0], t_max = ts[0][0];
    auto track = [&](const std::vector<std::vector<double>>& tss) {
      for (const auto& row : tss) {
        t_min = std::min(t_min, row.front());
        t_max = std::max(t_max, row.back());
      }
    };
    track(ts);

    RayBatchNodes input_batch = build_ray_batch(tape, cfg.field, field_nodes, rays, ts, opts);
    ad::NodeRef mse_node =
        tape.mul(tape.scalar(1.0 / cfg.batch_rays), build_mse_sum(tape, input_batch.color, gt));

    ad::NodeRef ds_node, nll_node, op_node;
    if (use_patches) {
      for (int p = 0; p < cfg.patches_per_step; ++p) {
        const CameraPose vpose = sample_unobserved_pose(pose_space, pose_rng);
        const int r0 = static_cast<int>(
            pose_rng.index(patch_intr.height - cfg.patch_size + 1));
        const int c0 = static_cast<int>(
            pose_rng.index(patch_intr.width - cfg.patch_size + 1));
        std::vector<std::pair<int, int>> px;
        for (int i = 0; i < cfg.patch_size; ++i)
          for (int j = 0; j < cfg.patch_size; ++j) px.push_back({r0 + i, c0 + j});
        auto prays = generate_rays(vpose, patch_intr, px, lo, hi);
        auto pts = draw_samples(prays, cfg.samples_per_ray, ray_rng, cfg.jitter_samples);
        track(pts);
        RayBatchNodes pb = build_ray_batch(tape, cfg.field, field_nodes, prays, pts, opts);

        if (cfg.lambda_ds > 0.0) {
          ad::NodeRef dp = tape.reshape(pb.depth, cfg.patch_size, cfg.patch_size);
          ad::NodeRef term = build_depth_smoothness(tape, dp);
          ds_node = ds_node.valid() ? tape.add(ds_node, term) : term;
        }
        if (use_nll) {
          ad::NodeRef patch_row = tape.reshape(pb.color, 1, flow->config.dim());
          ad::NodeRef term = tape.sum(build_patch_nll(tape, flow->config, flow_nodes, patch_row));
          nll_node = nll_node.valid() ? tape.add(nll_node, term) : term;
        }
        if (cfg.lambda_opacity > 0.0) {
          ad::NodeRef term = build_opacity_reg(tape, pb.opacity);
          op_node = op_node.valid() ? tape.add(op_node, term) : term;
        }
      }
    }

    ad::NodeRef total = mse_node;
    if (ds_node.valid()) total = tape.add(total, tape.mul(tape.scalar(cfg.lambda_ds), ds_node));
    if (nll_node.valid())
      total = tape.add(total, tape.mul(tape.scalar(cfg.lambda_nll), nll_node));
    if (op_node.valid())
      total = tape.add(total, tape.mul(tape.scalar(cfg.lambda_opacity), op_node));

    ad::Evaluation ev = tape.forward(out.params);
    LossBreakdown breakdown;
    breakdown.mse = ev.scalar(mse_node);
    breakdown.ds = ds_node.valid() ? ev.scalar(ds_node) : 0.0;
    breakdown.nll = nll_node.valid() ? ev.scalar(nll_node) : 0.0;
    breakdown.opacity_reg = op_node.valid() ? ev.scalar(op_node) : 0.0;
    breakdown.total = ev.scalar(total);
    if (!std::isfinite(breakdown.total))
      throw TrainingDiverged("train_scene: non-finite loss at iteration " +
                                 std::to_string(it),
                             breakdown);

    const bool log_now = cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == out.iterations);

    ad::ParameterStore grads = tape.gradient(ev, out.params, total);
    if (log_now) {
      auto term_norm = [&](ad::NodeRef n) {
        if (!n.valid()) return 0.0;
        ad::ParameterStore g = tape.gradient(ev, out.params, n);
        double sq = 0.0;
        for (const auto& name : g.names())
          for (double x : g.values(name)) sq += x * x;
        return std::sqrt(sq);
      };
      breakdown.grad_norm_mse = term_norm(mse_node);
      breakdown.grad_norm_ds = term_norm(ds_node);
      breakdown.grad_norm_nll = term_norm(nll_node);
      breakdown.grad_norm_opacity = term_norm(op_node);
    }

    const double lr = lr_schedule(it, out.iterations, cfg.lr_init, cfg.lr_final);
    clip_and_step(opt, out.params, std::move(grads), lr, cfg.clip_value, cfg.clip_norm);

    if (log_now) {
      TrainLogRecord rec;
      rec.iteration = it;
      rec.lr = lr;
      rec.loss = breakdown;
      rec.anneal_near = lo;
      rec.anneal_far = hi;
      rec.sample_t_min = t_min;
      rec.sample_t_max = t_max;
      if (cfg.eval_every > 0 && it > 0 && it % cfg.eval_every == 0)
        rec.test_psnr =
            detail::mean_test_psnr(data, cfg.field, out.params, cfg.samples_per_ray);
      out.log.push_back(rec);
      if (hooks.on_log) hooks.on_log(out.log.back());
    }
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && it > 0 &&
        it % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(it, out.params);
  }

  out.final_test_psnr =
      detail::mean_test_psnr(data, cfg.field, out.params, cfg.samples_per_ray);
  return out;
}

}  // namespace svrf

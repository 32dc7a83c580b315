// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0
//
// svrf: sparse-view radiance field toolkit.
//
// Subcommands: make-scene, train-flow, train, render, eval. Every command
// takes --out and drops a manifest.json there before doing work. Exit codes:
// 0 success, 1 missing input or I/O failure, 2 argument error, 3 numerical
// failure.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "svrf/flow.hpp"
#include "svrf/manifest.hpp"
#include "svrf/metrics.hpp"
#include "svrf/scenes.hpp"
#include "svrf/training.hpp"

namespace fs = std::filesystem;
using svrf::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitArgs = 2;
constexpr int kExitNumerical = 3;

int default_threads() {
  if (const char* env = std::getenv("SVRF_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

json field_config_json(const svrf::FieldConfig& f) {
  return json{{"position_bands", f.encoding.position_bands},
              {"direction_bands", f.encoding.direction_bands},
              {"integrated", f.encoding.integrated},
              {"hidden_width", f.hidden_width},
              {"hidden_layers", f.hidden_layers},
              {"skip_layer", f.skip_layer},
              {"color_width", f.color_width},
              {"density_bias_init", f.density_bias_init}};
}

void field_config_from_json(const json& j, svrf::FieldConfig& f) {
  f.encoding.position_bands = j.value("position_bands", f.encoding.position_bands);
  f.encoding.direction_bands = j.value("direction_bands", f.encoding.direction_bands);
  f.encoding.integrated = j.value("integrated", f.encoding.integrated);
  f.hidden_width = j.value("hidden_width", f.hidden_width);
  f.hidden_layers = j.value("hidden_layers", f.hidden_layers);
  f.skip_layer = j.value("skip_layer", f.skip_layer);
  f.color_width = j.value("color_width", f.color_width);
  f.density_bias_init = j.value("density_bias_init", f.density_bias_init);
}

json train_config_json(const svrf::TrainConfig& c) {
  return json{{"samples_per_ray", c.samples_per_ray},
              {"batch_rays", c.batch_rays},
              {"patches_per_step", c.patches_per_step},
              {"patch_size", c.patch_size},
              {"jitter_samples", c.jitter_samples},
              {"lambda_ds", c.lambda_ds},
              {"lambda_nll", c.lambda_nll},
              {"lambda_opacity", c.lambda_opacity},
              {"lr_init", c.lr_init},
              {"lr_final", c.lr_final},
              {"clip_value", c.clip_value},
              {"clip_norm", c.clip_norm},
              {"anneal_iters", c.anneal_iters},
              {"anneal_start", c.anneal_start},
              {"pixel_epochs", c.pixel_epochs},
              {"seed", c.seed},
              {"pose_jitter", c.pose_jitter},
              {"log_every", c.log_every},
              {"checkpoint_every", c.checkpoint_every},
              {"eval_every", c.eval_every},
              {"field", field_config_json(c.field)}};
}

void train_config_from_json(const json& j, svrf::TrainConfig& c) {
  c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
  c.batch_rays = j.value("batch_rays", c.batch_rays);
  c.patches_per_step = j.value("patches_per_step", c.patches_per_step);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.jitter_samples = j.value("jitter_samples", c.jitter_samples);
  c.lambda_ds = j.value("lambda_ds", c.lambda_ds);
  c.lambda_nll = j.value("lambda_nll", c.lambda_nll);
  c.lambda_opacity = j.value("lambda_opacity", c.lambda_opacity);
  c.lr_init = j.value("lr_init", c.lr_init);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.clip_value = j.value("clip_value", c.clip_value);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.anneal_iters = j.value("anneal_iters", c.anneal_iters);
  c.anneal_start = j.value("anneal_start", c.anneal_start);
  c.pixel_epochs = j.value("pixel_epochs", c.pixel_epochs);
  c.seed = j.value("seed", c.seed);
  c.pose_jitter = j.value("pose_jitter", c.pose_jitter);
  c.log_every = j.value("log_every", c.log_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.eval_every = j.value("eval_every", c.eval_every);
  if (j.contains("field")) field_config_from_json(j.at("field"), c.field);
}

svrf::ad::ParameterStore field_entries_only(const svrf::ad::ParameterStore& store) {
  svrf::ad::ParameterStore out;
  for (const auto& name : store.names())
    if (name.rfind("field.", 0) == 0)
      out.set(name, store.dims(name), store.values(name));
  return out;
}

svrf::Image image_from_render(const svrf::ImageRender& r) {
  svrf::Image img;
  img.width = r.width;
  img.height = r.height;
  img.rgb = r.color;
  return img;
}

svrf::Grid grid_from(const std::vector<double>& v, int w, int h) {
  svrf::Grid g;
  g.width = w;
  g.height = h;
  g.values = v;
  return g;
}

// ---- make-scene ----

struct MakeSceneArgs {
  std::string scene;
  int inputs = 3;
  int tests = 8;
  std::string out;
  int resolution = 64;
  int n_dense = 2048;
  std::uint64_t seed = 1;
};

int run_make_scene(const MakeSceneArgs& a) {
  const auto names = svrf::bundled_scene_names();
  if (std::find(names.begin(), names.end(), a.scene) == names.end()) {
    std::cerr << "unknown scene '" << a.scene << "'; bundled scenes:";
    for (const auto& n : names) std::cerr << " " << n;
    std::cerr << "\n";
    return kExitArgs;
  }
  svrf::SyntheticScene scene = svrf::bundled_scene(a.scene);
  json cfg{{"scene", a.scene},   {"inputs", a.inputs},   {"tests", a.tests},
           {"resolution", a.resolution}, {"n_dense", a.n_dense}, {"seed", a.seed}};
  svrf::write_run_manifest(a.out, "make-scene", cfg, a.seed, {}, {"dataset.json"});
  const std::string manifest =
      svrf::make_dataset(scene, a.inputs, a.tests, a.resolution, a.n_dense, a.seed, a.out);
  std::cout << manifest << "\n";
  return kExitOk;
}

// ---- train-flow ----

struct TrainFlowArgs {
  std::string corpus_dir;
  bool bundled = false;
  int bundled_count = 48;
  int bundled_size = 64;
  std::string out;
  int stride = 4;
  int max_patches = 0;
  svrf::FlowConfig flow;
  svrf::FlowTrainConfig train;
};

int run_train_flow(const TrainFlowArgs& a) {
  svrf::PatchCorpus corpus;
  corpus.stride = a.stride;
  corpus.max_patches = a.max_patches;
  corpus.shuffle_seed = a.train.seed;
  std::vector<std::string> input_files;

  if (a.bundled) {
    corpus.images = svrf::bundled_corpus_images(a.bundled_count, a.bundled_size,
                                                a.train.seed);
    corpus.image_size = a.bundled_size;
  } else {
    if (!fs::is_directory(a.corpus_dir)) {
      std::cerr << "corpus directory not found: " << a.corpus_dir << "\n";
      return kExitIo;
    }
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(a.corpus_dir))
      if (e.is_regular_file() && e.path().extension() == ".png")
        files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      std::cerr << "corpus directory has no .png images: " << a.corpus_dir << "\n";
      return kExitIo;
    }
    for (const auto& f : files) {
      svrf::Image img = svrf::read_png(f);
      if (img.width != img.height)
        throw std::invalid_argument("corpus images must be square: " + f);
      if (corpus.image_size == 0) corpus.image_size = img.width;
      if (img.width != corpus.image_size)
        throw std::invalid_argument("corpus images must share one size: " + f);
      corpus.images.push_back(std::move(img.rgb));
      input_files.push_back(f);
    }
  }

  json cfg{{"bundled", a.bundled},
           {"stride", a.stride},
           {"max_patches", a.max_patches},
           {"patch_size", a.flow.patch_size},
           {"coupling_layers", a.flow.coupling_layers},
           {"hidden_width", a.flow.hidden_width},
           {"scale_cap", a.flow.scale_cap},
           {"logit_eps", a.flow.logit_eps},
           {"steps", a.train.steps},
           {"batch", a.train.batch},
           {"lr_init", a.train.lr_init},
           {"lr_final", a.train.lr_final},
           {"holdout_fraction", a.train.holdout_fraction},
           {"dequantize", a.train.dequantize},
           {"seed", a.train.seed}};
  svrf::write_run_manifest(a.out, "train-flow", cfg, a.train.seed, input_files,
                           {"flow.svrf", "nll_curve.jsonl"});

  auto patches = svrf::extract_patches(corpus, a.flow.patch_size);
  svrf::FlowTrainResult res = svrf::train_flow(patches, a.flow, a.train);

  svrf::save_flow((fs::path(a.out) / "flow.svrf").string(), a.flow, res.params);
  {
    std::ofstream log(fs::path(a.out) / "nll_curve.jsonl");
    for (const auto& rec : res.log)
      log << json{{"step", rec.step}, {"lr", rec.lr}, {"train_nll", rec.train_nll}}.dump()
          << "\n";
  }
  std::cout << json{{"patches", patches.size()},
                    {"final_train_nll", res.final_train_nll},
                    {"final_holdout_nll", res.final_holdout_nll}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string dataset;
  std::string flow_path;
  std::string config_path;
  std::string out;
  svrf::TrainConfig cfg;
  bool no_ds = false;
  bool no_nll = false;
  bool no_anneal = false;
  bool opacity_reg = false;
};

int run_train(const TrainArgs& args_in) {
  TrainArgs a = args_in;
  if (!fs::exists(a.dataset)) {
    std::cerr << "dataset manifest not found: " << a.dataset << "\n";
    return kExitIo;
  }
  if (a.no_ds) a.cfg.lambda_ds = 0.0;
  if (a.no_nll) a.cfg.lambda_nll = 0.0;
  if (a.no_anneal) a.cfg.anneal_start = 1.0;
  if (a.opacity_reg && a.cfg.lambda_opacity == 0.0) a.cfg.lambda_opacity = 0.01;

  const bool needs_flow = a.cfg.lambda_nll > 0.0 && a.cfg.patches_per_step > 0;
  if (needs_flow && a.flow_path.empty()) {
    std::cerr << "color regularization is on; pass --flow or --no-nll\n";
    return kExitIo;
  }
  if (needs_flow && !fs::exists(a.flow_path)) {
    std::cerr << "flow checkpoint not found: " << a.flow_path << "\n";
    return kExitIo;
  }

  svrf::Dataset data = svrf::load_dataset(a.dataset);
  svrf::FlowCheckpoint flow;
  if (needs_flow) {
    flow = svrf::load_flow(a.flow_path);
    a.cfg.patch_size = flow.config.patch_size;
  }

  std::vector<std::string> inputs{a.dataset};
  if (needs_flow) inputs.push_back(a.flow_path);
  svrf::write_run_manifest(a.out, "train", train_config_json(a.cfg), a.cfg.seed, inputs,
                           {"field_final.svrf", "metrics.jsonl"});

  std::ofstream log_file(fs::path(a.out) / "metrics.jsonl");
  svrf::TrainHooks hooks;
  hooks.on_log = [&log_file](const svrf::TrainLogRecord& rec) {
    json j{{"iteration", rec.iteration},
           {"lr", rec.lr},
           {"mse", rec.loss.mse},
           {"ds", rec.loss.ds},
           {"nll", rec.loss.nll},
           {"opacity_reg", rec.loss.opacity_reg},
           {"total", rec.loss.total},
           {"grad_norm_mse", rec.loss.grad_norm_mse},
           {"grad_norm_ds", rec.loss.grad_norm_ds},
           {"grad_norm_nll", rec.loss.grad_norm_nll},
           {"anneal_near", rec.anneal_near},
           {"anneal_far", rec.anneal_far},
           {"sample_t_min", rec.sample_t_min},
           {"sample_t_max", rec.sample_t_max}};
    if (std::isfinite(rec.test_psnr)) j["test_psnr"] = rec.test_psnr;
    log_file << j.dump() << "\n";
    log_file.flush();
  };
  hooks.on_checkpoint = [&](std::int64_t it, const svrf::ad::ParameterStore& params) {
    char name[48];
    std::snprintf(name, sizeof(name), "field_%06lld.svrf",
                  static_cast<long long>(it));
    svrf::save_field((fs::path(a.out) / name).string(), a.cfg.field,
                     field_entries_only(params));
  };

  try {
    svrf::TrainResult res =
        svrf::train_scene(data, needs_flow ? &flow : nullptr, a.cfg, hooks);
    svrf::save_field((fs::path(a.out) / "field_final.svrf").string(), a.cfg.field,
                     field_entries_only(res.params));
    std::cout << json{{"iterations", res.iterations},
                      {"final_test_psnr", res.final_test_psnr}}
                     .dump(2)
              << "\n";
  } catch (const svrf::TrainingDiverged& e) {
    json dump{{"error", e.what()},
              {"mse", e.breakdown.mse},
              {"ds", e.breakdown.ds},
              {"nll", e.breakdown.nll},
              {"opacity_reg", e.breakdown.opacity_reg},
              {"total", e.breakdown.total}};
    std::cerr << dump.dump(2) << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

// ---- render ----

struct RenderArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::string poses_path;
  std::string out;
  int samples = 64;
  int threads = default_threads();
};

struct RenderView {
  std::string id;
  svrf::CameraPose pose;
  svrf::CameraIntrinsics intrinsics;
};

int run_render(const RenderArgs& a) {
  if (!fs::exists(a.checkpoint)) {
    std::cerr << "checkpoint not found: " << a.checkpoint << "\n";
    return kExitIo;
  }
  svrf::FieldCheckpoint field = svrf::load_field(a.checkpoint);

  std::vector<RenderView> views;
  double t_near = 0.0, t_far = 0.0;
  bool white_bg = false;
  if (!a.dataset.empty()) {
    if (!fs::exists(a.dataset)) {
      std::cerr << "dataset manifest not found: " << a.dataset << "\n";
      return kExitIo;
    }
    svrf::DatasetManifest m = svrf::load_dataset_manifest(a.dataset);
    t_near = m.t_near;
    t_far = m.t_far;
    white_bg = m.white_background;
    const auto& ids = a.split == "input" ? m.input_ids
                      : a.split == "test" ? m.test_ids
                      : throw std::invalid_argument("split must be 'input' or 'test'");
    for (const auto& id : ids) {
      const auto& rec = m.view(id);
      views.push_back(RenderView{rec.id, rec.pose, rec.intrinsics});
    }
  } else if (!a.poses_path.empty()) {
    if (!fs::exists(a.poses_path)) {
      std::cerr << "pose file not found: " << a.poses_path << "\n";
      return kExitIo;
    }
    std::ifstream f(a.poses_path);
    json j = json::parse(f);
    t_near = j.at("near").get<double>();
    t_far = j.at("far").get<double>();
    white_bg = j.value("white_background", false);
    for (const auto& rec : j.at("views")) {
      RenderView v;
      v.id = rec.at("id").get<std::string>();
      v.pose = svrf::detail::pose_from_json(rec.at("pose"));
      v.intrinsics = svrf::detail::intrinsics_from_json(rec.at("intrinsics"));
      views.push_back(std::move(v));
    }
  } else {
    std::cerr << "render needs --dataset or --poses\n";
    return kExitArgs;
  }

  json cfg{{"checkpoint", a.checkpoint}, {"split", a.split},  {"samples", a.samples},
           {"threads", a.threads},       {"near", t_near},    {"far", t_far},
           {"white_background", white_bg}};
  std::vector<std::string> outs;
  for (const auto& v : views) outs.push_back(v.id + ".png");
  std::vector<std::string> ins{a.checkpoint};
  if (!a.dataset.empty()) ins.push_back(a.dataset);
  if (!a.poses_path.empty()) ins.push_back(a.poses_path);
  svrf::write_run_manifest(a.out, "render", cfg, 0, ins, outs);

  svrf::RenderOptions opts;
  opts.n_samples = a.samples;
  if (white_bg) opts.background = svrf::Vec3::Ones();

  for (const auto& v : views) {
    svrf::ImageRender r = svrf::render_image(field.config, field.params, v.pose,
                                             v.intrinsics, t_near, t_far, opts,
                                             a.threads);
    const fs::path base = fs::path(a.out) / v.id;
    svrf::write_png(image_from_render(r), base.string() + ".png");
    svrf::Grid depth = grid_from(r.depth, r.width, r.height);
    svrf::Grid opacity = grid_from(r.opacity, r.width, r.height);
    svrf::write_grid(depth, base.string() + "_depth.svdp");
    svrf::write_grid(opacity, base.string() + "_opacity.svdp");
    auto [lo, hi] = svrf::write_grid_preview(depth, base.string() + "_depth_preview.png");
    svrf::detail::write_text_atomic(
        base.string() + ".json",
        json{{"id", v.id}, {"depth_min", lo}, {"depth_max", hi}, {"samples", a.samples}}
                .dump(2) +
            "\n");
    std::cout << v.id << "\n";
  }
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string renders;
  std::string dataset;
  std::string split = "test";
  std::string out;
};

int run_eval(const EvalArgs& a) {
  if (!fs::exists(a.dataset)) {
    std::cerr << "dataset manifest not found: " << a.dataset << "\n";
    return kExitIo;
  }
  if (!fs::is_directory(a.renders)) {
    std::cerr << "render directory not found: " << a.renders << "\n";
    return kExitIo;
  }
  svrf::DatasetManifest m = svrf::load_dataset_manifest(a.dataset);
  const fs::path base_dir = fs::path(a.dataset).parent_path();
  const auto& ids = a.split == "input" ? m.input_ids
                    : a.split == "test" ? m.test_ids
                    : throw std::invalid_argument("split must be 'input' or 'test'");

  svrf::write_run_manifest(a.out, "eval",
                           json{{"renders", a.renders}, {"split", a.split}}, 0,
                           {a.dataset}, {"metrics.json"});

  json per_view = json::array();
  double sum_psnr = 0, sum_ssim = 0, sum_mse = 0, sum_agg = 0, sum_dmae = 0;
  int count = 0, dmae_count = 0;
  for (const auto& id : ids) {
    const auto& rec = m.view(id);
    const fs::path rendered_path = fs::path(a.renders) / (id + ".png");
    if (!fs::exists(rendered_path)) {
      std::cerr << "missing rendered view: " << rendered_path << "\n";
      return kExitIo;
    }
    svrf::Image rendered = svrf::read_png(rendered_path.string());
    svrf::Image reference = svrf::read_png((base_dir / rec.file).string());
    svrf::MetricsReport rep = svrf::MetricsReport::compare(rendered, reference);
    json row{{"id", id},   {"psnr", rep.psnr},           {"ssim", rep.ssim},
             {"mse", rep.mse}, {"aggregate2", rep.aggregate2}};

    const fs::path depth_path = fs::path(a.renders) / (id + "_depth.svdp");
    if (!rec.depth_file.empty() && !rec.opacity_file.empty() && fs::exists(depth_path)) {
      svrf::Grid pred = svrf::read_grid(depth_path.string());
      svrf::Grid ref = svrf::read_grid((base_dir / rec.depth_file).string());
      svrf::Grid mask = svrf::read_grid((base_dir / rec.opacity_file).string());
      const double dmae = svrf::depth_mae(pred, ref, mask);
      row["depth_mae"] = dmae;
      sum_dmae += dmae;
      ++dmae_count;
    }
    per_view.push_back(row);
    sum_psnr += rep.psnr;
    sum_ssim += rep.ssim;
    sum_mse += rep.mse;
    sum_agg += rep.aggregate2;
    ++count;
  }
  if (count == 0) {
    std::cerr << "no views in split '" << a.split << "'\n";
    return kExitIo;
  }

  json report{{"split", a.split},
              {"views", per_view},
              {"mean",
               json{{"psnr", sum_psnr / count},
                    {"ssim", sum_ssim / count},
                    {"mse", sum_mse / count},
                    {"aggregate2", sum_agg / count}}},
              {"aggregate2_note",
               "geometric mean of MSE and sqrt(1-SSIM); no perceptual term"}};
  if (dmae_count > 0) report["mean"]["depth_mae"] = sum_dmae / dmae_count;

  svrf::detail::write_text_atomic((fs::path(a.out) / "metrics.json").string(),
                                  report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-view radiance field toolkit"};
  app.require_subcommand(1);

  MakeSceneArgs ms;
  auto* cmd_ms = app.add_subcommand("make-scene", "render a synthetic ground-truth dataset");
  cmd_ms->add_option("--scene", ms.scene, "bundled scene name")->required();
  cmd_ms->add_option("--inputs", ms.inputs, "number of input views");
  cmd_ms->add_option("--tests", ms.tests, "number of held-out test views");
  cmd_ms->add_option("--out", ms.out, "output directory")->required();
  cmd_ms->add_option("--res", ms.resolution, "image resolution");
  cmd_ms->add_option("--n-dense", ms.n_dense, "oracle samples per ray");
  cmd_ms->add_option("--seed", ms.seed, "seed recorded in the manifest");

  TrainFlowArgs tf;
  auto* cmd_tf = app.add_subcommand("train-flow", "train the patch likelihood flow");
  cmd_tf->add_option("--corpus", tf.corpus_dir, "directory of square .png images");
  cmd_tf->add_flag("--bundled-corpus", tf.bundled, "use the procedural texture corpus");
  cmd_tf->add_option("--bundled-count", tf.bundled_count, "bundled corpus image count");
  cmd_tf->add_option("--bundled-size", tf.bundled_size, "bundled corpus image size");
  cmd_tf->add_option("--out", tf.out, "output directory")->required();
  cmd_tf->add_option("--stride", tf.stride, "patch extraction stride");
  cmd_tf->add_option("--max-patches", tf.max_patches, "cap on extracted patches (0 = all)");
  cmd_tf->add_option("--patch-size", tf.flow.patch_size, "patch edge length");
  cmd_tf->add_option("--layers", tf.flow.coupling_layers, "coupling layer count");
  cmd_tf->add_option("--hidden", tf.flow.hidden_width, "coupling net width");
  cmd_tf->add_option("--steps", tf.train.steps, "training steps");
  cmd_tf->add_option("--batch", tf.train.batch, "patches per step");
  cmd_tf->add_option("--lr-init", tf.train.lr_init, "initial learning rate");
  cmd_tf->add_option("--lr-final", tf.train.lr_final, "final learning rate");
  cmd_tf->add_option("--holdout", tf.train.holdout_fraction, "held-out fraction");
  cmd_tf->add_option("--min-patches", tf.train.min_patches, "required corpus size");
  cmd_tf->add_option("--seed", tf.train.seed, "training seed");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "optimize a radiance field on a dataset");
  cmd_tr->add_option("--dataset", tr.dataset, "dataset.json path")->required();
  cmd_tr->add_option("--flow", tr.flow_path, "flow checkpoint for color regularization");
  cmd_tr->add_option("--config", tr.config_path, "JSON config file (flags win)");
  cmd_tr->add_option("--out", tr.out, "output directory")->required();
  cmd_tr->add_flag("--no-ds", tr.no_ds, "disable depth smoothness");
  cmd_tr->add_flag("--no-nll", tr.no_nll, "disable color likelihood");
  cmd_tr->add_flag("--no-anneal", tr.no_anneal, "disable sample-space annealing");
  cmd_tr->add_flag("--opacity-reg", tr.opacity_reg, "enable the opacity regularizer");
  cmd_tr->add_option("--samples", tr.cfg.samples_per_ray, "samples per ray");
  cmd_tr->add_option("--batch", tr.cfg.batch_rays, "rays per step");
  cmd_tr->add_option("--patches", tr.cfg.patches_per_step, "virtual patches per step");
  cmd_tr->add_option("--lambda-ds", tr.cfg.lambda_ds, "depth smoothness weight");
  cmd_tr->add_option("--lambda-nll", tr.cfg.lambda_nll, "color likelihood weight");
  cmd_tr->add_option("--lambda-opacity", tr.cfg.lambda_opacity, "opacity regularizer weight");
  cmd_tr->add_option("--lr-init", tr.cfg.lr_init, "initial learning rate");
  cmd_tr->add_option("--lr-final", tr.cfg.lr_final, "final learning rate");
  cmd_tr->add_option("--clip-value", tr.cfg.clip_value, "gradient value clip");
  cmd_tr->add_option("--clip-norm", tr.cfg.clip_norm, "gradient norm clip");
  cmd_tr->add_option("--anneal-iters", tr.cfg.anneal_iters, "iterations to full range");
  cmd_tr->add_option("--anneal-start", tr.cfg.anneal_start, "start fraction in (0,1]");
  cmd_tr->add_option("--pixel-epochs", tr.cfg.pixel_epochs, "passes over input pixels");
  cmd_tr->add_option("--seed", tr.cfg.seed, "training seed");
  cmd_tr->add_option("--width", tr.cfg.field.hidden_width, "field hidden width");
  cmd_tr->add_option("--depth-layers", tr.cfg.field.hidden_layers, "field hidden layers");
  cmd_tr->add_option("--pos-bands", tr.cfg.field.encoding.position_bands,
                     "position frequency bands");
  cmd_tr->add_option("--dir-bands", tr.cfg.field.encoding.direction_bands,
                     "direction frequency bands");
  bool point_encoding = false;
  cmd_tr->add_flag("--point-encoding", point_encoding,
                   "plain point encoding instead of the integrated one");
  cmd_tr->add_option("--log-every", tr.cfg.log_every, "iterations between log rows");
  cmd_tr->add_option("--checkpoint-every", tr.cfg.checkpoint_every,
                     "iterations between checkpoints (0 = final only)");
  cmd_tr->add_option("--eval-every", tr.cfg.eval_every,
                     "iterations between test renders (0 = final only)");

  RenderArgs rd;
  auto* cmd_rd = app.add_subcommand("render", "render views from a checkpoint");
  cmd_rd->add_option("--checkpoint", rd.checkpoint, "field checkpoint")->required();
  cmd_rd->add_option("--dataset", rd.dataset, "dataset.json providing poses");
  cmd_rd->add_option("--split", rd.split, "input or test");
  cmd_rd->add_option("--poses", rd.poses_path, "explicit pose file");
  cmd_rd->add_option("--out", rd.out, "output directory")->required();
  cmd_rd->add_option("--samples", rd.samples, "samples per ray");
  cmd_rd->add_option("--threads", rd.threads, "render threads (default SVRF_THREADS or 1)");

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand("eval", "compare renders against ground truth");
  cmd_ev->add_option("--renders", ev.renders, "render directory")->required();
  cmd_ev->add_option("--dataset", ev.dataset, "dataset.json path")->required();
  cmd_ev->add_option("--split", ev.split, "input or test");
  cmd_ev->add_option("--out", ev.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitArgs;
  }

  try {
    if (cmd_ms->parsed()) return run_make_scene(ms);
    if (cmd_tf->parsed()) return run_train_flow(tf);
    if (cmd_tr->parsed()) {
      // config file first, then explicit flags override it
      if (!tr.config_path.empty()) {
        if (!fs::exists(tr.config_path)) {
          std::cerr << "config file not found: " << tr.config_path << "\n";
          return kExitIo;
        }
        svrf::TrainConfig from_file;
        std::ifstream f(tr.config_path);
        train_config_from_json(json::parse(f), from_file);
        TrainArgs merged = tr;
        merged.cfg = from_file;
        auto take = [&](const std::string& flag, auto member) {
          if (cmd_tr->count(flag)) merged.cfg.*member = tr.cfg.*member;
        };
        take("--samples", &svrf::TrainConfig::samples_per_ray);
        take("--batch", &svrf::TrainConfig::batch_rays);
        take("--patches", &svrf::TrainConfig::patches_per_step);
        take("--lambda-ds", &svrf::TrainConfig::lambda_ds);
        take("--lambda-nll", &svrf::TrainConfig::lambda_nll);
        take("--lambda-opacity", &svrf::TrainConfig::lambda_opacity);
        take("--lr-init", &svrf::TrainConfig::lr_init);
        take("--lr-final", &svrf::TrainConfig::lr_final);
        take("--clip-value", &svrf::TrainConfig::clip_value);
        take("--clip-norm", &svrf::TrainConfig::clip_norm);
        take("--anneal-iters", &svrf::TrainConfig::anneal_iters);
        take("--anneal-start", &svrf::TrainConfig::anneal_start);
        take("--pixel-epochs", &svrf::TrainConfig::pixel_epochs);
        take("--seed", &svrf::TrainConfig::seed);
        take("--log-every", &svrf::TrainConfig::log_every);
        take("--checkpoint-every", &svrf::TrainConfig::checkpoint_every);
        take("--eval-every", &svrf::TrainConfig::eval_every);
        if (cmd_tr->count("--width")) merged.cfg.field.hidden_width = tr.cfg.field.hidden_width;
        if (cmd_tr->count("--depth-layers"))
          merged.cfg.field.hidden_layers = tr.cfg.field.hidden_layers;
        if (cmd_tr->count("--pos-bands"))
          merged.cfg.field.encoding.position_bands = tr.cfg.field.encoding.position_bands;
        if (cmd_tr->count("--dir-bands"))
          merged.cfg.field.encoding.direction_bands = tr.cfg.field.encoding.direction_bands;
        tr = merged;
      }
      if (point_encoding) tr.cfg.field.encoding.integrated = false;
      return run_train(tr);
    }
    if (cmd_rd->parsed()) return run_render(rd);
    if (cmd_ev->parsed()) return run_eval(ev);
  } catch (const svrf::TrainingDiverged& e) {
    std::cerr << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return kExitArgs;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitIo;
  }
  return kExitArgs;
}

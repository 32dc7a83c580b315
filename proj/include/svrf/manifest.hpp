// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "svrf/geometry.hpp"
#include "svrf/image.hpp"

namespace svrf {

using nlohmann::json;

// ---- dataset manifest (dataset.json) ----

struct ViewRecord {
  std::string id;
  std::string file;          // relative to the manifest directory
  std::string depth_file;    // optional
  std::string opacity_file;  // optional
  CameraPose pose;
  CameraIntrinsics intrinsics;
};

struct DatasetManifest {
  double t_near = 0.0;
  double t_far = 0.0;
  bool white_background = false;
  std::string scene;
  std::vector<ViewRecord> views;
  std::vector<std::string> input_ids;
  std::vector<std::string> test_ids;

  const ViewRecord& view(const std::string& id) const {
    for (const auto& v : views)
      if (v.id == id) return v;
    throw std::runtime_error("dataset: no view with id '" + id + "'");
  }
};

namespace detail {

inline json pose_to_json(const CameraPose& p) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rows.push_back(p.rotation(r, c));
    rows.push_back(p.translation[r]);
  }
  return rows;
}

inline CameraPose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 12)
    throw std::runtime_error("dataset: pose must be a 12-element row-major [R|t]");
  CameraPose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j[r * 4 + c].get<double>();
    p.translation[r] = j[r * 4 + 3].get<double>();
  }
  return p;
}

inline json intrinsics_to_json(const CameraIntrinsics& in) {
  return json{{"focal_x", in.focal_x},         {"focal_y", in.focal_y},
              {"principal_x", in.principal_x}, {"principal_y", in.principal_y},
              {"width", in.width},             {"height", in.height}};
}

inline CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics in;
  in.focal_x = j.at("focal_x").get<double>();
  in.focal_y = j.at("focal_y").get<double>();
  in.principal_x = j.at("principal_x").get<double>();
  in.principal_y = j.at("principal_y").get<double>();
  in.width = j.at("width").get<int>();
  in.height = j.at("height").get<int>();
  return in;
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void save_dataset_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["format"] = "svrf-dataset-v1";
  j["near"] = m.t_near;
  j["far"] = m.t_far;
  j["white_background"] = m.white_background;
  j["scene"] = m.scene;
  json views = json::array();
  for (const auto& v : m.views) {
    json rec;
    rec["id"] = v.id;
    rec["file"] = v.file;
    if (!v.depth_file.empty()) rec["depth_file"] = v.depth_file;
    if (!v.opacity_file.empty()) rec["opacity_file"] = v.opacity_file;
    rec["pose"] = detail::pose_to_json(v.pose);
    rec["intrinsics"] = detail::intrinsics_to_json(v.intrinsics);
    views.push_back(rec);
  }
  j["images"] = views;
  j["splits"] = json{{"input", m.input_ids}, {"test", m.test_ids}};
  detail::write_text_atomic(path, j.dump(2) + "\n");
}

inline DatasetManifest load_dataset_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open dataset manifest: " + path);
  json j = json::parse(f);
  DatasetManifest m;
  m.t_near = j.at("near").get<double>();
  m.t_far = j.at("far").get<double>();
  m.white_background = j.value("white_background", false);
  m.scene = j.value("scene", std::string{});
  for (const auto& rec : j.at("images")) {
    ViewRecord v;
    v.id = rec.at("id").get<std::string>();
    v.file = rec.at("file").get<std::string>();
    v.depth_file = rec.value("depth_file", std::string{});
    v.opacity_file = rec.value("opacity_file", std::string{});
    v.pose = detail::pose_from_json(rec.at("pose"));
    v.intrinsics = detail::intrinsics_from_json(rec.at("intrinsics"));
    m.views.push_back(std::move(v));
  }
  m.input_ids = j.at("splits").at("input").get<std::vector<std::string>>();
  m.test_ids = j.at("splits").at("test").get<std::vector<std::string>>();
  return m;
}

/// Manifest plus decoded images, rooted at the manifest's directory.
struct Dataset {
  DatasetManifest manifest;
  std::string base_dir;
  std::vector<Image> images;  // parallel to manifest.views

  int view_index(const std::string& id) const {
    for (std::size_t i = 0; i < manifest.views.size(); ++i)
      if (manifest.views[i].id == id) return static_cast<int>(i);
    throw std::runtime_error("dataset: no view with id '" + id + "'");
  }

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(base_dir) / rel).string();
  }

  std::int64_t total_input_pixels() const {
    std::int64_t n = 0;
    for (const auto& id : manifest.input_ids) {
      const auto& v = manifest.views[view_index(id)];
      n += static_cast<std::int64_t>(v.intrinsics.width) * v.intrinsics.height;
    }
    return n;
  }
};

inline Dataset load_dataset(const std::string& manifest_path) {
  Dataset d;
  d.manifest = load_dataset_manifest(manifest_path);
  d.base_dir = std::filesystem::path(manifest_path).parent_path().string();
  d.images.reserve(d.manifest.views.size());
  for (const auto& v : d.manifest.views) d.images.push_back(read_png(d.resolve(v.file)));
  return d;
}

// ---- run manifest (manifest.json in every output directory) ----

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot hash missing file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

/// Wall-clock seconds, overridable through SOURCE_DATE_EPOCH for
/// byte-reproducible runs.
inline std::int64_t manifest_timestamp() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end && *end == '\0') return v;
  }
  return static_cast<std::int64_t>(std::time(nullptr));
}

/// Written atomically into `out_dir` before a command starts doing work.
inline std::string write_run_manifest(const std::string& out_dir,
                                      const std::string& command, const json& config,
                                      std::uint64_t seed,
                                      const std::vector<std::string>& input_files,
                                      const std::vector<std::string>& output_files) {
  std::filesystem::create_directories(out_dir);
  json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["created_unix"] = manifest_timestamp();
  json inputs = json::object();
  for (const auto& p : input_files) inputs[p] = hash_file(p);
  j["inputs"] = inputs;
  j["outputs"] = output_files;
  const std::string path = (std::filesystem::path(out_dir) / "manifest.json").string();
  detail::write_text_atomic(path, j.dump(2) + "\n");
  return path;
}

}  // namespace svrf

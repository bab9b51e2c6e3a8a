#include "osp3d/dataset.hpp"

#include <cstdio>
#include <json.hpp>

#include "osp3d/io.hpp"
#include "osp3d/masks.hpp"

namespace osp3d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json camera_json(const Camera& c) {
  json rot = json::array(), t = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
  for (int k = 0; k < 3; ++k) t.push_back(c.translation[k]);
  return {{"fx", c.fx},         {"fy", c.fy},         {"cx", c.cx},
          {"cy", c.cy},         {"width", c.width},   {"height", c.height},
          {"rotation", rot},    {"translation", t},   {"view_id", c.view_id}};
}

Camera camera_from_json(const json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const auto& rot = j.at("rotation");
  const auto& t = j.at("translation");
  require(rot.size() == 9 && t.size() == 3, ErrorCode::kFormat,
          "camera: rotation needs 9 and translation 3 values");
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[3 * r + k].get<double>();
  for (int k = 0; k < 3; ++k) c.translation[k] = t[k].get<double>();
  c.view_id = j.value("view_id", 0);
  c.validate();
  return c;
}

json parse_manifest(const fs::path& manifest) {
  try {
    return json::parse(read_text_file(manifest));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, manifest.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<View> load_dataset(const fs::path& manifest) {
  const json j = parse_manifest(manifest);
  const fs::path dir = manifest.parent_path();
  std::vector<View> views;
  try {
    for (const auto& v : j.at("views")) {
      View view;
      view.camera = camera_from_json(v.at("camera"));
      if (v.contains("image")) {
        view.image = load_rgb(dir / v["image"].get<std::string>());
        require(view.image.width == view.camera.width && view.image.height == view.camera.height,
                ErrorCode::kFormat, "dataset: image size does not match camera");
      }
      if (v.contains("mask") && !v["mask"].is_null()) {
        view.mask = load_view_masks(dir / v["mask"].get<std::string>());
        require(view.mask.width == view.camera.width && view.mask.height == view.camera.height,
                ErrorCode::kFormat, "dataset: mask size does not match camera");
      }
      views.push_back(std::move(view));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, manifest.string() + ": " + e.what());
  }
  return views;
}

std::vector<Camera> load_cameras(const fs::path& manifest) {
  const json j = parse_manifest(manifest);
  std::vector<Camera> cams;
  try {
    for (const auto& v : j.at("views")) cams.push_back(camera_from_json(v.at("camera")));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, manifest.string() + ": " + e.what());
  }
  return cams;
}

void save_dataset(const std::vector<View>& views, const fs::path& manifest,
                  const std::string& prefix) {
  const fs::path dir = manifest.parent_path();
  json list = json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03zu", prefix.c_str(), i);
    json v = {{"camera", camera_json(views[i].camera)}};
    if (!views[i].image.empty()) {
      save_ppm(views[i].image, dir / (std::string(name) + ".ppm"));
      v["image"] = std::string(name) + ".ppm";
    }
    if (!views[i].mask.empty()) {
      save_view_masks(views[i].mask, dir / (std::string(name) + "_mask.pgm"));
      v["mask"] = std::string(name) + "_mask.pgm";
    }
    list.push_back(v);
  }
  write_text_file(manifest, json{{"views", list}}.dump(1) + "\n");
}

}  // namespace osp3d

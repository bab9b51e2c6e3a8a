#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "osp3d/image.hpp"
#include "osp3d/scene.hpp"

namespace osp3d {

// One training/evaluation view.
struct View {
  Camera camera;
  ImageD image;  // RGB in [0,1]
  IdMap mask;    // empty when the view carries no instance masks
};

// Scene manifest JSON:
// {"views": [{"image": "...", "mask": "...", "camera": {"fx","fy","cx","cy",
//   "width","height","rotation":[9 row-major],"translation":[3],"view_id"}}]}
// Paths are relative to the manifest's directory.
std::vector<View> load_dataset(const std::filesystem::path& manifest);
// Writes images as PPM, masks as 16-bit PGM and the manifest.
void save_dataset(const std::vector<View>& views, const std::filesystem::path& manifest,
                  const std::string& prefix = "view");

std::vector<Camera> load_cameras(const std::filesystem::path& manifest);

}  // namespace osp3d

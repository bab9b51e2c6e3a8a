#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "osp3d/dataset.hpp"
#include "osp3d/eval.hpp"
#include "osp3d/scene.hpp"

namespace osp3d {

struct SynthOptions {
  int objects = 3;
  int train_views = 40;
  int test_views = 8;
  int width = 64;
  int height = 64;
  int gaussians_per_object = 400;
  int init_points_per_object = 120;
  double init_noise = 0.01;       // std dev of the init point jitter (scene units)
  int gt_points_per_object = 300;
  int oversegment = 1;            // split each training mask into up to this many parts
  int erode = 0;                  // erosion iterations applied to training masks
  int feature_dim = 8;
  int sh_degree = 1;
  std::uint64_t seed = 0;
};

struct SyntheticObject {
  std::string shape;  // "ellipsoid" or "box"
  std::string color;  // lexicon colour name
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Zero();
  double yaw = 0.0;
};

struct SyntheticScene {
  GaussianCloud cloud;          // ground-truth Gaussians
  std::vector<int> labels;      // object index per Gaussian
  std::vector<SyntheticObject> objects;
  std::vector<View> train;      // masks possibly corrupted per the options
  std::vector<View> test;       // exact ground-truth masks
  std::vector<Eigen::Vector3d> init_points, init_colors;
  LabeledPointCloud gt_points;  // instance = object index, semantic = colour index
};

// Colour palette used for objects, in assignment order.
const std::vector<std::pair<std::string, std::array<double, 3>>>& synth_palette();

SyntheticScene synth_generate(const SynthOptions& options);

// Directory layout: train.json / test.json (dataset manifests with images and
// masks), gt_cloud.osp3, gt_labels.csv, gt_points.csv, init_points.ply and
// scene.json describing the objects.
void save_synthetic_scene(const SyntheticScene& scene, const std::filesystem::path& dir);

// Points and colours of an ASCII PLY point cloud (colour from red/green/blue
// or the SH DC term).
void load_point_cloud(const std::filesystem::path& ply, std::vector<Eigen::Vector3d>& points,
                      std::vector<Eigen::Vector3d>& colors);

// Splits every instance of `ids` into up to `parts` pieces along a random
// direction (equal pixel counts), keeping the union. Returns renumbered ids.
IdMap oversegment_ids(const IdMap& ids, int parts, std::uint64_t seed);
// Removes `iterations` pixels of boundary from every instance region.
IdMap erode_ids(const IdMap& ids, int iterations);

}  // namespace osp3d

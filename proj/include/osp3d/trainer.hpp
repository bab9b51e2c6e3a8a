#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "osp3d/config.hpp"
#include "osp3d/dataset.hpp"
#include "osp3d/losses.hpp"
#include "osp3d/scene.hpp"

namespace osp3d {

enum ParamGroup { kGroupMeans, kGroupRotations, kGroupScales, kGroupOpacity, kGroupSh,
                  kGroupFeatures, kGroupCount };

struct OptimizerState {
  int step = 0;
  int total_steps = 1;        // horizon of the positional learning-rate decay
  double scene_extent = 1.0;  // clone/split scale boundary is percent_dense * extent
  std::array<std::vector<double>, kGroupCount> m, v;
  std::array<double, kGroupCount> lr{};

  // Densification statistics.
  std::vector<double> grad_accum;
  std::vector<int> grad_count;

  double last_grad_norm = 0.0;  // 2-norm of the last step's full gradient
  std::mt19937_64 rng;

  OptimizerState() = default;
  OptimizerState(const GaussianCloud& cloud, const SceneConfig& config);

  double means_lr() const;
  // Checks the invariant that every array tracks the cloud's row count.
  bool tracks(const GaussianCloud& cloud) const;

 private:
  double lr_means_final_ = 0.0;
};

// One render -> losses -> backward -> Adam update on `view`. Throws
// kNonFinite (with iteration, view id and term) if any loss term is not
// finite; the cloud is left untouched in that case.
LossReport train_step(GaussianCloud& cloud, const View& view, const SceneConfig& config,
                      OptimizerState& state);

struct DensifyStats {
  std::size_t cloned = 0, split = 0, pruned = 0;
};

// Clone/split on the mean accumulated 2D positional gradient, then prune
// low-opacity rows. Resets the gradient statistics.
DensifyStats densify_and_prune(GaussianCloud& cloud, OptimizerState& state,
                               const SceneConfig& config);

// Radius of the camera centers around their mean, times 1.1.
double camera_extent(const std::vector<View>& views);

// Cloud initialized from points: isotropic scales from the mean distance to
// the three nearest neighbours, opacity 0.1, SH DC from colour (RGB in
// [0,1], may be empty for grey), features uniform in +-feature_init_range.
GaussianCloud init_cloud_from_points(const std::vector<Eigen::Vector3d>& points,
                                     const std::vector<Eigen::Vector3d>& colors,
                                     const SceneConfig& config);

struct TrainOutputs {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path log_csv;         // empty: no CSV
  std::string config_hash;
  std::function<void(int iteration, const LossReport&, std::size_t gaussians)> progress;
};

struct TrainResult {
  GaussianCloud cloud;
  std::vector<LossReport> history;
  std::vector<int> view_order;  // view index used at each iteration
};

TrainResult optimize_scene(const std::vector<View>& views, const GaussianCloud& init,
                           const SceneConfig& config, const TrainOutputs& outputs = {});

}  // namespace osp3d

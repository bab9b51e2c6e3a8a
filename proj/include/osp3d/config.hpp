#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "osp3d/rasterizer.hpp"

namespace osp3d {

// Every tunable of the pipeline. Field names follow the config-file keys.
struct SceneConfig {
  // [scene]
  int feature_dim = 8;
  int sh_degree = 1;

  // [losses]
  double beta = 0.2;             // SSIM weight inside the RGB loss
  double lambda_inst2d = 0.1;
  double lambda_var = 0.5;
  double w_pos = 1.0;
  double w_neg = 1.0;
  double gamma = 1.0;            // margin on squared prototype distance
  bool variance_full_gradient = false;

  // [trainer]
  int iterations = 3000;
  double lr_means = 1.6e-4;
  double lr_means_final = 1.6e-6;
  double lr_features = 2.5e-3;
  double lr_opacity = 5e-2;
  double lr_scales = 5e-3;
  double lr_rotations = 1e-3;
  double lr_sh = 2.5e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;
  double densify_grad_threshold = 4e-4;
  int densify_from = 500;
  int densify_until = 15000;
  int densify_interval = 100;
  double prune_opacity = 0.005;
  double percent_dense = 0.01;
  double split_scale_divisor = 1.6;
  int max_gaussians = 60000;
  double feature_init_range = 0.05;
  int checkpoint_interval = 0;   // 0 = only the final checkpoint
  std::uint64_t seed = 0;
  bool f64 = false;              // 64-bit deterministic mode

  // [rasterizer]
  double alpha_min = 1.0 / 255.0;
  double alpha_max = 0.99;
  double transmittance_min = 1e-4;

  // [clustering]
  int min_cluster_size = 0;      // 0 = max(50, 0.1% of N)
  int min_samples = 10;
  bool allow_single_cluster = false;

  // [language]
  int top_k = 5;
  int zoom_levels = 3;
  double expansion_ratio = 0.3;
  double silhouette_threshold = 0.5;
  double query_threshold = 0.0;  // 0 = top-1 only

  // [eval]
  double macc_tau = 0.25;
  double ioa_threshold = 0.75;
  int smooth_k = 16;
  double smooth_merge_threshold = 0.02;  // scene-diagonal units
  double biou_radius_fraction = 0.02;

  // [masks]
  double mask_iou_weight = 1.0;
  double mask_stability_weight = 1.0;

  // Throws kInvalidParameter on out-of-range values.
  void validate() const;

  RenderSettings render_settings() const;
};

// Config file: INI sections mirroring the groups above, "key = value" lines,
// '#' or ';' comments. Unknown sections or keys and unparsable values throw
// kUsage. Keys not present keep their current value.
void apply_config_text(SceneConfig& config, const std::string& text);
SceneConfig load_config(const std::filesystem::path& path);

// Sets one key, e.g. ("losses", "lambda_var", "0.5"). Throws kUsage.
void set_config_value(SceneConfig& config, const std::string& section, const std::string& key,
                      const std::string& value);

// Applies OSP3D_<SECTION>_<KEY> environment variables (upper case), e.g.
// OSP3D_LOSSES_LAMBDA_VAR=0.01. Returns the names that were applied.
std::vector<std::string> apply_env_overrides(SceneConfig& config);

// Canonical INI text with every key, and its git-style content hash.
std::string config_to_ini(const SceneConfig& config);
std::string config_hash(const SceneConfig& config);

}  // namespace osp3d

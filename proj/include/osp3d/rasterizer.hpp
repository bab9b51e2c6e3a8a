#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "osp3d/image.hpp"
#include "osp3d/scene.hpp"

namespace osp3d {

enum class Precision { kF32, kF64 };

namespace channel {
inline constexpr unsigned kColor = 1u << 0;
inline constexpr unsigned kFeature = 1u << 1;
inline constexpr unsigned kVariance = 1u << 2;  // implies kFeature
inline constexpr unsigned kAlpha = 1u << 3;
inline constexpr unsigned kDepth = 1u << 4;
inline constexpr unsigned kAll = kColor | kFeature | kVariance | kAlpha | kDepth;
}  // namespace channel

inline constexpr int kTileSize = 16;

struct RenderSettings {
  Precision precision = Precision::kF32;
  double alpha_min = 1.0 / 255.0;     // splats below this are skipped
  double alpha_max = 0.99;            // per-splat clamp
  double transmittance_min = 1e-4;    // stop once T falls below this
  double cutoff_sigma = 3.0;          // splat footprint radius in std devs
  double near_plane = kNearPlane;
  // false: the variance channel back-propagates into features only, with the
  // compositing weights held constant.
  bool variance_full_gradient = false;

  // 64-bit settings with every hard cutoff disabled, so the rendered maps are
  // smooth functions of the parameters. Used for finite-difference checks.
  static RenderSettings smooth_f64();
};

namespace detail {
struct RenderState;
}

struct RenderOutput {
  int width = 0;
  int height = 0;
  int feature_dim = 0;
  unsigned channels = 0;

  ImageD color;       // H x W x 3
  ImageD feature;     // H x W x d
  ImageD feature_sq;  // H x W x d, composited f^2
  ImageD variance;    // H x W x d, feature_sq - feature^2
  ImageD alpha;       // H x W, accumulated opacity
  ImageD depth;       // H x W, sum of w_n * z_n
  Image<std::int32_t> contrib_count;

  // Per Gaussian: projected mean inside the viewport with depth > near plane.
  std::vector<std::uint8_t> in_viewport;

  // Sorted splat lists kept for render_backward.
  std::shared_ptr<const detail::RenderState> state;
};

// Gradients with the same layout as the GaussianCloud arrays.
struct RenderGrads {
  std::vector<double> means, rotations, log_scales, opacity_logits, sh_coeffs, features;
  // Per Gaussian |dL/d mean2d| in normalized device units (densification stat).
  std::vector<double> mean2d_norm;
  std::vector<std::uint8_t> rendered;  // Gaussian touched at least one tile

  void resize_like(const GaussianCloud& cloud);
  void add_scaled(const RenderGrads& other, double scale);
};

// Upstream dL/d(map). Empty images are treated as zero.
struct RenderUpstream {
  ImageD color, feature, variance, alpha, depth;
};

RenderOutput render(const GaussianCloud& cloud, const Camera& camera,
                    unsigned channels = channel::kAll,
                    const RenderSettings& settings = {});

RenderGrads render_backward(const GaussianCloud& cloud, const Camera& camera,
                            const RenderOutput& output, const RenderUpstream& upstream,
                            const RenderSettings& settings = {});

// Binary silhouette of one instance. With occlusion, members composite 1 and
// everyone else composites 0; without it, only members are rendered and the
// accumulated alpha is thresholded. Throws kEmptySelection for unknown ids.
Mask render_instance_silhouette(const GaussianCloud& cloud, const std::vector<int>& labels,
                                int instance, const Camera& camera, bool respect_occlusion,
                                double threshold = 0.5, const RenderSettings& settings = {});

// Number of rows whose projected mean lands in the viewport with positive depth.
std::size_t count_in_viewport(const GaussianCloud& cloud, const std::vector<std::size_t>& rows,
                              const Camera& camera, double near_plane = kNearPlane);

// Occlusion-respecting instance id map: each pixel takes the label whose
// members carry the largest composited weight, written as label + 1. Pixels
// with accumulated alpha below `alpha_threshold` stay 0. Labels < 0 never win.
IdMap render_instance_ids(const GaussianCloud& cloud, const std::vector<int>& labels,
                          const Camera& camera, double alpha_threshold = 0.5,
                          const RenderSettings& settings = {});

}  // namespace osp3d

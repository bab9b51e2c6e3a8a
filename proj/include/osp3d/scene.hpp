#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace osp3d {

constexpr int kMaxShDegree = 3;

inline constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

// Structure-of-arrays Gaussian cloud. Storage is always double; the rasterizer
// converts to its compute precision.
struct GaussianCloud {
  int feature_dim = 8;
  int sh_degree = 1;

  std::vector<double> means;           // N x 3
  std::vector<double> rotations;       // N x 4, (w, x, y, z), normalized on use
  std::vector<double> log_scales;      // N x 3
  std::vector<double> opacity_logits;  // N
  std::vector<double> sh_coeffs;       // N x 3 x B, channel-major per Gaussian
  std::vector<double> features;        // N x d

  GaussianCloud() = default;
  GaussianCloud(std::size_t n, int feature_dim, int sh_degree);

  std::size_t size() const { return opacity_logits.size(); }
  bool empty() const { return opacity_logits.empty(); }
  int sh_basis() const { return sh_basis_count(sh_degree); }

  void resize(std::size_t n);
  // Appends row `i` of `src` (which must share d and SH degree).
  void append_row(const GaussianCloud& src, std::size_t i);
  // Keeps rows whose keep[i] is true, preserving order.
  void filter(const std::vector<bool>& keep);
  GaussianCloud subset(const std::vector<std::size_t>& rows) const;

  Eigen::Vector3d mean(std::size_t i) const {
    return {means[3 * i], means[3 * i + 1], means[3 * i + 2]};
  }
  double opacity(std::size_t i) const;

  // Throws kInvalidParameter when array lengths disagree or values are
  // non-finite.
  void validate() const;
};

// Pinhole camera with a world-to-camera rigid transform.
struct Camera {
  double fx = 100.0, fy = 100.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int view_id = 0;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation * world + translation;
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  void validate() const;

  // Camera at `eye` looking at `target`; +y of the image points down.
  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double fx, double fy, int width,
                        int height, int view_id = 0);
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Rotation matrix of a quaternion (w, x, y, z); throws on zero norm.
Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q);

// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Eigen::Matrix3d build_covariance(const Eigen::Vector4d& rotation,
                                 const Eigen::Vector3d& log_scale);

// Real SH basis values up to `degree` for a unit direction; out has
// sh_basis_count(degree) entries.
void sh_basis(int degree, const Eigen::Vector3d& dir, double* out);

// RGB from coefficients laid out 3 x B; direction normalized internally.
// Result is clamped at zero after the +0.5 offset.
Eigen::Vector3d sh_eval(int degree, const double* coeffs, const Eigen::Vector3d& view_dir);

struct Projection {
  Eigen::Vector2d mean2d;
  Eigen::Matrix2d cov2d;  // includes the anti-aliasing dilation
  double depth = 0.0;
};

constexpr double kNearPlane = 0.01;
constexpr double kCovDilation = 0.3;

// EWA projection of a 3D Gaussian; nullopt when culled (depth <= near plane).
std::optional<Projection> project_gaussian(const Eigen::Vector3d& mean,
                                           const Eigen::Matrix3d& covariance,
                                           const Camera& camera,
                                           double near_plane = kNearPlane);

}  // namespace osp3d

#include "osp3d/scene.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "osp3d/detail/sh_basis.hpp"
#include "osp3d/error.hpp"

namespace osp3d {

GaussianCloud::GaussianCloud(std::size_t n, int d, int degree)
    : feature_dim(d), sh_degree(degree) {
  require(d >= 1, ErrorCode::kInvalidParameter, "feature dimension must be >= 1");
  require(degree >= 0 && degree <= kMaxShDegree, ErrorCode::kInvalidParameter,
          "SH degree must be in [0, 3]");
  resize(n);
}

void GaussianCloud::resize(std::size_t n) {
  means.resize(3 * n, 0.0);
  const std::size_t old = rotations.size() / 4;
  rotations.resize(4 * n, 0.0);
  for (std::size_t i = old; i < n; ++i) rotations[4 * i] = 1.0;
  log_scales.resize(3 * n, 0.0);
  opacity_logits.resize(n, 0.0);
  sh_coeffs.resize(3 * sh_basis() * n, 0.0);
  features.resize(static_cast<std::size_t>(feature_dim) * n, 0.0);
}

namespace {
template <class V>
void append_block(V& dst, const V& src, std::size_t i, std::size_t width) {
  dst.insert(dst.end(), src.begin() + i * width, src.begin() + (i + 1) * width);
}
}  // namespace

void GaussianCloud::append_row(const GaussianCloud& src, std::size_t i) {
  require(src.feature_dim == feature_dim && src.sh_degree == sh_degree,
          ErrorCode::kContractViolation, "append_row: layout mismatch");
  append_block(means, src.means, i, 3);
  append_block(rotations, src.rotations, i, 4);
  append_block(log_scales, src.log_scales, i, 3);
  append_block(opacity_logits, src.opacity_logits, i, 1);
  append_block(sh_coeffs, src.sh_coeffs, i, 3 * sh_basis());
  append_block(features, src.features, i, feature_dim);
}

namespace {
void filter_block(std::vector<double>& v, const std::vector<bool>& keep, std::size_t width) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    if (out != i)
      std::copy(v.begin() + i * width, v.begin() + (i + 1) * width, v.begin() + out * width);
    ++out;
  }
  v.resize(out * width);
}
}  // namespace

void GaussianCloud::filter(const std::vector<bool>& keep) {
  require(keep.size() == size(), ErrorCode::kContractViolation, "filter: mask length");
  filter_block(means, keep, 3);
  filter_block(rotations, keep, 4);
  filter_block(log_scales, keep, 3);
  filter_block(opacity_logits, keep, 1);
  filter_block(sh_coeffs, keep, 3 * sh_basis());
  filter_block(features, keep, feature_dim);
}

GaussianCloud GaussianCloud::subset(const std::vector<std::size_t>& rows) const {
  GaussianCloud out(0, feature_dim, sh_degree);
  for (std::size_t r : rows) out.append_row(*this, r);
  return out;
}

double GaussianCloud::opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }

void GaussianCloud::validate() const {
  const std::size_t n = size();
  require(feature_dim >= 1, ErrorCode::kInvalidParameter, "feature dimension must be >= 1");
  require(sh_degree >= 0 && sh_degree <= kMaxShDegree, ErrorCode::kInvalidParameter,
          "SH degree must be in [0, 3]");
  require(means.size() == 3 * n && rotations.size() == 4 * n && log_scales.size() == 3 * n &&
              sh_coeffs.size() == 3 * sh_basis() * n &&
              features.size() == static_cast<std::size_t>(feature_dim) * n,
          ErrorCode::kInvalidParameter, "GaussianCloud arrays disagree on N");
  auto finite = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  require(finite(means) && finite(rotations) && finite(opacity_logits) &&
              finite(sh_coeffs) && finite(features),
          ErrorCode::kInvalidParameter, "GaussianCloud contains non-finite values");
  for (double s : log_scales)
    require(std::isfinite(s) && std::isfinite(std::exp(s)), ErrorCode::kInvalidParameter,
            "GaussianCloud scale overflow");
  for (std::size_t i = 0; i < n; ++i) {
    const double* q = &rotations[4 * i];
    require(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] > 0.0,
            ErrorCode::kInvalidParameter, "zero-norm quaternion at row " + std::to_string(i));
  }
}

void Camera::validate() const {
  require(width >= 1 && height >= 1, ErrorCode::kInvalidParameter, "camera size must be >= 1");
  require(fx > 0 && fy > 0, ErrorCode::kInvalidParameter, "camera focal length must be > 0");
  const Eigen::Matrix3d err = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
  require(err.cwiseAbs().maxCoeff() < 1e-9, ErrorCode::kInvalidParameter,
          "camera rotation is not orthonormal");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double fx, double fy, int width, int height,
                       int view_id) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  require(right.norm() > 1e-12, ErrorCode::kInvalidParameter, "look_at: up parallel to view");
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = forward;
  cam.translation = -cam.rotation * eye;
  cam.view_id = view_id;
  return cam;
}

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q) {
  const double norm = q.norm();
  require(norm > 0.0, ErrorCode::kInvalidParameter, "zero-norm quaternion");
  const Eigen::Vector4d u = q / norm;
  const double w = u[0], x = u[1], y = u[2], z = u[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Matrix3d build_covariance(const Eigen::Vector4d& rotation,
                                 const Eigen::Vector3d& log_scale) {
  const Eigen::Matrix3d r = quaternion_to_matrix(rotation);
  const Eigen::Matrix3d m = r * log_scale.array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

void sh_basis(int degree, const Eigen::Vector3d& dir, double* out) {
  require(degree >= 0 && degree <= kMaxShDegree, ErrorCode::kInvalidParameter,
          "SH degree must be in [0, 3]");
  detail::sh_basis_eval<double>(degree, dir.x(), dir.y(), dir.z(), out, nullptr);
}

Eigen::Vector3d sh_eval(int degree, const double* coeffs, const Eigen::Vector3d& view_dir) {
  const double n = view_dir.norm();
  require(n > 0.0, ErrorCode::kInvalidParameter, "sh_eval: zero view direction");
  double basis[16];
  sh_basis(degree, view_dir / n, basis);
  const int nb = sh_basis_count(degree);
  Eigen::Vector3d rgb;
  for (int c = 0; c < 3; ++c) {
    double v = 0.5;
    for (int b = 0; b < nb; ++b) v += coeffs[c * nb + b] * basis[b];
    rgb[c] = std::max(0.0, v);
  }
  return rgb;
}

std::optional<Projection> project_gaussian(const Eigen::Vector3d& mean,
                                           const Eigen::Matrix3d& covariance,
                                           const Camera& camera, double near_plane) {
  const Eigen::Vector3d t = camera.to_camera(mean);
  if (t.z() <= near_plane) return std::nullopt;
  const double iz = 1.0 / t.z();
  Eigen::Matrix<double, 2, 3> j;
  j << camera.fx * iz, 0.0, -camera.fx * t.x() * iz * iz,
      0.0, camera.fy * iz, -camera.fy * t.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> tm = j * camera.rotation;
  Projection p;
  p.cov2d = tm * covariance * tm.transpose();
  p.cov2d(0, 0) += kCovDilation;
  p.cov2d(1, 1) += kCovDilation;
  p.mean2d = {camera.fx * t.x() * iz + camera.cx, camera.fy * t.y() * iz + camera.cy};
  p.depth = t.z();
  return p;
}

}  // namespace osp3d

#include "osp3d/rasterizer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "osp3d/detail/sh_basis.hpp"
#include "osp3d/error.hpp"
#include "osp3d/parallel.hpp"

namespace osp3d {

RenderSettings RenderSettings::smooth_f64() {
  RenderSettings s;
  s.precision = Precision::kF64;
  s.alpha_min = 0.0;
  s.transmittance_min = 0.0;
  s.cutoff_sigma = 1e6;
  return s;
}

void RenderGrads::resize_like(const GaussianCloud& cloud) {
  const std::size_t n = cloud.size();
  means.assign(3 * n, 0.0);
  rotations.assign(4 * n, 0.0);
  log_scales.assign(3 * n, 0.0);
  opacity_logits.assign(n, 0.0);
  sh_coeffs.assign(3 * cloud.sh_basis() * n, 0.0);
  features.assign(static_cast<std::size_t>(cloud.feature_dim) * n, 0.0);
  mean2d_norm.assign(n, 0.0);
  rendered.assign(n, 0);
}

void RenderGrads::add_scaled(const RenderGrads& o, double scale) {
  auto axpy = [scale](std::vector<double>& y, const std::vector<double>& x) {
    require(y.size() == x.size(), ErrorCode::kContractViolation, "RenderGrads shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * x[i];
  };
  axpy(means, o.means);
  axpy(rotations, o.rotations);
  axpy(log_scales, o.log_scales);
  axpy(opacity_logits, o.opacity_logits);
  axpy(sh_coeffs, o.sh_coeffs);
  axpy(features, o.features);
}

namespace detail {

template <class T>
struct Splat {
  T mx = 0, my = 0;        // projected mean, pixels
  T ca = 0, cb = 0, cc = 0;  // inverse 2D covariance (a b; b c)
  T opacity = 0;
  T depth = 0;
  T color[3] = {0, 0, 0};
  bool clamped[3] = {false, false, false};
};

struct RenderState {
  Precision precision = Precision::kF32;
  RenderSettings settings;
  int width = 0, height = 0;
  int tiles_x = 0, tiles_y = 0;
  int feature_dim = 0;
  std::size_t gaussian_count = 0;
  std::vector<Splat<float>> splats_f;
  std::vector<Splat<double>> splats_d;
  std::vector<float> features_f;
  std::vector<double> features_d;
  std::vector<std::vector<std::uint32_t>> tile_lists;  // Gaussian ids, front to back
  std::vector<std::uint8_t> rendered;

  template <class T>
  const std::vector<Splat<T>>& splats() const {
    if constexpr (std::is_same_v<T, float>) return splats_f; else return splats_d;
  }
  template <class T>
  const std::vector<T>& features() const {
    if constexpr (std::is_same_v<T, float>) return features_f; else return features_d;
  }
};

}  // namespace detail

namespace {

using detail::RenderState;
using detail::Splat;

template <class T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

template <class T>
Mat3<T> rotation_of(const double* q_raw) {
  Eigen::Matrix<T, 4, 1> q{T(q_raw[0]), T(q_raw[1]), T(q_raw[2]), T(q_raw[3])};
  q /= q.norm();
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<T> r;
  r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
      T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
      T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
  return r;
}

struct TileRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open tile range
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

template <class T>
bool preprocess_one(const GaussianCloud& cloud, std::size_t i, const Camera& cam,
                    const Vec3<T>& cam_center, const RenderSettings& rs, Splat<T>& out,
                    TileRect& rect) {
  const Mat3<T> rc = cam.rotation.cast<T>();
  const Vec3<T> mean(T(cloud.means[3 * i]), T(cloud.means[3 * i + 1]), T(cloud.means[3 * i + 2]));
  const Vec3<T> t = rc * mean + cam.translation.cast<T>();
  if (!(t.z() > T(rs.near_plane))) return false;

  const Mat3<T> r = rotation_of<T>(&cloud.rotations[4 * i]);
  Vec3<T> s;
  for (int k = 0; k < 3; ++k) s[k] = std::exp(T(cloud.log_scales[3 * i + k]));
  const Mat3<T> m = r * s.asDiagonal();
  const Mat3<T> sigma = m * m.transpose();

  const T fx = T(cam.fx), fy = T(cam.fy);
  const T iz = T(1) / t.z();
  Eigen::Matrix<T, 2, 3> j;
  j << fx * iz, T(0), -fx * t.x() * iz * iz, T(0), fy * iz, -fy * t.y() * iz * iz;
  const Eigen::Matrix<T, 2, 3> tm = j * rc;
  Eigen::Matrix<T, 2, 2> cov = tm * sigma * tm.transpose();
  cov(0, 0) += T(kCovDilation);
  cov(1, 1) += T(kCovDilation);
  const T a = cov(0, 0), b = T(0.5) * (cov(0, 1) + cov(1, 0)), c = cov(1, 1);
  const T det = a * c - b * b;
  if (!(det > T(0))) return false;

  out.mx = fx * t.x() * iz + T(cam.cx);
  out.my = fy * t.y() * iz + T(cam.cy);
  out.ca = c / det;
  out.cb = -b / det;
  out.cc = a / det;
  out.depth = t.z();
  out.opacity = T(1) / (T(1) + std::exp(-T(cloud.opacity_logits[i])));

  const T mid = T(0.5) * (a + c);
  const T lambda = mid + std::sqrt(std::max(T(0.1), mid * mid - det));
  const double radius = std::ceil(rs.cutoff_sigma * std::sqrt(double(lambda)));
  // Pixel x is covered when |x + 0.5 - mx| <= radius.
  const double px0 = std::ceil(double(out.mx) - radius - 0.5);
  const double px1 = std::floor(double(out.mx) + radius - 0.5);
  const double py0 = std::ceil(double(out.my) - radius - 0.5);
  const double py1 = std::floor(double(out.my) + radius - 0.5);
  if (px1 < 0 || py1 < 0 || px0 > cam.width - 1 || py0 > cam.height - 1) return false;
  rect.x0 = static_cast<int>(std::max(0.0, px0)) / kTileSize;
  rect.y0 = static_cast<int>(std::max(0.0, py0)) / kTileSize;
  rect.x1 = static_cast<int>(std::min<double>(cam.width - 1, px1)) / kTileSize + 1;
  rect.y1 = static_cast<int>(std::min<double>(cam.height - 1, py1)) / kTileSize + 1;
  if (rect.empty()) return false;

  const int nb = cloud.sh_basis();
  Vec3<T> dir = mean - cam_center;
  const T dn = dir.norm();
  dir = dn > T(0) ? Vec3<T>(dir / dn) : Vec3<T>(T(0), T(0), T(1));
  T basis[16];
  detail::sh_basis_eval<T>(cloud.sh_degree, dir.x(), dir.y(), dir.z(), basis, nullptr);
  const double* sh = &cloud.sh_coeffs[3 * nb * i];
  for (int ch = 0; ch < 3; ++ch) {
    T v = T(0.5);
    for (int k = 0; k < nb; ++k) v += T(sh[ch * nb + k]) * basis[k];
    out.clamped[ch] = v < T(0);
    out.color[ch] = out.clamped[ch] ? T(0) : v;
  }
  return true;
}

template <class T>
std::shared_ptr<RenderState> build_state(const GaussianCloud& cloud, const Camera& cam,
                                         const RenderSettings& rs,
                                         std::vector<std::uint8_t>& in_viewport) {
  auto st = std::make_shared<RenderState>();
  st->precision = rs.precision;
  st->settings = rs;
  st->width = cam.width;
  st->height = cam.height;
  st->tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  st->tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  st->feature_dim = cloud.feature_dim;
  st->gaussian_count = cloud.size();

  const std::size_t n = cloud.size();
  std::vector<Splat<T>> splats(n);
  std::vector<TileRect> rects(n);
  std::vector<std::uint8_t> ok(n, 0);
  in_viewport.assign(n, 0);
  const Vec3<T> center = cam.center().cast<T>();
  parallel_for((n + 255) / 256, [&](std::size_t block) {
    const std::size_t end = std::min(n, (block + 1) * 256);
    for (std::size_t i = block * 256; i < end; ++i) {
      ok[i] = preprocess_one<T>(cloud, i, cam, center, rs, splats[i], rects[i]);
      const Eigen::Vector3d tc = cam.to_camera(cloud.mean(i));
      if (tc.z() > rs.near_plane) {
        const double u = cam.fx * tc.x() / tc.z() + cam.cx;
        const double v = cam.fy * tc.y() / tc.z() + cam.cy;
        in_viewport[i] = u >= 0 && u < cam.width && v >= 0 && v < cam.height;
      }
    }
  });

  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (ok[i]) order.push_back(static_cast<std::uint32_t>(i));
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    return a < b;
  });

  st->tile_lists.assign(static_cast<std::size_t>(st->tiles_x) * st->tiles_y, {});
  for (std::uint32_t g : order) {
    const TileRect& r = rects[g];
    for (int ty = r.y0; ty < r.y1; ++ty)
      for (int tx = r.x0; tx < r.x1; ++tx)
        st->tile_lists[static_cast<std::size_t>(ty) * st->tiles_x + tx].push_back(g);
  }
  st->rendered = std::move(ok);

  const std::size_t d = static_cast<std::size_t>(cloud.feature_dim);
  std::vector<T> feats(n * d);
  for (std::size_t k = 0; k < n * d; ++k) feats[k] = T(cloud.features[k]);
  if constexpr (std::is_same_v<T, float>) {
    st->splats_f = std::move(splats);
    st->features_f = std::move(feats);
  } else {
    st->splats_d = std::move(splats);
    st->features_d = std::move(feats);
  }
  return st;
}

template <class T>
inline T splat_power(const Splat<T>& s, T px, T py) {
  const T dx = px - s.mx, dy = py - s.my;
  return T(-0.5) * (s.ca * dx * dx + s.cc * dy * dy) - s.cb * dx * dy;
}

template <class T>
void forward_tiles(const RenderState& st, unsigned channels, RenderOutput& out) {
  const auto& splats = st.splats<T>();
  const auto& feats = st.features<T>();
  const int d = st.feature_dim;
  const bool want_feat = channels & (channel::kFeature | channel::kVariance);
  const bool want_var = channels & channel::kVariance;
  const T alpha_min = T(st.settings.alpha_min), alpha_max = T(st.settings.alpha_max);
  const T t_min = T(st.settings.transmittance_min);

  parallel_for(st.tile_lists.size(), [&](std::size_t tile) {
    const auto& list = st.tile_lists[tile];
    const int tx = static_cast<int>(tile % st.tiles_x), ty = static_cast<int>(tile / st.tiles_x);
    std::vector<T> f_acc(d), fsq_acc(d);
    for (int y = ty * kTileSize; y < std::min(st.height, (ty + 1) * kTileSize); ++y) {
      for (int x = tx * kTileSize; x < std::min(st.width, (tx + 1) * kTileSize); ++x) {
        const T px = T(x) + T(0.5), py = T(y) + T(0.5);
        T trans = T(1);
        T col[3] = {0, 0, 0};
        T dep = T(0);
        std::fill(f_acc.begin(), f_acc.end(), T(0));
        std::fill(fsq_acc.begin(), fsq_acc.end(), T(0));
        int count = 0;
        for (std::uint32_t g : list) {
          const Splat<T>& s = splats[g];
          const T alpha = std::min(alpha_max, s.opacity * std::exp(splat_power(s, px, py)));
          if (alpha < alpha_min) continue;
          const T w = alpha * trans;
          for (int c = 0; c < 3; ++c) col[c] += w * s.color[c];
          dep += w * s.depth;
          if (want_feat) {
            const T* f = &feats[static_cast<std::size_t>(g) * d];
            for (int k = 0; k < d; ++k) {
              f_acc[k] += w * f[k];
              fsq_acc[k] += w * f[k] * f[k];
            }
          }
          trans *= T(1) - alpha;
          ++count;
          if (trans < t_min) break;
        }
        if (channels & channel::kColor)
          for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = double(col[c]);
        if (want_feat)
          for (int k = 0; k < d; ++k) out.feature.at(x, y, k) = double(f_acc[k]);
        if (want_var)
          for (int k = 0; k < d; ++k) {
            const double f = double(f_acc[k]), fsq = double(fsq_acc[k]);
            out.feature_sq.at(x, y, k) = fsq;
            out.variance.at(x, y, k) = fsq - f * f;
          }
        if (channels & channel::kAlpha) out.alpha.at(x, y) = double(T(1) - trans);
        if (channels & channel::kDepth) out.depth.at(x, y) = double(dep);
        out.contrib_count.at(x, y) = count;
      }
    }
  });
}

// Per-splat-list-entry gradients accumulated inside one tile.
template <class T>
struct TileGrads {
  std::vector<T> mean2d, conic, opacity, color, feature, depth;
  void reset(std::size_t m, int d) {
    mean2d.assign(2 * m, T(0));
    conic.assign(3 * m, T(0));
    opacity.assign(m, T(0));
    color.assign(3 * m, T(0));
    feature.assign(m * d, T(0));
    depth.assign(m, T(0));
  }
};

struct GaussianAccum {
  std::vector<double> mean2d, conic, opacity, color, feature, depth;
};

template <class T>
void backward_tiles(const RenderState& st, const RenderOutput& out, const RenderUpstream& up,
                    bool var_full, GaussianAccum& acc) {
  const auto& splats = st.splats<T>();
  const auto& feats = st.features<T>();
  const int d = st.feature_dim;
  const T alpha_min = T(st.settings.alpha_min), alpha_max = T(st.settings.alpha_max);
  const T t_min = T(st.settings.transmittance_min);
  const bool has_col = !up.color.empty(), has_feat = !up.feature.empty();
  const bool has_var = !up.variance.empty(), has_alpha = !up.alpha.empty();
  const bool has_depth = !up.depth.empty();

  std::vector<TileGrads<T>> tiles(st.tile_lists.size());
  parallel_for(st.tile_lists.size(), [&](std::size_t tile) {
    const auto& list = st.tile_lists[tile];
    TileGrads<T>& tg = tiles[tile];
    tg.reset(list.size(), d);
    if (list.empty()) return;
    const int tx = static_cast<int>(tile % st.tiles_x), ty = static_cast<int>(tile / st.tiles_x);

    struct Hit { std::uint32_t slot; T alpha, trans, gauss; bool clamped; };
    std::vector<Hit> hits;
    std::vector<T> g_f(d), g_sq(d), g_vf(d), F(d), b_f(d), b_sq(d);

    for (int y = ty * kTileSize; y < std::min(st.height, (ty + 1) * kTileSize); ++y) {
      for (int x = tx * kTileSize; x < std::min(st.width, (tx + 1) * kTileSize); ++x) {
        const T px = T(x) + T(0.5), py = T(y) + T(0.5);
        hits.clear();
        T trans = T(1);
        for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
          const Splat<T>& s = splats[list[slot]];
          const T gauss = std::exp(splat_power(s, px, py));
          const T raw = s.opacity * gauss;
          const bool clamped = raw > alpha_max;
          const T alpha = clamped ? alpha_max : raw;
          if (alpha < alpha_min) continue;
          hits.push_back({slot, alpha, trans, gauss, clamped});
          trans *= T(1) - alpha;
          if (trans < t_min) break;
        }
        if (hits.empty()) continue;

        T g_col[3] = {0, 0, 0};
        if (has_col)
          for (int c = 0; c < 3; ++c) g_col[c] = T(up.color.at(x, y, c));
        for (int k = 0; k < d; ++k) {
          g_f[k] = has_feat ? T(up.feature.at(x, y, k)) : T(0);
          g_sq[k] = T(0);
          g_vf[k] = T(0);
          F[k] = T(0);
        }
        if (has_var) {
          for (int k = 0; k < d; ++k) F[k] = T(out.feature.at(x, y, k));
          for (int k = 0; k < d; ++k) {
            const T gv = T(up.variance.at(x, y, k));
            if (var_full) {
              g_sq[k] = gv;
              g_f[k] += T(-2) * F[k] * gv;
            } else {
              g_vf[k] = gv;
            }
          }
        }
        const T g_alpha = has_alpha ? T(up.alpha.at(x, y)) : T(0);
        const T g_depth = has_depth ? T(up.depth.at(x, y)) : T(0);

        T b_col[3] = {0, 0, 0};
        T b_alpha = T(0), b_depth = T(0);
        std::fill(b_f.begin(), b_f.end(), T(0));
        std::fill(b_sq.begin(), b_sq.end(), T(0));
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
          const std::uint32_t slot = it->slot;
          const std::uint32_t g = list[slot];
          const Splat<T>& s = splats[g];
          const T* f = &feats[static_cast<std::size_t>(g) * d];
          const T alpha = it->alpha, w = alpha * it->trans;

          T d_alpha = T(0);
          for (int c = 0; c < 3; ++c) {
            tg.color[3 * slot + c] += w * g_col[c];
            d_alpha += g_col[c] * (s.color[c] - b_col[c]);
            b_col[c] = alpha * s.color[c] + (T(1) - alpha) * b_col[c];
          }
          T* gfeat = &tg.feature[static_cast<std::size_t>(slot) * d];
          for (int k = 0; k < d; ++k) {
            const T fsq = f[k] * f[k];
            gfeat[k] += w * (g_f[k] + T(2) * f[k] * g_sq[k] + T(2) * (f[k] - F[k]) * g_vf[k]);
            d_alpha += g_f[k] * (f[k] - b_f[k]) + g_sq[k] * (fsq - b_sq[k]);
            b_f[k] = alpha * f[k] + (T(1) - alpha) * b_f[k];
            b_sq[k] = alpha * fsq + (T(1) - alpha) * b_sq[k];
          }
          tg.depth[slot] += w * g_depth;
          d_alpha += g_alpha * (T(1) - b_alpha) + g_depth * (s.depth - b_depth);
          b_alpha = alpha + (T(1) - alpha) * b_alpha;
          b_depth = alpha * s.depth + (T(1) - alpha) * b_depth;
          d_alpha *= it->trans;

          if (it->clamped) continue;
          tg.opacity[slot] += it->gauss * d_alpha;
          const T d_power = alpha * d_alpha;
          const T dx = px - s.mx, dy = py - s.my;
          tg.mean2d[2 * slot] += d_power * (s.ca * dx + s.cb * dy);
          tg.mean2d[2 * slot + 1] += d_power * (s.cb * dx + s.cc * dy);
          tg.conic[3 * slot] += T(-0.5) * dx * dx * d_power;
          tg.conic[3 * slot + 1] += -dx * dy * d_power;  // both off-diagonal entries
          tg.conic[3 * slot + 2] += T(-0.5) * dy * dy * d_power;
        }
      }
    }
  });

  const std::size_t n = st.gaussian_count;
  acc.mean2d.assign(2 * n, 0.0);
  acc.conic.assign(3 * n, 0.0);
  acc.opacity.assign(n, 0.0);
  acc.color.assign(3 * n, 0.0);
  acc.feature.assign(n * d, 0.0);
  acc.depth.assign(n, 0.0);
  // Sequential reduction in tile order keeps the result independent of the
  // worker count.
  for (std::size_t tile = 0; tile < tiles.size(); ++tile) {
    const auto& list = st.tile_lists[tile];
    const TileGrads<T>& tg = tiles[tile];
    for (std::size_t slot = 0; slot < list.size(); ++slot) {
      const std::size_t g = list[slot];
      for (int k = 0; k < 2; ++k) acc.mean2d[2 * g + k] += double(tg.mean2d[2 * slot + k]);
      for (int k = 0; k < 3; ++k) acc.conic[3 * g + k] += double(tg.conic[3 * slot + k]);
      for (int k = 0; k < 3; ++k) acc.color[3 * g + k] += double(tg.color[3 * slot + k]);
      for (int k = 0; k < d; ++k) acc.feature[g * d + k] += double(tg.feature[slot * d + k]);
      acc.opacity[g] += double(tg.opacity[slot]);
      acc.depth[g] += double(tg.depth[slot]);
    }
  }
}

// Chain rule from the per-splat quantities back to the Gaussian parameters.
template <class T>
void backward_gaussians(const GaussianCloud& cloud, const Camera& cam, const RenderState& st,
                        const GaussianAccum& acc, RenderGrads& grads) {
  const auto& splats = st.splats<T>();
  const int nb = cloud.sh_basis();
  const int d = cloud.feature_dim;
  const std::size_t n = cloud.size();
  const Mat3<T> rc = cam.rotation.cast<T>();
  const Vec3<T> center = cam.center().cast<T>();
  const T fx = T(cam.fx), fy = T(cam.fy);

  parallel_for((n + 255) / 256, [&](std::size_t block) {
    const std::size_t end = std::min(n, (block + 1) * 256);
    for (std::size_t i = block * 256; i < end; ++i) {
      if (!st.rendered[i]) continue;
      grads.rendered[i] = 1;
      const Splat<T>& s = splats[i];
      for (int k = 0; k < d; ++k) grads.features[i * d + k] = acc.feature[i * d + k];

      // Opacity logit.
      grads.opacity_logits[i] =
          acc.opacity[i] * double(s.opacity) * (1.0 - double(s.opacity));

      const Vec3<T> mean(T(cloud.means[3 * i]), T(cloud.means[3 * i + 1]),
                         T(cloud.means[3 * i + 2]));
      Vec3<T> d_mean = Vec3<T>::Zero();

      // Color through SH, including the view-direction dependence on the mean.
      {
        Vec3<T> v = mean - center;
        const T vn = v.norm();
        const Vec3<T> dir = vn > T(0) ? Vec3<T>(v / vn) : Vec3<T>(T(0), T(0), T(1));
        T basis[16], dbasis[48];
        detail::sh_basis_eval<T>(cloud.sh_degree, dir.x(), dir.y(), dir.z(), basis, dbasis);
        const double* sh = &cloud.sh_coeffs[3 * nb * i];
        Vec3<T> d_dir = Vec3<T>::Zero();
        for (int ch = 0; ch < 3; ++ch) {
          if (s.clamped[ch]) continue;
          const T gc = T(acc.color[3 * i + ch]);
          for (int b = 0; b < nb; ++b) {
            grads.sh_coeffs[3 * nb * i + ch * nb + b] = double(gc * basis[b]);
            const T coef = T(sh[ch * nb + b]);
            for (int a = 0; a < 3; ++a) d_dir[a] += gc * coef * dbasis[3 * b + a];
          }
        }
        if (vn > T(0)) d_mean += (d_dir - dir * dir.dot(d_dir)) / vn;
      }

      // Recompute the projection intermediates.
      const Mat3<T> r = rotation_of<T>(&cloud.rotations[4 * i]);
      Vec3<T> sc;
      for (int k = 0; k < 3; ++k) sc[k] = std::exp(T(cloud.log_scales[3 * i + k]));
      const Mat3<T> m = r * sc.asDiagonal();
      const Mat3<T> sigma = m * m.transpose();
      const Vec3<T> t = rc * mean + cam.translation.cast<T>();
      const T iz = T(1) / t.z();
      Eigen::Matrix<T, 2, 3> j;
      j << fx * iz, T(0), -fx * t.x() * iz * iz, T(0), fy * iz, -fy * t.y() * iz * iz;
      const Eigen::Matrix<T, 2, 3> tm = j * rc;

      // conic -> cov2d: d cov = -conic * dConic * conic (symmetric full-matrix form).
      Eigen::Matrix<T, 2, 2> conic, d_conic;
      conic << s.ca, s.cb, s.cb, s.cc;
      d_conic << T(acc.conic[3 * i]), T(0.5 * acc.conic[3 * i + 1]),
          T(0.5 * acc.conic[3 * i + 1]), T(acc.conic[3 * i + 2]);
      const Eigen::Matrix<T, 2, 2> d_cov = -conic * d_conic * conic;

      const Mat3<T> d_sigma = tm.transpose() * d_cov * tm;
      const Eigen::Matrix<T, 2, 3> d_tm = T(2) * d_cov * tm * sigma;
      const Eigen::Matrix<T, 2, 3> d_j = d_tm * rc.transpose();

      Vec3<T> d_t = Vec3<T>::Zero();
      const T iz2 = iz * iz, iz3 = iz2 * iz;
      d_t.x() += d_j(0, 2) * (-fx * iz2);
      d_t.y() += d_j(1, 2) * (-fy * iz2);
      d_t.z() += d_j(0, 0) * (-fx * iz2) + d_j(0, 2) * (T(2) * fx * t.x() * iz3) +
                 d_j(1, 1) * (-fy * iz2) + d_j(1, 2) * (T(2) * fy * t.y() * iz3);
      // Projected mean and depth.
      const T gmx = T(acc.mean2d[2 * i]), gmy = T(acc.mean2d[2 * i + 1]);
      d_t.x() += gmx * fx * iz;
      d_t.y() += gmy * fy * iz;
      d_t.z() += -gmx * fx * t.x() * iz2 - gmy * fy * t.y() * iz2;
      d_t.z() += T(acc.depth[i]);
      d_mean += rc.transpose() * d_t;
      for (int k = 0; k < 3; ++k) grads.means[3 * i + k] = double(d_mean[k]);

      // Sigma = M M^T, M = R diag(s).
      const Mat3<T> d_m = T(2) * d_sigma * m;
      Mat3<T> d_r;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) d_r(a, b) = d_m(a, b) * sc[b];
      for (int b = 0; b < 3; ++b) {
        T ds = T(0);
        for (int a = 0; a < 3; ++a) ds += d_m(a, b) * r(a, b);
        grads.log_scales[3 * i + b] = double(ds * sc[b]);
      }

      Eigen::Matrix<T, 4, 1> q(T(cloud.rotations[4 * i]), T(cloud.rotations[4 * i + 1]),
                               T(cloud.rotations[4 * i + 2]), T(cloud.rotations[4 * i + 3]));
      const T qn = q.norm();
      const Eigen::Matrix<T, 4, 1> u = q / qn;
      const T w = u[0], x = u[1], y = u[2], z = u[3];
      Eigen::Matrix<T, 4, 1> d_u;
      d_u[0] = T(2) * (-z * d_r(0, 1) + y * d_r(0, 2) + z * d_r(1, 0) - x * d_r(1, 2) -
                       y * d_r(2, 0) + x * d_r(2, 1));
      d_u[1] = T(2) * (y * d_r(0, 1) + z * d_r(0, 2) + y * d_r(1, 0) - T(2) * x * d_r(1, 1) -
                       w * d_r(1, 2) + z * d_r(2, 0) + w * d_r(2, 1) - T(2) * x * d_r(2, 2));
      d_u[2] = T(2) * (-T(2) * y * d_r(0, 0) + x * d_r(0, 1) + w * d_r(0, 2) + x * d_r(1, 0) +
                       z * d_r(1, 2) - w * d_r(2, 0) + z * d_r(2, 1) - T(2) * y * d_r(2, 2));
      d_u[3] = T(2) * (-T(2) * z * d_r(0, 0) - w * d_r(0, 1) + x * d_r(0, 2) + w * d_r(1, 0) -
                       T(2) * z * d_r(1, 1) + y * d_r(1, 2) + x * d_r(2, 0) + y * d_r(2, 1));
      const Eigen::Matrix<T, 4, 1> d_q = (d_u - u * u.dot(d_u)) / qn;
      for (int k = 0; k < 4; ++k) grads.rotations[4 * i + k] = double(d_q[k]);

      const double ndc_x = acc.mean2d[2 * i] * 0.5 * cam.width;
      const double ndc_y = acc.mean2d[2 * i + 1] * 0.5 * cam.height;
      grads.mean2d_norm[i] = std::sqrt(ndc_x * ndc_x + ndc_y * ndc_y);
    }
  });
}

void allocate_output(RenderOutput& out, const Camera& cam, int d, unsigned channels) {
  out.width = cam.width;
  out.height = cam.height;
  out.feature_dim = d;
  out.channels = channels;
  if (channels & channel::kColor) out.color = ImageD(cam.width, cam.height, 3);
  if (channels & (channel::kFeature | channel::kVariance))
    out.feature = ImageD(cam.width, cam.height, d);
  if (channels & channel::kVariance) {
    out.feature_sq = ImageD(cam.width, cam.height, d);
    out.variance = ImageD(cam.width, cam.height, d);
  }
  if (channels & channel::kAlpha) out.alpha = ImageD(cam.width, cam.height, 1);
  if (channels & channel::kDepth) out.depth = ImageD(cam.width, cam.height, 1);
  out.contrib_count = Image<std::int32_t>(cam.width, cam.height, 1);
}

void check_upstream(const ImageD& g, const ImageD& ref, const char* name) {
  if (g.empty()) return;
  require(!ref.empty() && g.same_shape(ref), ErrorCode::kContractViolation,
          std::string("render_backward: upstream shape mismatch for ") + name);
}

}  // namespace

RenderOutput render(const GaussianCloud& cloud, const Camera& camera, unsigned channels,
                    const RenderSettings& settings) {
  camera.validate();
  cloud.validate();
  if (channels & channel::kVariance) channels |= channel::kFeature;
  RenderOutput out;
  allocate_output(out, camera, cloud.feature_dim, channels);
  if (settings.precision == Precision::kF32) {
    out.state = build_state<float>(cloud, camera, settings, out.in_viewport);
    forward_tiles<float>(*out.state, channels, out);
  } else {
    out.state = build_state<double>(cloud, camera, settings, out.in_viewport);
    forward_tiles<double>(*out.state, channels, out);
  }
  return out;
}

RenderGrads render_backward(const GaussianCloud& cloud, const Camera& camera,
                            const RenderOutput& output, const RenderUpstream& upstream,
                            const RenderSettings& settings) {
  require(output.state != nullptr, ErrorCode::kContractViolation,
          "render_backward: output was not produced by render");
  const RenderState& st = *output.state;
  require(st.gaussian_count == cloud.size() && st.width == camera.width &&
              st.height == camera.height && st.feature_dim == cloud.feature_dim,
          ErrorCode::kContractViolation, "render_backward: inputs differ from the forward pass");
  check_upstream(upstream.color, output.color, "color");
  check_upstream(upstream.feature, output.feature, "feature");
  check_upstream(upstream.variance, output.variance, "variance");
  check_upstream(upstream.alpha, output.alpha, "alpha");
  check_upstream(upstream.depth, output.depth, "depth");

  RenderGrads grads;
  grads.resize_like(cloud);
  GaussianAccum acc;
  if (st.precision == Precision::kF32) {
    backward_tiles<float>(st, output, upstream, settings.variance_full_gradient, acc);
    backward_gaussians<float>(cloud, camera, st, acc, grads);
  } else {
    backward_tiles<double>(st, output, upstream, settings.variance_full_gradient, acc);
    backward_gaussians<double>(cloud, camera, st, acc, grads);
  }
  return grads;
}

Mask render_instance_silhouette(const GaussianCloud& cloud, const std::vector<int>& labels,
                                int instance, const Camera& camera, bool respect_occlusion,
                                double threshold, const RenderSettings& settings) {
  require(labels.size() == cloud.size(), ErrorCode::kContractViolation,
          "silhouette: label count differs from cloud size");
  require(threshold > 0.0 && threshold < 1.0, ErrorCode::kInvalidParameter,
          "silhouette threshold must be in (0,1)");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == instance) members.push_back(i);
  require(!members.empty(), ErrorCode::kEmptySelection,
          "silhouette: unknown instance id " + std::to_string(instance));

  Mask mask(camera.width, camera.height, 1, 0);
  if (respect_occlusion) {
    GaussianCloud tinted = cloud;
    tinted.feature_dim = 1;
    tinted.features.assign(cloud.size(), 0.0);
    for (std::size_t i : members) tinted.features[i] = 1.0;
    const RenderOutput out = render(tinted, camera, channel::kFeature, settings);
    for (std::size_t p = 0; p < mask.data.size(); ++p)
      mask.data[p] = out.feature.data[p] >= threshold;
  } else {
    const RenderOutput out = render(cloud.subset(members), camera, channel::kAlpha, settings);
    for (std::size_t p = 0; p < mask.data.size(); ++p)
      mask.data[p] = out.alpha.data[p] >= threshold;
  }
  return mask;
}

std::size_t count_in_viewport(const GaussianCloud& cloud, const std::vector<std::size_t>& rows,
                              const Camera& cam, double near_plane) {
  std::size_t count = 0;
  for (std::size_t i : rows) {
    const Eigen::Vector3d t = cam.to_camera(cloud.mean(i));
    if (t.z() <= near_plane) continue;
    const double u = cam.fx * t.x() / t.z() + cam.cx;
    const double v = cam.fy * t.y() / t.z() + cam.cy;
    if (u >= 0 && u < cam.width && v >= 0 && v < cam.height) ++count;
  }
  return count;
}

IdMap render_instance_ids(const GaussianCloud& cloud, const std::vector<int>& labels,
                          const Camera& camera, double alpha_threshold,
                          const RenderSettings& settings) {
  require(labels.size() == cloud.size(), ErrorCode::kContractViolation,
          "render_instance_ids: label count differs from cloud size");
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  IdMap ids(camera.width, camera.height, 1, 0);
  if (max_label < 0) return ids;
  require(max_label < 65535, ErrorCode::kInvalidParameter, "too many instances for a 16-bit map");

  GaussianCloud onehot = cloud;
  onehot.feature_dim = max_label + 1;
  onehot.features.assign(cloud.size() * onehot.feature_dim, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) onehot.features[i * onehot.feature_dim + labels[i]] = 1.0;
  const RenderOutput out =
      render(onehot, camera, channel::kFeature | channel::kAlpha, settings);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      if (out.alpha.at(x, y) < alpha_threshold) continue;
      int best = -1;
      double best_w = 0.0;
      for (int k = 0; k < onehot.feature_dim; ++k)
        if (out.feature.at(x, y, k) > best_w) {
          best_w = out.feature.at(x, y, k);
          best = k;
        }
      if (best >= 0) ids.at(x, y) = static_cast<std::uint16_t>(best + 1);
    }
  return ids;
}

}  // namespace osp3d

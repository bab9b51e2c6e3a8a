#include "osp3d/ssim.hpp"

#include <cmath>
#include <vector>

namespace osp3d {

namespace {

// Separable Gaussian blur with per-axis weight renormalization at borders.
class NormalizedBlur {
 public:
  NormalizedBlur(int width, int height, int window, double sigma)
      : w_(width), h_(height), r_(window / 2), kernel_(window) {
    double sum = 0.0;
    for (int k = 0; k < window; ++k) {
      const double x = k - r_;
      kernel_[k] = std::exp(-x * x / (2.0 * sigma * sigma));
      sum += kernel_[k];
    }
    for (double& k : kernel_) k /= sum;
    zx_ = partial_sums(w_);
    zy_ = partial_sums(h_);
  }

  // out = K x
  void apply(const std::vector<double>& in, std::vector<double>& out) const {
    std::vector<double> tmp(in.size());
    pass_x(in, tmp, true);
    pass_y(tmp, out, true);
  }

  // out = K^T g
  void apply_transpose(const std::vector<double>& g, std::vector<double>& out) const {
    std::vector<double> tmp(g.size());
    pass_y_t(g, tmp);
    pass_x_t(tmp, out);
  }

 private:
  std::vector<double> partial_sums(int n) const {
    std::vector<double> z(n, 0.0);
    for (int p = 0; p < n; ++p)
      for (int k = -r_; k <= r_; ++k)
        if (p + k >= 0 && p + k < n) z[p] += kernel_[k + r_];
    return z;
  }

  void pass_x(const std::vector<double>& in, std::vector<double>& out, bool normalize) const {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double acc = 0.0;
        for (int k = -r_; k <= r_; ++k) {
          const int xx = x + k;
          if (xx >= 0 && xx < w_) acc += kernel_[k + r_] * in[y * w_ + xx];
        }
        out[y * w_ + x] = normalize ? acc / zx_[x] : acc;
      }
  }
  void pass_y(const std::vector<double>& in, std::vector<double>& out, bool normalize) const {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double acc = 0.0;
        for (int k = -r_; k <= r_; ++k) {
          const int yy = y + k;
          if (yy >= 0 && yy < h_) acc += kernel_[k + r_] * in[yy * w_ + x];
        }
        out[y * w_ + x] = normalize ? acc / zy_[y] : acc;
      }
  }
  // The kernel is symmetric, so the transpose of a normalized pass is the
  // unnormalized pass applied to g / Z.
  void pass_y_t(const std::vector<double>& g, std::vector<double>& out) const {
    std::vector<double> scaled(g.size());
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) scaled[y * w_ + x] = g[y * w_ + x] / zy_[y];
    pass_y(scaled, out, false);
  }
  void pass_x_t(const std::vector<double>& g, std::vector<double>& out) const {
    std::vector<double> scaled(g.size());
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) scaled[y * w_ + x] = g[y * w_ + x] / zx_[x];
    pass_x(scaled, out, false);
  }

  int w_, h_, r_;
  std::vector<double> kernel_, zx_, zy_;
};

double ssim_impl(const ImageD& a, const ImageD& b, ImageD* d_a, const SsimParams& prm) {
  require_same_shape(a, b, "ssim: image shapes differ");
  require(!a.empty(), ErrorCode::kContractViolation, "ssim: empty image");
  const int w = a.width, h = a.height, nc = a.channels;
  const std::size_t np = a.pixel_count();
  const double c1 = std::pow(prm.k1 * prm.dynamic_range, 2);
  const double c2 = std::pow(prm.k2 * prm.dynamic_range, 2);
  const NormalizedBlur blur(w, h, prm.window, prm.sigma);
  if (d_a) *d_a = ImageD(w, h, nc);

  double total = 0.0;
  std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
  std::vector<double> mx(np), my(np), exx(np), eyy(np), exy(np);
  std::vector<double> g_mx(np), g_exx(np), g_exy(np), t0(np), t1(np), t2(np);
  const double scale = 1.0 / (static_cast<double>(np) * nc);
  for (int c = 0; c < nc; ++c) {
    for (std::size_t p = 0; p < np; ++p) {
      x[p] = a.data[p * nc + c];
      y[p] = b.data[p * nc + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    blur.apply(x, mx);
    blur.apply(y, my);
    blur.apply(xx, exx);
    blur.apply(yy, eyy);
    blur.apply(xy, exy);
    for (std::size_t p = 0; p < np; ++p) {
      const double ux = mx[p], uy = my[p];
      const double vx = exx[p] - ux * ux, vy = eyy[p] - uy * uy, cxy = exy[p] - ux * uy;
      const double a1 = 2.0 * ux * uy + c1, a2 = 2.0 * cxy + c2;
      const double b1 = ux * ux + uy * uy + c1, b2 = vx + vy + c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (d_a) {
        g_mx[p] = scale * ((2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) -
                           s * (2.0 * ux / b1 - 2.0 * ux / b2));
        g_exx[p] = scale * (-s / b2);
        g_exy[p] = scale * (2.0 * a1 / (b1 * b2));
      }
    }
    if (d_a) {
      blur.apply_transpose(g_mx, t0);
      blur.apply_transpose(g_exx, t1);
      blur.apply_transpose(g_exy, t2);
      for (std::size_t p = 0; p < np; ++p)
        d_a->data[p * nc + c] = t0[p] + 2.0 * x[p] * t1[p] + y[p] * t2[p];
    }
  }
  return total * scale;
}

}  // namespace

double ssim(const ImageD& a, const ImageD& b, const SsimParams& params) {
  return ssim_impl(a, b, nullptr, params);
}

double ssim_with_grad(const ImageD& a, const ImageD& b, ImageD& d_a, const SsimParams& params) {
  return ssim_impl(a, b, &d_a, params);
}

}  // namespace osp3d

#pragma once

#include "osp3d/image.hpp"

namespace osp3d {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over pixels and channels. Windows are Gaussian and renormalized
// where they overhang the image border, so constant images score exactly.
double ssim(const ImageD& a, const ImageD& b, const SsimParams& params = {});

// SSIM value plus dSSIM/da.
double ssim_with_grad(const ImageD& a, const ImageD& b, ImageD& d_a,
                      const SsimParams& params = {});

}  // namespace osp3d

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "osp3d/config.hpp"
#include "osp3d/image.hpp"
#include "osp3d/rasterizer.hpp"

namespace osp3d {

struct LossReport {
  double l1 = 0.0;
  double ssim = 0.0;  // 1 - SSIM
  double rgb = 0.0;
  double pos = 0.0;
  double neg = 0.0;
  double inst2d = 0.0;
  double var = 0.0;
  double total = 0.0;
  int instance_count = 0;          // N_v
  std::vector<double> prototypes;  // N_v x d
};

struct RgbLoss {
  double loss = 0.0, l1 = 0.0, ssim = 0.0;
  ImageD grad;
};

// (1 - beta) * mean|r - t| + beta * (1 - SSIM(r, t)).
RgbLoss rgb_loss(const ImageD& rendered, const ImageD& target, double beta);

struct ContrastiveLoss {
  double pos = 0.0, neg = 0.0;
  std::vector<std::uint16_t> ids;  // mask id of each prototype row
  std::vector<double> prototypes;  // ids.size() x d
  ImageD grad;                     // d(w_pos * pos + w_neg * neg) / dF
};

// Prototype pull/push losses over the labeled pixels of one view; id 0 is
// ignored. Fewer than two instances give neg = 0.
ContrastiveLoss instance_contrastive_loss(const ImageD& feature_map, const IdMap& mask,
                                          double gamma, double w_pos, double w_neg);

struct VarianceLoss {
  double loss = 0.0;
  ImageD grad;
};

// Mean over all pixels of the squared 2-norm of the per-pixel variance.
VarianceLoss variance_loss(const ImageD& variance_map);

// Fills report.inst2d and report.total from the component terms.
double total_loss(LossReport& report, const SceneConfig& config);

// Evaluates every term on one rendered view and returns the upstream
// gradients of the total objective. `mask` may be empty (no instance term).
LossReport evaluate_view_losses(const RenderOutput& rendered, const ImageD& target,
                                const IdMap& mask, const SceneConfig& config,
                                RenderUpstream& upstream);

// CSV row (iteration,l1,ssim,rgb,pos,neg,var,total,N,lr).
void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, int iteration, const LossReport& r,
                        std::size_t gaussians, double lr);

}  // namespace osp3d

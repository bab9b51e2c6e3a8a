#include "osp3d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "osp3d/ssim.hpp"

namespace osp3d {

RgbLoss rgb_loss(const ImageD& rendered, const ImageD& target, double beta) {
  require_same_shape(rendered, target, "rgb_loss: shape mismatch");
  require(beta >= 0.0 && beta <= 1.0, ErrorCode::kInvalidParameter, "beta must be in [0,1]");
  RgbLoss out;
  const std::size_t n = rendered.data.size();
  out.grad = ImageD(rendered.width, rendered.height, rendered.channels);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = rendered.data[i] - target.data[i];
    sum += std::abs(diff);
    const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    out.grad.data[i] = (1.0 - beta) * sign / static_cast<double>(n);
  }
  out.l1 = sum / static_cast<double>(n);
  if (beta > 0.0) {
    ImageD d_ssim;
    out.ssim = 1.0 - ssim_with_grad(rendered, target, d_ssim);
    for (std::size_t i = 0; i < n; ++i) out.grad.data[i] -= beta * d_ssim.data[i];
  } else {
    out.ssim = 1.0 - ssim(rendered, target);
  }
  out.loss = (1.0 - beta) * out.l1 + beta * out.ssim;
  return out;
}

ContrastiveLoss instance_contrastive_loss(const ImageD& feature_map, const IdMap& mask,
                                          double gamma, double w_pos, double w_neg) {
  require(feature_map.width == mask.width && feature_map.height == mask.height,
          ErrorCode::kContractViolation, "contrastive loss: mask size differs from feature map");
  require(gamma > 0.0, ErrorCode::kInvalidParameter, "gamma must be > 0");
  const int d = feature_map.channels;
  ContrastiveLoss out;
  out.grad = ImageD(feature_map.width, feature_map.height, d);

  std::map<std::uint16_t, std::size_t> slot_of;
  for (std::uint16_t id : mask.data)
    if (id != 0) slot_of.emplace(id, 0);
  std::size_t nv = 0;
  for (auto& [id, slot] : slot_of) {
    slot = nv++;
    out.ids.push_back(id);
  }
  if (nv == 0) return out;

  std::vector<std::size_t> count(nv, 0);
  out.prototypes.assign(nv * d, 0.0);
  const std::size_t np = mask.pixel_count();
  std::vector<std::int64_t> pixel_slot(np, -1);
  for (std::size_t p = 0; p < np; ++p) {
    if (mask.data[p] == 0) continue;
    const std::size_t s = slot_of[mask.data[p]];
    pixel_slot[p] = static_cast<std::int64_t>(s);
    ++count[s];
    for (int k = 0; k < d; ++k) out.prototypes[s * d + k] += feature_map.data[p * d + k];
  }
  for (std::size_t s = 0; s < nv; ++s)
    for (int k = 0; k < d; ++k) out.prototypes[s * d + k] /= static_cast<double>(count[s]);

  // Pull term. Its gradient through the prototype cancels because the
  // residuals of each mask sum to zero.
  std::vector<double> per_instance(nv, 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    if (pixel_slot[p] < 0) continue;
    const std::size_t s = static_cast<std::size_t>(pixel_slot[p]);
    const double inv = 1.0 / (static_cast<double>(nv) * count[s]);
    for (int k = 0; k < d; ++k) {
      const double r = feature_map.data[p * d + k] - out.prototypes[s * d + k];
      per_instance[s] += r * r;
      out.grad.data[p * d + k] += w_pos * 2.0 * r * inv;
    }
  }
  for (std::size_t s = 0; s < nv; ++s) out.pos += per_instance[s] / count[s];
  out.pos /= static_cast<double>(nv);

  // Push term over unordered prototype pairs.
  if (nv >= 2) {
    const double norm = 2.0 / (static_cast<double>(nv) * (nv - 1));
    std::vector<double> d_proto(nv * d, 0.0);
    for (std::size_t i = 0; i < nv; ++i)
      for (std::size_t j = i + 1; j < nv; ++j) {
        double dist2 = 0.0;
        for (int k = 0; k < d; ++k) {
          const double diff = out.prototypes[i * d + k] - out.prototypes[j * d + k];
          dist2 += diff * diff;
        }
        const double margin = gamma - dist2;
        if (margin <= 0.0) continue;
        out.neg += norm * margin;
        for (int k = 0; k < d; ++k) {
          const double diff = out.prototypes[i * d + k] - out.prototypes[j * d + k];
          d_proto[i * d + k] += -2.0 * norm * diff;
          d_proto[j * d + k] += 2.0 * norm * diff;
        }
      }
    for (std::size_t p = 0; p < np; ++p) {
      if (pixel_slot[p] < 0) continue;
      const std::size_t s = static_cast<std::size_t>(pixel_slot[p]);
      for (int k = 0; k < d; ++k)
        out.grad.data[p * d + k] += w_neg * d_proto[s * d + k] / static_cast<double>(count[s]);
    }
  }
  return out;
}

VarianceLoss variance_loss(const ImageD& variance_map) {
  VarianceLoss out;
  out.grad = ImageD(variance_map.width, variance_map.height, variance_map.channels);
  const std::size_t np = variance_map.pixel_count();
  if (np == 0) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < variance_map.data.size(); ++i) {
    const double v = variance_map.data[i];
    sum += v * v;
    out.grad.data[i] = 2.0 * v / static_cast<double>(np);
  }
  out.loss = sum / static_cast<double>(np);
  return out;
}

double total_loss(LossReport& r, const SceneConfig& cfg) {
  r.inst2d = cfg.w_pos * r.pos + cfg.w_neg * r.neg;
  r.total = r.rgb + cfg.lambda_inst2d * r.inst2d + cfg.lambda_var * r.var;
  return r.total;
}

LossReport evaluate_view_losses(const RenderOutput& rendered, const ImageD& target,
                                const IdMap& mask, const SceneConfig& cfg,
                                RenderUpstream& upstream) {
  LossReport report;
  upstream = RenderUpstream{};

  require(!rendered.color.empty(), ErrorCode::kContractViolation,
          "losses: color channel not rendered");
  RgbLoss rgb = rgb_loss(rendered.color, target, cfg.beta);
  report.l1 = rgb.l1;
  report.ssim = rgb.ssim;
  report.rgb = rgb.loss;
  upstream.color = std::move(rgb.grad);

  if (!mask.empty() && (cfg.lambda_inst2d > 0.0 || !rendered.feature.empty())) {
    require(!rendered.feature.empty(), ErrorCode::kContractViolation,
            "losses: feature channel not rendered");
    ContrastiveLoss c =
        instance_contrastive_loss(rendered.feature, mask, cfg.gamma, cfg.w_pos, cfg.w_neg);
    report.pos = c.pos;
    report.neg = c.neg;
    report.instance_count = static_cast<int>(c.ids.size());
    report.prototypes = std::move(c.prototypes);
    if (cfg.lambda_inst2d > 0.0) {
      for (double& g : c.grad.data) g *= cfg.lambda_inst2d;
      upstream.feature = std::move(c.grad);
    }
  }
  if (cfg.lambda_var > 0.0 || !rendered.variance.empty()) {
    require(!rendered.variance.empty(), ErrorCode::kContractViolation,
            "losses: variance channel not rendered");
    VarianceLoss v = variance_loss(rendered.variance);
    report.var = v.loss;
    if (cfg.lambda_var > 0.0) {
      for (double& g : v.grad.data) g *= cfg.lambda_var;
      upstream.variance = std::move(v.grad);
    }
  }
  total_loss(report, cfg);
  return report;
}

void write_loss_csv_header(std::ostream& os) {
  os << "iteration,l1,ssim,rgb,pos,neg,var,total,N,lr\n";
}

void write_loss_csv_row(std::ostream& os, int it, const LossReport& r, std::size_t n,
                        double lr) {
  os << it << ',' << r.l1 << ',' << r.ssim << ',' << r.rgb << ',' << r.pos << ',' << r.neg
     << ',' << r.var << ',' << r.total << ',' << n << ',' << lr << '\n';
}

}  // namespace osp3d

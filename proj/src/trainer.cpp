#include "osp3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "osp3d/io.hpp"
#include "osp3d/kdtree.hpp"

namespace osp3d {
namespace {

std::array<std::vector<double>*, kGroupCount> cloud_groups(GaussianCloud& c) {
  return {&c.means, &c.rotations, &c.log_scales, &c.opacity_logits, &c.sh_coeffs, &c.features};
}

std::array<const std::vector<double>*, kGroupCount> grad_groups(const RenderGrads& g) {
  return {&g.means, &g.rotations, &g.log_scales, &g.opacity_logits, &g.sh_coeffs, &g.features};
}

std::array<std::size_t, kGroupCount> row_widths(const GaussianCloud& c) {
  return {3, 4, 3, 1, static_cast<std::size_t>(3 * c.sh_basis()),
          static_cast<std::size_t>(c.feature_dim)};
}

unsigned channels_for(const SceneConfig& cfg, bool has_mask) {
  unsigned ch = channel::kColor;
  if (has_mask && cfg.lambda_inst2d > 0.0) ch |= channel::kFeature;
  if (cfg.lambda_var > 0.0) ch |= channel::kVariance;
  return ch;
}

void check_finite(const LossReport& r, int iteration, int view_id) {
  const std::pair<const char*, double> terms[] = {{"l1", r.l1},   {"ssim", r.ssim},
                                                  {"pos", r.pos}, {"neg", r.neg},
                                                  {"var", r.var}, {"total", r.total}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << iteration << ", view " << view_id << ", term "
          << name;
      fail(ErrorCode::kNonFinite, msg.str());
    }
}

// Keeps the optimizer rows listed in `rows` (in order), zero rows for
// `fresh` appended afterwards.
void remap_state(OptimizerState& st, const GaussianCloud& cloud,
                 const std::vector<std::size_t>& rows, std::size_t fresh) {
  const auto widths = row_widths(cloud);
  for (int g = 0; g < kGroupCount; ++g) {
    const std::size_t w = widths[g];
    for (auto* arr : {&st.m[g], &st.v[g]}) {
      std::vector<double> next;
      next.reserve((rows.size() + fresh) * w);
      for (std::size_t r : rows)
        next.insert(next.end(), arr->begin() + r * w, arr->begin() + (r + 1) * w);
      next.resize((rows.size() + fresh) * w, 0.0);
      *arr = std::move(next);
    }
  }
  st.grad_accum.assign(rows.size() + fresh, 0.0);
  st.grad_count.assign(rows.size() + fresh, 0);
}

}  // namespace

OptimizerState::OptimizerState(const GaussianCloud& cloud, const SceneConfig& cfg)
    : total_steps(std::max(1, cfg.iterations)), rng(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
  lr = {cfg.lr_means, cfg.lr_rotations, cfg.lr_scales, cfg.lr_opacity, cfg.lr_sh, cfg.lr_features};
  const auto widths = row_widths(cloud);
  for (int g = 0; g < kGroupCount; ++g) {
    m[g].assign(widths[g] * cloud.size(), 0.0);
    v[g].assign(widths[g] * cloud.size(), 0.0);
  }
  grad_accum.assign(cloud.size(), 0.0);
  grad_count.assign(cloud.size(), 0);
  lr_means_final_ = cfg.lr_means_final;
}

double OptimizerState::means_lr() const {
  if (lr[kGroupMeans] <= 0.0 || lr_means_final_ <= 0.0) return lr[kGroupMeans];
  const double t = std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  return std::exp((1.0 - t) * std::log(lr[kGroupMeans]) + t * std::log(lr_means_final_));
}

bool OptimizerState::tracks(const GaussianCloud& cloud) const {
  const auto widths = row_widths(cloud);
  for (int g = 0; g < kGroupCount; ++g)
    if (m[g].size() != widths[g] * cloud.size() || v[g].size() != widths[g] * cloud.size())
      return false;
  return grad_accum.size() == cloud.size() && grad_count.size() == cloud.size();
}

LossReport train_step(GaussianCloud& cloud, const View& view, const SceneConfig& cfg,
                      OptimizerState& st) {
  const Camera& cam = view.camera;
  require(view.image.width == cam.width && view.image.height == cam.height &&
              view.image.channels == 3,
          ErrorCode::kContractViolation, "train_step: target image does not match camera");
  require(view.mask.empty() || (view.mask.width == cam.width && view.mask.height == cam.height),
          ErrorCode::kContractViolation, "train_step: mask does not match camera");
  require(st.tracks(cloud), ErrorCode::kContractViolation,
          "train_step: optimizer state does not track the cloud");

  const RenderSettings rs = cfg.render_settings();
  const RenderOutput out = render(cloud, cam, channels_for(cfg, !view.mask.empty()), rs);
  RenderUpstream up;
  LossReport report = evaluate_view_losses(out, view.image, view.mask, cfg, up);
  check_finite(report, st.step, cam.view_id);
  const RenderGrads grads = render_backward(cloud, cam, out, up, rs);

  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, st.step), c2 = 1.0 - std::pow(b2, st.step);
  auto params = cloud_groups(cloud);
  const auto gs = grad_groups(grads);
  double norm2 = 0.0;
  for (int g = 0; g < kGroupCount; ++g) {
    const double lr = g == kGroupMeans ? st.means_lr() : st.lr[g];
    std::vector<double>& p = *params[g];
    const std::vector<double>& grad = *gs[g];
    std::vector<double>& m = st.m[g];
    std::vector<double>& v = st.v[g];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = grad[i];
      norm2 += gi * gi;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
  st.last_grad_norm = std::sqrt(norm2);

  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (grads.rendered[i]) {
      st.grad_accum[i] += grads.mean2d_norm[i];
      st.grad_count[i] += 1;
    }
  return report;
}

DensifyStats densify_and_prune(GaussianCloud& cloud, OptimizerState& st, const SceneConfig& cfg) {
  require(st.tracks(cloud), ErrorCode::kContractViolation,
          "densify: optimizer state does not track the cloud");
  DensifyStats stats;
  const std::size_t n = cloud.size();
  const double small = cfg.percent_dense * st.scene_extent;

  std::vector<bool> keep(n, true);
  GaussianCloud born(0, cloud.feature_dim, cloud.sh_degree);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t budget = cfg.max_gaussians > static_cast<int>(n) ? cfg.max_gaussians - n : 0;

  for (std::size_t i = 0; i < n && budget > 0; ++i) {
    if (st.grad_count[i] == 0) continue;
    const double mean_grad = st.grad_accum[i] / st.grad_count[i];
    if (mean_grad < cfg.densify_grad_threshold) continue;
    const Eigen::Vector3d ls(cloud.log_scales[3 * i], cloud.log_scales[3 * i + 1],
                             cloud.log_scales[3 * i + 2]);
    if (std::exp(ls.maxCoeff()) <= small) {
      born.append_row(cloud, i);
      ++stats.cloned;
      --budget;
      continue;
    }
    const Eigen::Vector4d q(cloud.rotations[4 * i], cloud.rotations[4 * i + 1],
                            cloud.rotations[4 * i + 2], cloud.rotations[4 * i + 3]);
    const Eigen::Matrix3d r = quaternion_to_matrix(q);
    const Eigen::Vector3d s = ls.array().exp();
    for (int child = 0; child < 2; ++child) {
      const Eigen::Vector3d z(normal(st.rng), normal(st.rng), normal(st.rng));
      const Eigen::Vector3d offset = r * s.cwiseProduct(z);
      born.append_row(cloud, i);
      const std::size_t row = born.size() - 1;
      for (int k = 0; k < 3; ++k) {
        born.means[3 * row + k] += offset[k];
        born.log_scales[3 * row + k] -= std::log(cfg.split_scale_divisor);
      }
    }
    keep[i] = false;
    ++stats.split;
    --budget;
  }

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i] && cloud.opacity(i) < cfg.prune_opacity) {
      keep[i] = false;
      ++stats.pruned;
    }
    if (keep[i]) rows.push_back(i);
  }
  GaussianCloud next = cloud.subset(rows);
  std::size_t fresh = 0;
  for (std::size_t j = 0; j < born.size(); ++j) {
    if (born.opacity(j) < cfg.prune_opacity) {
      ++stats.pruned;
      continue;
    }
    next.append_row(born, j);
    ++fresh;
  }
  cloud = std::move(next);
  remap_state(st, cloud, rows, fresh);
  return stats;
}

double camera_extent(const std::vector<View>& views) {
  if (views.empty()) return 1.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  for (const View& v : views) center += v.camera.center();
  center /= static_cast<double>(views.size());
  double radius = 0.0;
  for (const View& v : views) radius = std::max(radius, (v.camera.center() - center).norm());
  return 1.1 * std::max(radius, 1e-6);
}

GaussianCloud init_cloud_from_points(const std::vector<Eigen::Vector3d>& points,
                                     const std::vector<Eigen::Vector3d>& colors,
                                     const SceneConfig& cfg) {
  require(!points.empty(), ErrorCode::kInvalidParameter, "init: empty point cloud");
  require(colors.empty() || colors.size() == points.size(), ErrorCode::kInvalidParameter,
          "init: one colour per point required");
  const std::size_t n = points.size();
  GaussianCloud c(n, cfg.feature_dim, cfg.sh_degree);
  std::vector<double> flat(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) flat[3 * i + k] = points[i][k];
  const KdTree tree(flat.data(), n, 3);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> feat(-cfg.feature_init_range, cfg.feature_init_range);
  const int nb = c.sh_basis();
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) c.means[3 * i + k] = points[i][k];
    const auto hits = tree.knn(&flat[3 * i], 3, i);
    double d2 = 0.0;
    for (const auto& h : hits) d2 += h.first;
    d2 = hits.empty() ? 1e-4 : std::max(d2 / hits.size(), 1e-7);
    const double ls = std::log(std::sqrt(d2));
    for (int k = 0; k < 3; ++k) c.log_scales[3 * i + k] = ls;
    c.rotations[4 * i] = 1.0;
    c.opacity_logits[i] = logit(0.1);
    for (int ch = 0; ch < 3; ++ch) {
      const double col = colors.empty() ? 0.5 : colors[i][ch];
      c.sh_coeffs[3 * nb * i + ch * nb] = (col - 0.5) / 0.28209479177387814;
    }
  }
  for (double& f : c.features) f = feat(rng);
  return c;
}

TrainResult optimize_scene(const std::vector<View>& views, const GaussianCloud& init,
                           const SceneConfig& cfg, const TrainOutputs& outputs) {
  require(!views.empty(), ErrorCode::kInvalidParameter, "optimize_scene: no views");
  require(!init.empty(), ErrorCode::kInvalidParameter, "optimize_scene: empty initialization");
  cfg.validate();
  init.validate();

  TrainResult result;
  result.cloud = init;
  GaussianCloud& cloud = result.cloud;
  OptimizerState st(cloud, cfg);
  st.scene_extent = camera_extent(views);

  std::ofstream csv;
  if (!outputs.log_csv.empty()) {
    if (outputs.log_csv.has_parent_path())
      std::filesystem::create_directories(outputs.log_csv.parent_path());
    csv.open(outputs.log_csv);
    require(csv.good(), ErrorCode::kIo, "cannot open " + outputs.log_csv.string());
    write_loss_csv_header(csv);
  }
  auto checkpoint = [&](int iteration) {
    if (outputs.checkpoint_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof(name), "iter_%06d", iteration);
    const auto base = outputs.checkpoint_dir / name;
    save_checkpoint(cloud, base.string() + ".osp3");
    const nlohmann::json manifest = {{"iteration", iteration},
                                     {"gaussians", cloud.size()},
                                     {"config_hash", outputs.config_hash},
                                     {"seed", cfg.seed},
                                     {"checkpoint", std::string(name) + ".osp3"}};
    write_text_file(base.string() + ".json", manifest.dump(1) + "\n");
  };

  std::mt19937_64 order_rng(cfg.seed);
  std::vector<int> perm(views.size());
  std::size_t cursor = perm.size();
  for (int it = 0; it < cfg.iterations; ++it) {
    if (cursor == perm.size()) {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), order_rng);
      cursor = 0;
    }
    const int vi = perm[cursor++];
    LossReport report = train_step(cloud, views[vi], cfg, st);
    const int done = it + 1;
    if (done >= cfg.densify_from && done <= cfg.densify_until && done % cfg.densify_interval == 0 &&
        done < cfg.iterations)
      densify_and_prune(cloud, st, cfg);
    if (csv.is_open()) write_loss_csv_row(csv, done, report, cloud.size(), st.means_lr());
    if (outputs.progress) outputs.progress(done, report, cloud.size());
    report.prototypes.clear();
    result.history.push_back(std::move(report));
    result.view_order.push_back(vi);
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.iterations)
      checkpoint(done);
  }
  checkpoint(cfg.iterations);
  return result;
}

}  // namespace osp3d

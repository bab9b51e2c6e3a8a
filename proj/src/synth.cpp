#include "osp3d/synth.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <random>

#include "osp3d/clustering.hpp"
#include "osp3d/detail/sh_basis.hpp"
#include "osp3d/io.hpp"
#include "osp3d/masks.hpp"
#include "osp3d/rasterizer.hpp"

namespace osp3d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kFov = 45.0 * std::numbers::pi / 180.0;
const Eigen::Vector3d kUp(0.0, -1.0, 0.0);

Eigen::Vector3d sample_in_object(const SyntheticObject& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d p;
  do {
    p = {u(rng), u(rng), u(rng)};
  } while (o.shape == "ellipsoid" && p.squaredNorm() > 1.0);
  p = p.cwiseProduct(o.half_extent);
  const double c = std::cos(o.yaw), s = std::sin(o.yaw);
  return o.center + Eigen::Vector3d(c * p.x() + s * p.z(), p.y(), -s * p.x() + c * p.z());
}

double object_volume(const SyntheticObject& o) {
  const double box = 8.0 * o.half_extent.prod();
  return o.shape == "box" ? box : box * std::numbers::pi / 6.0;
}

Camera ring_camera(double angle, double elevation, double distance, const SynthOptions& opt, int id) {
  const Eigen::Vector3d eye(distance * std::cos(angle), -elevation, distance * std::sin(angle));
  const double f = 0.5 * opt.width / std::tan(0.5 * kFov);
  return Camera::look_at(eye, {0.0, -0.12, 0.0}, kUp, f, f, opt.width, opt.height, id);
}

// Shuffles the contiguous ids 1..N of a view so no cross-view numbering is implied.
void shuffle_ids(IdMap& ids, std::mt19937_64& rng) {
  const int n = normalize_ids(ids);
  std::vector<std::uint16_t> perm(n + 1);
  std::iota(perm.begin(), perm.end(), std::uint16_t{0});
  std::shuffle(perm.begin() + 1, perm.end(), rng);
  for (auto& v : ids.data) v = perm[v];
}

}  // namespace

const std::vector<std::pair<std::string, std::array<double, 3>>>& synth_palette() {
  static const std::vector<std::pair<std::string, std::array<double, 3>>> p = {
      {"red", {1.0, 0.0, 0.0}},    {"blue", {0.0, 0.0, 1.0}},    {"green", {0.0, 1.0, 0.0}},
      {"yellow", {1.0, 1.0, 0.0}}, {"magenta", {1.0, 0.0, 1.0}}, {"cyan", {0.0, 1.0, 1.0}},
      {"orange", {1.0, 0.5, 0.0}}, {"purple", {0.5, 0.0, 1.0}},  {"lime", {0.5, 1.0, 0.0}},
      {"pink", {1.0, 0.0, 0.5}},   {"azure", {0.0, 0.5, 1.0}},   {"teal", {0.0, 1.0, 0.5}}};
  return p;
}

IdMap oversegment_ids(const IdMap& ids, int parts, std::uint64_t seed) {
  IdMap out = ids;
  if (parts <= 1) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const int n = max_id(ids);
  std::vector<std::vector<std::pair<double, std::size_t>>> pixels(n + 1);
  std::vector<Eigen::Vector2d> dir(n + 1);
  for (int i = 1; i <= n; ++i) {
    const double a = angle(rng);
    dir[i] = {std::cos(a), std::sin(a)};
  }
  for (int y = 0; y < ids.height; ++y)
    for (int x = 0; x < ids.width; ++x) {
      const int id = ids.at(x, y);
      if (id) pixels[id].emplace_back(dir[id].dot(Eigen::Vector2d(x, y)), ids.index(x, y, 0));
    }
  int next = 0;
  for (int i = 1; i <= n; ++i) {
    auto& px = pixels[i];
    if (px.empty()) continue;
    std::sort(px.begin(), px.end());
    const int k = std::min<int>(parts, static_cast<int>(px.size()));
    for (std::size_t j = 0; j < px.size(); ++j)
      out.data[px[j].second] = static_cast<std::uint16_t>(next + 1 + j * k / px.size());
    next += k;
  }
  require(next <= 65535, ErrorCode::kContractViolation, "oversegment_ids: id overflow");
  return out;
}

IdMap erode_ids(const IdMap& ids, int iterations) {
  IdMap cur = ids;
  for (int it = 0; it < iterations; ++it) {
    IdMap next = cur;
    for (int y = 0; y < cur.height; ++y)
      for (int x = 0; x < cur.width; ++x) {
        const auto id = cur.at(x, y);
        if (!id) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= cur.width || yy >= cur.height) continue;
            if (cur.at(xx, yy) != id) next.at(x, y) = 0;
          }
      }
    cur = std::move(next);
  }
  return cur;
}

SyntheticScene synth_generate(const SynthOptions& opt) {
  require(opt.objects >= 1, ErrorCode::kInvalidParameter, "synth: need at least one object");
  require(opt.objects <= static_cast<int>(synth_palette().size()), ErrorCode::kInvalidParameter,
          "synth: at most " + std::to_string(synth_palette().size()) + " objects");
  require(opt.train_views >= 1 && opt.test_views >= 0 && opt.width >= 1 && opt.height >= 1 &&
              opt.gaussians_per_object >= 1 && opt.init_points_per_object >= 1 &&
              opt.oversegment >= 1 && opt.erode >= 0,
          ErrorCode::kInvalidParameter, "synth: invalid option");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SyntheticScene s;

  const int n = opt.objects;
  const double ring = n == 1 ? 0.0 : std::max(0.45, 0.26 / std::sin(std::numbers::pi / n));
  const double phase = 2.0 * std::numbers::pi * u(rng);
  for (int i = 0; i < n; ++i) {
    SyntheticObject o;
    o.shape = u(rng) < 0.5 ? "ellipsoid" : "box";
    o.color = synth_palette()[i].first;
    const auto& c = synth_palette()[i].second;
    o.rgb = {c[0], c[1], c[2]};
    o.half_extent = {0.12 + 0.08 * u(rng), 0.10 + 0.10 * u(rng), 0.12 + 0.08 * u(rng)};
    o.yaw = std::numbers::pi * u(rng);
    const double a = phase + 2.0 * std::numbers::pi * i / n;
    o.center = {ring * std::cos(a), -o.half_extent.y(), ring * std::sin(a)};
    s.objects.push_back(o);
  }

  s.cloud = GaussianCloud(0, opt.feature_dim, opt.sh_degree);
  const int nb = s.cloud.sh_basis();
  for (int i = 0; i < n; ++i) {
    const SyntheticObject& o = s.objects[i];
    const double scale = 0.6 * std::cbrt(object_volume(o) / opt.gaussians_per_object);
    GaussianCloud g(opt.gaussians_per_object, opt.feature_dim, opt.sh_degree);
    for (int k = 0; k < opt.gaussians_per_object; ++k) {
      const Eigen::Vector3d p = sample_in_object(o, rng);
      for (int a = 0; a < 3; ++a) {
        g.means[3 * k + a] = p[a];
        g.log_scales[3 * k + a] = std::log(scale);
        g.sh_coeffs[3 * nb * k + a * nb] = (o.rgb[a] - 0.5) / detail::kShC0;
      }
      g.rotations[4 * k] = 1.0;
      g.opacity_logits[k] = logit(0.9);
    }
    for (int k = 0; k < opt.gaussians_per_object; ++k) {
      s.cloud.append_row(g, k);
      s.labels.push_back(i);
    }
  }

  double radius = 0.0;
  for (const auto& o : s.objects) radius = std::max(radius, o.center.norm() + o.half_extent.maxCoeff());
  const double distance = std::max(2.4, 1.3 * radius / std::tan(0.5 * kFov));
  std::normal_distribution<double> jitter(0.0, 1.0);
  auto make_view = [&](double angle, double elevation, int id, bool corrupt) {
    View v;
    v.camera = ring_camera(angle, elevation, distance, opt, id);
    v.image = render(s.cloud, v.camera, channel::kColor).color;
    IdMap ids = render_instance_ids(s.cloud, s.labels, v.camera);
    if (corrupt) {
      ids = oversegment_ids(ids, opt.oversegment, rng());
      ids = erode_ids(ids, opt.erode);
    }
    shuffle_ids(ids, rng);
    v.mask = std::move(ids);
    return v;
  };
  for (int k = 0; k < opt.train_views; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / opt.train_views;
    const double elevation = distance * (k % 2 ? 0.25 : 0.5);
    s.train.push_back(make_view(angle, elevation, k, true));
  }
  for (int k = 0; k < opt.test_views; ++k) {
    const double angle = 2.0 * std::numbers::pi * (k + 0.5) / opt.test_views + 0.1;
    s.test.push_back(make_view(angle, distance * 0.37, opt.train_views + k, false));
  }

  for (int i = 0; i < n; ++i)
    for (int k = 0; k < opt.init_points_per_object; ++k) {
      Eigen::Vector3d p = sample_in_object(s.objects[i], rng);
      for (int a = 0; a < 3; ++a) p[a] += opt.init_noise * jitter(rng);
      Eigen::Vector3d c = s.objects[i].rgb;
      for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a] + 0.1 * jitter(rng), 0.0, 1.0);
      s.init_points.push_back(p);
      s.init_colors.push_back(c);
    }
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < opt.gt_points_per_object; ++k) {
      s.gt_points.positions.push_back(sample_in_object(s.objects[i], rng));
      s.gt_points.gt_instance.push_back(i);
      s.gt_points.gt_semantic.push_back(i);
    }
  return s;
}

void save_synthetic_scene(const SyntheticScene& s, const fs::path& dir) {
  fs::create_directories(dir);
  save_dataset(s.train, dir / "train.json", "train");
  save_dataset(s.test, dir / "test.json", "test");
  save_checkpoint(s.cloud, dir / "gt_cloud.osp3");
  ClusterResult gt;
  gt.labels = s.labels;
  gt.count = static_cast<int>(s.objects.size());
  gt.probabilities.assign(s.labels.size(), 1.0);
  save_cluster_csv(gt, dir / "gt_labels.csv");
  save_point_labels(s.gt_points, dir / "gt_points.csv");

  GaussianCloud init(s.init_points.size(), 1, 0);
  for (std::size_t i = 0; i < s.init_points.size(); ++i)
    for (int a = 0; a < 3; ++a) {
      init.means[3 * i + a] = s.init_points[i][a];
      init.sh_coeffs[3 * i + a] = (s.init_colors[i][a] - 0.5) / detail::kShC0;
    }
  save_ply(init, dir / "init_points.ply");

  json objs = json::array();
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    objs.push_back({{"id", i},
                    {"shape", o.shape},
                    {"color", o.color},
                    {"rgb", {o.rgb.x(), o.rgb.y(), o.rgb.z()}},
                    {"center", {o.center.x(), o.center.y(), o.center.z()}},
                    {"half_extent", {o.half_extent.x(), o.half_extent.y(), o.half_extent.z()}},
                    {"yaw", o.yaw}});
  }
  write_text_file(dir / "scene.json", json({{"objects", objs}}).dump(1) + "\n");
}

void load_point_cloud(const fs::path& ply, std::vector<Eigen::Vector3d>& points,
                      std::vector<Eigen::Vector3d>& colors) {
  const GaussianCloud c = load_ply(ply, 1, 0);
  points.clear();
  colors.clear();
  const int nb = c.sh_basis();
  for (std::size_t i = 0; i < c.size(); ++i) {
    points.emplace_back(c.means[3 * i], c.means[3 * i + 1], c.means[3 * i + 2]);
    Eigen::Vector3d col;
    for (int a = 0; a < 3; ++a)
      col[a] = std::clamp(c.sh_coeffs[3 * nb * i + a * nb] * detail::kShC0 + 0.5, 0.0, 1.0);
    colors.push_back(col);
  }
}

}  // namespace osp3d

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "osp3d/io.hpp"
#include "osp3d/trainer.hpp"
#include "test_util.hpp"

using namespace osp3d;
using namespace osp3d::testing;
namespace fs = std::filesystem;

namespace {

SceneConfig f64_config() {
  SceneConfig cfg;
  cfg.f64 = true;
  cfg.seed = 11;
  return cfg;
}

// A few random views of a random cloud, rendered as targets with a coarse
// two-instance mask split at x = 0.
std::vector<View> random_views(const GaussianCloud& gt, int count, int size) {
  std::vector<View> views;
  for (int v = 0; v < count; ++v) {
    const double a = 0.25 * v;
    const Eigen::Vector3d eye(2.5 * std::sin(a), 0.2, 2.5 - 2.5 * std::cos(a));
    View view;
    view.camera = Camera::look_at(eye, {0, 0, 2.5}, {0, -1, 0}, size, size, size, size, v);
    RenderSettings rs;
    rs.precision = Precision::kF64;
    view.image = render(gt, view.camera, channel::kColor, rs).color;
    std::vector<int> labels(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) labels[i] = gt.means[3 * i] < 0 ? 0 : 1;
    view.mask = render_instance_ids(gt, labels, view.camera, 0.3, rs);
    views.push_back(std::move(view));
  }
  return views;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("converged RGB gives a zero gradient") {
  std::mt19937_64 rng(1);
  GaussianCloud c = random_cloud(rng, 12, 8, 1);
  SceneConfig cfg = f64_config();
  cfg.lambda_inst2d = 0.0;
  cfg.lambda_var = 0.0;
  View view;
  view.camera = axis_camera(16, 16, 20.0);
  view.image = render(c, view.camera, channel::kColor, cfg.render_settings()).color;
  OptimizerState st(c, cfg);
  const LossReport r = train_step(c, view, cfg, st);
  CHECK(r.total == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(st.last_grad_norm < 1e-9);
}

TEST_CASE("variance-only step pulls the two features together") {
  GaussianCloud c = two_splats();
  SceneConfig cfg = f64_config();
  cfg.feature_dim = 1;
  cfg.sh_degree = 0;
  cfg.beta = 0.0;
  cfg.lambda_inst2d = 0.0;
  cfg.lambda_var = 1.0;
  cfg.lr_means = cfg.lr_rotations = cfg.lr_scales = cfg.lr_opacity = cfg.lr_sh = 0.0;
  View view;
  view.camera = pixel_camera();
  view.image = render(c, view.camera, channel::kColor, cfg.render_settings()).color;
  OptimizerState st(c, cfg);
  const double f1 = c.features[0], f2 = c.features[1];
  const LossReport r = train_step(c, view, cfg, st);
  CHECK(r.var == doctest::Approx(0.0625));
  CHECK(c.features[0] < f1);
  CHECK(c.features[1] > f2);
  CHECK(c.means == two_splats().means);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  std::mt19937_64 rng(2);
  GaussianCloud c = random_cloud(rng, 4, 8, 1);
  SceneConfig cfg = f64_config();
  View view;
  view.camera = axis_camera(8, 8, 10.0);
  view.camera.view_id = 7;
  view.image = ImageD(8, 8, 3, 0.5);
  view.image.at(2, 2, 1) = std::nan("");
  OptimizerState st(c, cfg);
  const GaussianCloud before = c;
  try {
    train_step(c, view, cfg, st);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("view 7") != std::string::npos);
    CHECK(msg.find("term l1") != std::string::npos);
  }
  CHECK(c.means == before.means);
  CHECK(st.step == 0);
}

TEST_CASE("densify and prune rules") {
  SceneConfig cfg;
  cfg.percent_dense = 0.01;
  GaussianCloud c(3, 4, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    c.means[3 * i + 2] = 2.0 + i;
    c.rotations[4 * i] = 1.0;
    for (int k = 0; k < 3; ++k) c.log_scales[3 * i + k] = std::log(0.005);
    c.opacity_logits[i] = logit(0.5);
    for (int k = 0; k < 4; ++k) c.features[4 * i + k] = 0.1 * (i + 1) + 0.01 * k;
  }
  OptimizerState st(c, cfg);
  st.scene_extent = 1.0;

  SUBCASE("nothing qualifies") {
    const GaussianCloud before = c;
    const DensifyStats s = densify_and_prune(c, st, cfg);
    CHECK(s.cloned + s.split + s.pruned == 0);
    CHECK(c.means == before.means);
    CHECK(c.features == before.features);
  }
  SUBCASE("small Gaussian over threshold is cloned") {
    st.grad_accum[1] = 3 * 5e-4;
    st.grad_count[1] = 3;
    st.m[kGroupMeans][4] = 0.3;
    const DensifyStats s = densify_and_prune(c, st, cfg);
    CHECK(s.cloned == 1);
    REQUIRE(c.size() == 4);
    for (int k = 0; k < 4; ++k) CHECK(c.features[4 * 3 + k] == c.features[4 * 1 + k]);
    CHECK(st.tracks(c));
    CHECK(st.m[kGroupMeans][4] == 0.3);
    for (int k = 0; k < 3; ++k) CHECK(st.m[kGroupMeans][9 + k] == 0.0);
  }
  SUBCASE("large Gaussian over threshold splits in two") {
    for (int k = 0; k < 3; ++k) c.log_scales[3 + k] = std::log(0.2);
    st.grad_accum[1] = 1e-3;
    st.grad_count[1] = 1;
    const DensifyStats s = densify_and_prune(c, st, cfg);
    CHECK(s.split == 1);
    REQUIRE(c.size() == 4);
    for (std::size_t row : {2u, 3u}) {
      CHECK(std::exp(c.log_scales[3 * row]) == doctest::Approx(0.2 / 1.6));
      CHECK(c.features[4 * row + 2] == doctest::Approx(0.2 + 0.02));
    }
    CHECK(st.tracks(c));
  }
  SUBCASE("low opacity is pruned") {
    c.opacity_logits[0] = logit(0.001);
    const DensifyStats s = densify_and_prune(c, st, cfg);
    CHECK(s.pruned == 1);
    REQUIRE(c.size() == 2);
    CHECK(c.means[2] == 3.0);
    CHECK(st.tracks(c));
  }
  SUBCASE("cap on the number of Gaussians") {
    cfg.max_gaussians = 3;
    st.grad_accum.assign(3, 1.0);
    st.grad_count.assign(3, 1);
    densify_and_prune(c, st, cfg);
    CHECK(c.size() == 3);
  }
}

TEST_CASE("optimize_scene: zero iterations, determinism, loss decrease") {
  std::mt19937_64 rng(3);
  const GaussianCloud gt = random_cloud(rng, 25, 8, 1);
  const auto views = random_views(gt, 6, 24);
  GaussianCloud init = gt;
  std::normal_distribution<double> noise(0.0, 0.05);
  for (double& v : init.means) v += noise(rng);
  for (double& v : init.sh_coeffs) v = 0.0;
  for (double& v : init.features) v = 0.05 * noise(rng);

  const fs::path dir = fs::temp_directory_path() / "osp3d_test_trainer";
  fs::remove_all(dir);

  SceneConfig cfg = f64_config();
  cfg.iterations = 0;
  TrainOutputs out;
  out.checkpoint_dir = dir / "zero";
  const TrainResult zero = optimize_scene(views, init, cfg, out);
  CHECK(zero.cloud.means == init.means);
  CHECK(zero.history.empty());
  const GaussianCloud saved = load_checkpoint(dir / "zero" / "iter_000000.osp3");
  for (std::size_t i = 0; i < init.means.size(); ++i)
    CHECK(saved.means[i] == static_cast<float>(init.means[i]));

  cfg.iterations = 240;
  cfg.densify_from = 60;
  cfg.densify_interval = 60;
  cfg.lr_means = 1e-3;
  cfg.lr_means_final = 1e-5;
  cfg.checkpoint_interval = 120;
  out.checkpoint_dir = dir / "a";
  out.log_csv = dir / "a" / "log.csv";
  const TrainResult a = optimize_scene(views, init, cfg, out);
  out.checkpoint_dir = dir / "b";
  out.log_csv.clear();
  const TrainResult b = optimize_scene(views, init, cfg, out);
  REQUIRE(a.history.size() == 240);
  CHECK(a.view_order == b.view_order);
  bool same = true;
  for (std::size_t i = 0; i < a.history.size(); ++i)
    same = same && a.history[i].total == b.history[i].total;
  CHECK(same);
  CHECK(file_hash(dir / "a" / "iter_000240.osp3") == file_hash(dir / "b" / "iter_000240.osp3"));
  CHECK(fs::exists(dir / "a" / "iter_000120.json"));
  CHECK(fs::exists(dir / "a" / "log.csv"));

  // Each epoch visits every view once.
  std::vector<int> first(a.view_order.begin(), a.view_order.begin() + 6);
  std::sort(first.begin(), first.end());
  CHECK(first == std::vector<int>{0, 1, 2, 3, 4, 5});

  std::vector<double> head, tail;
  for (int i = 0; i < 24; ++i) head.push_back(a.history[i].total);
  for (int i = 216; i < 240; ++i) tail.push_back(a.history[i].total);
  CHECK(median(tail) < median(head));
}

TEST_CASE("init from points") {
  SceneConfig cfg;
  cfg.seed = 5;
  std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}, {0, 0, 0.1}};
  const GaussianCloud c = init_cloud_from_points(pts, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}}, cfg);
  REQUIRE(c.size() == 4);
  CHECK(c.opacity(2) == doctest::Approx(0.1));
  CHECK(std::exp(c.log_scales[0]) == doctest::Approx(0.1));
  CHECK(sh_eval(1, c.sh_coeffs.data(), {0, 0, 1})[0] == doctest::Approx(1.0));
  for (double f : c.features) CHECK(std::abs(f) <= 0.05);
  CHECK(init_cloud_from_points(pts, {}, cfg).features == c.features);
}

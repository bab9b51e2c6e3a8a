// osp3d: command-line front end over the OpenSplat3D C interface.
#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "opensplat3d.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int report_error(osp3d_status status, const std::string& message) {
  const nlohmann::ordered_json j = {
      {"error", {{"status", osp3d_status_name(status)}, {"code", static_cast<int>(status)}, {"message", message}}}};
  std::fprintf(stderr, "%s\n", j.dump(1).c_str());
  return status == OSP3D_USAGE ? kExitUsage : kExitRuntime;
}

int finish(osp3d_status status, osp3d_report*& report) {
  if (status != OSP3D_OK) return report_error(status, osp3d_last_error());
  std::printf("%s\n", osp3d_report_text(report));
  osp3d_report_free(report);
  return 0;
}

struct Config {
  osp3d_config* handle = nullptr;
  ~Config() { osp3d_config_free(handle); }
};

const char* c_str_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

std::vector<const char*> pointers(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

std::string existing(const fs::path& p) { return fs::exists(p) ? p.string() : std::string(); }

// A scene argument may name a directory holding train.json.
std::string manifest_of(const std::string& scene) {
  if (!scene.empty() && fs::is_directory(scene)) return (fs::path(scene) / "train.json").string();
  return scene;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OpenSplat3D: Gaussian splatting with 3D instance features"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  int threads = 0;
  std::uint64_t seed = 0;
  bool f64 = false;
  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  app.add_flag("--f64", f64, "64-bit deterministic mode");
  app.add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--set", sets, "Config override section.key=value")->allow_extra_args(false);

  int iters = -1;
  std::string out, scene, init, checkpoint, instances, manifest, embedder = "mock", text, run,
                  clusters, test_manifest, gt_points;
  std::vector<std::string> channels{"color"}, metrics, queries;
  double threshold = -1.0;

  const CLI::Validator embedder_check(
      [](std::string& s) {
        return s == "mock" || fs::exists(s) ? std::string() : "embedder must be 'mock' or an existing index file";
      },
      "EMBEDDER");

  osp3d_synth_options so;
  osp3d_synth_options_default(&so);
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--objects", so.objects, "Number of objects")->check(CLI::PositiveNumber);
  synth->add_option("--views", so.train_views, "Training views")->check(CLI::PositiveNumber);
  synth->add_option("--test-views", so.test_views, "Held-out views")->check(CLI::NonNegativeNumber);
  synth->add_option("--size", so.width, "Image width and height")->check(CLI::PositiveNumber);
  synth->add_option("--gaussians", so.gaussians_per_object, "Gaussians per object")->check(CLI::PositiveNumber);
  synth->add_option("--over", so.oversegment, "Mask over-segmentation factor")->check(CLI::PositiveNumber);
  synth->add_option("--erode", so.erode, "Mask erosion iterations")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "Optimize a scene");
  train->add_option("--scene", scene, "Scene directory or training manifest")->check(CLI::ExistingPath)->required();
  train->add_option("--init", init, "Initial PLY points or .osp3 checkpoint")->check(CLI::ExistingPath);
  train->add_option("--iters", iters, "Iterations")->check(CLI::NonNegativeNumber);
  train->add_option("--out", out, "Output directory")->required();

  auto* cluster = app.add_subcommand("cluster", "Cluster Gaussian features into instances");
  cluster->add_option("--checkpoint", checkpoint, "Trained cloud")->check(CLI::ExistingPath)->required();
  cluster->add_option("--out", out, "Output directory")->required();

  auto* embed = app.add_subcommand("embed", "Embed instances for language queries");
  embed->add_option("--checkpoint", checkpoint, "Trained cloud")->check(CLI::ExistingPath)->required();
  embed->add_option("--instances", instances, "Instance table JSON")->check(CLI::ExistingPath)->required();
  embed->add_option("--manifest", manifest, "Views used for crops")->check(CLI::ExistingPath)->required();
  embed->add_option("--embedder", embedder, "mock or an embedding index JSON")->check(embedder_check);
  embed->add_option("--out", out, "Output directory")->required();

  auto* query = app.add_subcommand("query", "Rank instances for a text query");
  query->add_option("--text", text, "Query text")->required();
  query->add_option("--run", run, "Pipeline output directory supplying the defaults")->check(CLI::ExistingPath);
  query->add_option("--checkpoint", checkpoint, "Trained cloud")->check(CLI::ExistingPath);
  query->add_option("--instances", instances, "Embedded instance table JSON")->check(CLI::ExistingPath);
  query->add_option("--manifest", manifest, "Views to write silhouettes for")->check(CLI::ExistingPath);
  query->add_option("--embedder", embedder, "mock or an embedding index JSON")->check(embedder_check);
  query->add_option("--threshold", threshold, "Select every instance scoring at least this");
  query->add_option("--out", out, "Output directory");

  auto* render = app.add_subcommand("render", "Render channel maps");
  render->add_option("--checkpoint", checkpoint, "Cloud to render")->check(CLI::ExistingPath)->required();
  render->add_option("--manifest", manifest, "Cameras")->check(CLI::ExistingPath)->required();
  render->add_option("--channels", channels, "color,feature,variance,alpha,depth,ids")->delimiter(',');
  render->add_option("--clusters", clusters, "Cluster CSV for the ids channel")->check(CLI::ExistingPath);
  render->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Compute metrics");
  eval->add_option("--run", run, "Pipeline output directory supplying the defaults")->check(CLI::ExistingPath);
  eval->add_option("--checkpoint", checkpoint, "Trained cloud")->check(CLI::ExistingPath);
  eval->add_option("--clusters", clusters, "Cluster CSV")->check(CLI::ExistingPath);
  eval->add_option("--test", test_manifest, "Held-out manifest")->check(CLI::ExistingPath);
  eval->add_option("--gt-points", gt_points, "Ground-truth labeled points CSV")->check(CLI::ExistingPath);
  eval->add_option("--metrics", metrics, "psnr,miou3d,ap,miou2d")->delimiter(',')->required();
  eval->add_option("--out", out, "Output directory");

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage");
  pipeline->add_option("--scene", scene, "synth://<N>obj, scene directory or manifest")->required();
  pipeline->add_option("--iters", iters, "Iterations")->check(CLI::NonNegativeNumber);
  pipeline->add_option("--eval", metrics, "Metrics to report")->delimiter(',');
  pipeline->add_option("--query", queries, "Text query (repeatable)");
  pipeline->add_option("--embedder", embedder, "mock or an embedding index JSON")->check(embedder_check);
  pipeline->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error(OSP3D_USAGE, e.what());
  }

  if (osp3d_set_threads(threads) != OSP3D_OK) return report_error(OSP3D_USAGE, osp3d_last_error());
  Config cfg;
  osp3d_status st = osp3d_config_new(&cfg.handle);
  if (st == OSP3D_OK && !config_path.empty()) st = osp3d_config_load(cfg.handle, config_path.c_str());
  if (st == OSP3D_OK) st = osp3d_config_apply_env(cfg.handle);
  for (const auto& s : sets) {
    if (st != OSP3D_OK) break;
    const auto dot = s.find('.'), eq = s.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq)
      return report_error(OSP3D_USAGE, "--set expects section.key=value, got '" + s + "'");
    st = osp3d_config_set(cfg.handle, s.substr(0, dot).c_str(), s.substr(dot + 1, eq - dot - 1).c_str(),
                          s.substr(eq + 1).c_str());
  }
  if (st == OSP3D_OK && *seed_opt) st = osp3d_config_set(cfg.handle, "trainer", "seed", std::to_string(seed).c_str());
  if (st == OSP3D_OK && f64) st = osp3d_config_set(cfg.handle, "trainer", "f64", "true");
  if (st == OSP3D_OK && iters >= 0)
    st = osp3d_config_set(cfg.handle, "trainer", "iterations", std::to_string(iters).c_str());
  if (st == OSP3D_OK && threshold >= 0.0)
    st = osp3d_config_set(cfg.handle, "language", "query_threshold", std::to_string(threshold).c_str());
  if (st != OSP3D_OK) return report_error(st, osp3d_last_error());

  osp3d_report* report = nullptr;
  if (*synth) {
    if (*seed_opt) so.seed = seed;
    so.height = so.width;
    return finish(osp3d_synth(&so, out.c_str(), &report), report);
  }
  if (*train) {
    if (init.empty() && fs::is_directory(scene)) init = existing(fs::path(scene) / "init_points.ply");
    return finish(osp3d_train(cfg.handle, manifest_of(scene).c_str(), c_str_or_null(init), out.c_str(), &report),
                  report);
  }
  if (*cluster) return finish(osp3d_cluster(cfg.handle, checkpoint.c_str(), out.c_str(), &report), report);
  if (*embed)
    return finish(osp3d_embed(cfg.handle, checkpoint.c_str(), instances.c_str(), manifest_of(manifest).c_str(),
                              embedder.c_str(), out.c_str(), &report),
                  report);
  if (*query) {
    if (!run.empty()) {
      const fs::path r(run);
      if (checkpoint.empty()) checkpoint = (r / "train" / "cloud.osp3").string();
      if (instances.empty()) instances = (r / "embed" / "instances.json").string();
      if (manifest.empty()) manifest = existing(r / "scene" / "train.json");
      if (out.empty()) out = (r / "query").string();
    }
    if (checkpoint.empty() || instances.empty() || out.empty())
      return report_error(OSP3D_USAGE, "query needs --run or --checkpoint, --instances and --out");
    return finish(osp3d_query(cfg.handle, checkpoint.c_str(), instances.c_str(),
                              c_str_or_null(manifest_of(manifest)), embedder.c_str(), text.c_str(), out.c_str(),
                              &report),
                  report);
  }
  if (*render) {
    const auto ch = pointers(channels);
    return finish(osp3d_render(cfg.handle, checkpoint.c_str(), manifest_of(manifest).c_str(), ch.data(), ch.size(),
                               c_str_or_null(clusters), out.c_str(), &report),
                  report);
  }
  if (*eval) {
    if (!run.empty()) {
      const fs::path r(run);
      if (checkpoint.empty()) checkpoint = (r / "train" / "cloud.osp3").string();
      if (clusters.empty()) clusters = existing(r / "cluster" / "clusters.csv");
      if (test_manifest.empty()) test_manifest = existing(r / "scene" / "test.json");
      if (gt_points.empty()) gt_points = existing(r / "scene" / "gt_points.csv");
    }
    if (checkpoint.empty()) return report_error(OSP3D_USAGE, "eval needs --run or --checkpoint");
    if (fs::is_directory(test_manifest)) test_manifest = (fs::path(test_manifest) / "test.json").string();
    const auto m = pointers(metrics);
    return finish(osp3d_eval(cfg.handle, checkpoint.c_str(), c_str_or_null(clusters),
                             c_str_or_null(test_manifest), c_str_or_null(gt_points), m.data(), m.size(),
                             c_str_or_null(out), &report),
                  report);
  }
  const auto m = pointers(metrics);
  const auto q = pointers(queries);
  return finish(osp3d_pipeline(cfg.handle, scene.c_str(), m.data(), m.size(), q.data(), q.size(), embedder.c_str(),
                               out.c_str(), &report),
                report);
}

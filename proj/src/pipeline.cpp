#include "osp3d/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "osp3d/io.hpp"
#include "osp3d/parallel.hpp"
#include "osp3d/rasterizer.hpp"
#include "osp3d/trainer.hpp"

namespace osp3d {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string view_name(const char* prefix, int view_id, const char* ext) {
  char b[64];
  std::snprintf(b, sizeof b, "%s_%03d.%s", prefix, view_id, ext);
  return b;
}

void write_manifest(const fs::path& out_dir, const std::string& stage, const SceneConfig& cfg,
                    const std::vector<std::pair<std::string, fs::path>>& inputs,
                    const std::vector<std::pair<std::string, fs::path>>& outputs) {
  Json m;
  m["command"] = stage;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["f64"] = cfg.f64;
  m["threads"] = thread_count();
  m["config"] = config_to_ini(cfg);
  m["inputs"] = hash_inputs(inputs);
  m["outputs"] = hash_inputs(outputs);
  write_text_file(out_dir / (stage + "_manifest.json"), m.dump(1) + "\n");
}

std::string slug(const std::string& text) {
  std::string s;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else if (!s.empty() && s.back() != '_')
      s.push_back('_');
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s.empty() ? "query" : s;
}

GaussianCloud load_cloud_checked(const fs::path& path, const SceneConfig& cfg) {
  GaussianCloud c = path.extension() == ".ply" ? load_ply(path, cfg.feature_dim, cfg.sh_degree)
                                               : load_checkpoint(path);
  require(c.feature_dim == cfg.feature_dim && c.sh_degree == cfg.sh_degree,
          ErrorCode::kInvalidParameter,
          path.string() + ": feature dimension or SH degree differs from the config");
  return c;
}

GaussianCloud default_init(const std::vector<View>& views, const SceneConfig& cfg) {
  const double r = 0.35 * camera_extent(views);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-r, r);
  std::vector<Eigen::Vector3d> pts(1000);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  return init_cloud_from_points(pts, {}, cfg);
}

ClusterResult load_clusters_checked(const fs::path& path, std::size_t n) {
  ClusterResult c = load_cluster_csv(path);
  require(c.labels.size() == n, ErrorCode::kInvalidParameter,
          path.string() + ": label count differs from the checkpoint");
  return c;
}

}  // namespace

SynthOptions parse_synth_spec(const std::string& spec, std::uint64_t seed) {
  const std::string prefix = "synth://";
  require(spec.rfind(prefix, 0) == 0, ErrorCode::kUsage, "not a synth:// scene: " + spec);
  std::string rest = spec.substr(prefix.size());
  std::string query;
  if (auto q = rest.find('?'); q != std::string::npos) {
    query = rest.substr(q + 1);
    rest = rest.substr(0, q);
  }
  SynthOptions o;
  o.seed = seed;
  std::size_t used = 0;
  try {
    o.objects = std::stoi(rest, &used);
  } catch (const std::exception&) {
    fail(ErrorCode::kUsage, "bad synth scene '" + spec + "', expected synth://<N>obj");
  }
  require(rest.substr(used) == "obj" || rest.substr(used).empty(), ErrorCode::kUsage,
          "bad synth scene '" + spec + "', expected synth://<N>obj");
  std::size_t pos = 0;
  while (pos < query.size()) {
    const std::size_t amp = std::min(query.find('&', pos), query.size());
    const std::string item = query.substr(pos, amp - pos);
    pos = amp + 1;
    const auto eq = item.find('=');
    require(eq != std::string::npos, ErrorCode::kUsage, "bad synth option '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    long long v = 0;
    try {
      v = std::stoll(value);
    } catch (const std::exception&) {
      fail(ErrorCode::kUsage, "bad synth option value '" + item + "'");
    }
    if (key == "seed") o.seed = static_cast<std::uint64_t>(v);
    else if (key == "over") o.oversegment = static_cast<int>(v);
    else if (key == "erode") o.erode = static_cast<int>(v);
    else if (key == "views") o.train_views = static_cast<int>(v);
    else if (key == "test") o.test_views = static_cast<int>(v);
    else if (key == "size") o.width = o.height = static_cast<int>(v);
    else if (key == "gaussians") o.gaussians_per_object = static_cast<int>(v);
    else fail(ErrorCode::kUsage, "unknown synth option '" + key + "'");
  }
  return o;
}

SceneSource resolve_scene(const std::string& spec, const fs::path& work_dir, std::uint64_t seed) {
  fs::path dir;
  SceneSource s;
  if (spec.rfind("synth://", 0) == 0) {
    const SynthOptions o = parse_synth_spec(spec, seed);
    dir = work_dir / "scene";
    save_synthetic_scene(synth_generate(o), dir);
  } else if (fs::is_directory(spec)) {
    dir = spec;
  } else {
    require(fs::exists(spec), ErrorCode::kUsage, "scene not found: " + spec);
    s.train_manifest = spec;
    return s;
  }
  s.train_manifest = dir / "train.json";
  require(fs::exists(s.train_manifest), ErrorCode::kUsage,
          "scene directory has no train.json: " + dir.string());
  if (fs::exists(dir / "test.json")) s.test_manifest = dir / "test.json";
  if (fs::exists(dir / "init_points.ply")) s.init_points = dir / "init_points.ply";
  if (fs::exists(dir / "gt_points.csv")) s.gt_points = dir / "gt_points.csv";
  return s;
}

std::unique_ptr<Embedder> make_embedder(const std::string& spec) {
  if (spec.empty() || spec == "mock") return std::make_unique<MockEmbedder>();
  return std::make_unique<FileEmbedder>(spec);
}

LanguageSettings language_settings(const SceneConfig& cfg) {
  LanguageSettings s;
  s.top_k = cfg.top_k;
  s.zoom_levels = cfg.zoom_levels;
  s.expansion_ratio = cfg.expansion_ratio;
  s.silhouette_threshold = cfg.silhouette_threshold;
  s.render = cfg.render_settings();
  return s;
}

HdbscanParams hdbscan_params(const SceneConfig& cfg, std::size_t n) {
  HdbscanParams p;
  p.min_cluster_size = cfg.min_cluster_size > 0 ? cfg.min_cluster_size : default_min_cluster_size(n);
  p.min_samples = cfg.min_samples;
  p.allow_single_cluster = cfg.allow_single_cluster;
  return p;
}

Json hash_inputs(const std::vector<std::pair<std::string, fs::path>>& inputs) {
  Json out = Json::object();
  for (const auto& [name, path] : inputs) {
    if (path.empty()) continue;
    Json entry = {{"path", path.string()}, {"hash", file_hash(path)}};
    if (path.extension() == ".json" && name.find("manifest") != std::string::npos) {
      Json files = Json::object();
      const auto j = nlohmann::json::parse(read_text_file(path));
      if (j.contains("views"))
        for (const auto& v : j["views"])
          for (const char* key : {"image", "mask"})
            if (v.contains(key) && v[key].is_string()) {
              const std::string f = v[key].get<std::string>();
              files[f] = file_hash(path.parent_path() / f);
            }
      entry["files"] = files;
    }
    out[name] = entry;
  }
  return out;
}

Json stage_synth(const SynthOptions& o, const fs::path& out_dir) {
  const auto t0 = Clock::now();
  const SyntheticScene s = synth_generate(o);
  save_synthetic_scene(s, out_dir);
  SceneConfig cfg;
  cfg.seed = o.seed;
  write_manifest(out_dir, "synth", cfg, {},
                 {{"train_manifest", out_dir / "train.json"}, {"gt_cloud", out_dir / "gt_cloud.osp3"}});
  Json objs = Json::array();
  for (const auto& obj : s.objects) objs.push_back({{"shape", obj.shape}, {"color", obj.color}});
  return {{"stage", "synth"},
          {"objects", objs},
          {"gaussians", s.cloud.size()},
          {"train_views", s.train.size()},
          {"test_views", s.test.size()},
          {"out_dir", out_dir.string()},
          {"seconds", seconds_since(t0)}};
}

Json stage_train(const SceneConfig& cfg, const fs::path& train_manifest, const fs::path& init,
                 const fs::path& out_dir) {
  cfg.validate();
  const auto t0 = Clock::now();
  const std::vector<View> views = load_dataset(train_manifest);
  GaussianCloud start;
  if (init.empty()) {
    start = default_init(views, cfg);
  } else if (init.extension() == ".osp3") {
    start = load_cloud_checked(init, cfg);
  } else {
    std::vector<Eigen::Vector3d> pts, cols;
    load_point_cloud(init, pts, cols);
    start = init_cloud_from_points(pts, cols, cfg);
  }
  fs::create_directories(out_dir);
  TrainOutputs outs;
  outs.config_hash = config_hash(cfg);
  outs.log_csv = out_dir / "train_log.csv";
  if (cfg.checkpoint_interval > 0) outs.checkpoint_dir = out_dir / "checkpoints";
  const TrainResult r = optimize_scene(views, start, cfg, outs);
  save_checkpoint(r.cloud, out_dir / "cloud.osp3");
  write_manifest(out_dir, "train", cfg, {{"train_manifest", train_manifest}, {"init", init}},
                 {{"checkpoint", out_dir / "cloud.osp3"}, {"log", out_dir / "train_log.csv"}});
  Json rep = {{"stage", "train"},
              {"iterations", cfg.iterations},
              {"initial_gaussians", start.size()},
              {"gaussians", r.cloud.size()},
              {"checkpoint", (out_dir / "cloud.osp3").string()},
              {"seconds", seconds_since(t0)}};
  if (!r.history.empty()) rep["final_loss"] = r.history.back().total;
  return rep;
}

Json stage_cluster(const SceneConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
  cfg.validate();
  const auto t0 = Clock::now();
  const GaussianCloud cloud = load_cloud_checked(checkpoint, cfg);
  const HdbscanParams p = hdbscan_params(cfg, cloud.size());
  const ClusterResult c = hdbscan(cloud.features, cloud.feature_dim, p);
  fs::create_directories(out_dir);
  save_cluster_csv(c, out_dir / "clusters.csv");
  InstanceTable t = assign_instances(cloud, c);
  save_instance_table(t, out_dir / "instances.json");
  write_manifest(out_dir, "cluster", cfg, {{"checkpoint", checkpoint}},
                 {{"clusters", out_dir / "clusters.csv"}, {"instances", out_dir / "instances.json"}});
  const auto noise = std::count(c.labels.begin(), c.labels.end(), -1);
  return {{"stage", "cluster"},
          {"gaussians", cloud.size()},
          {"clusters", c.count},
          {"noise", noise},
          {"min_cluster_size", p.min_cluster_size},
          {"min_samples", p.min_samples},
          {"seconds", seconds_since(t0)}};
}

Json stage_embed(const SceneConfig& cfg, const fs::path& checkpoint, const fs::path& instances,
                 const fs::path& manifest, const std::string& embedder, const fs::path& out_dir) {
  cfg.validate();
  const auto t0 = Clock::now();
  const GaussianCloud cloud = load_cloud_checked(checkpoint, cfg);
  InstanceTable t = load_instance_table(instances);
  require(t.labels.size() == cloud.size(), ErrorCode::kInvalidParameter,
          instances.string() + ": instance table does not match the checkpoint");
  const std::vector<View> views = load_dataset(manifest);
  const auto e = make_embedder(embedder);
  embed_all(t, cloud, views, *e, language_settings(cfg));
  fs::create_directories(out_dir);
  save_instance_table(t, out_dir / "instances.json");
  write_manifest(out_dir, "embed", cfg,
                 {{"checkpoint", checkpoint}, {"instances", instances}, {"manifest", manifest},
                  {"embedder", embedder == "mock" ? fs::path() : fs::path(embedder)}},
                 {{"instances", out_dir / "instances.json"}});
  Json inst = Json::array();
  std::size_t embedded = 0;
  for (const Instance& i : t.instances) {
    embedded += i.embedded;
    inst.push_back({{"id", i.id}, {"gaussians", i.members.size()}, {"embedded", i.embedded},
                    {"views", i.views}, {"zooms", i.zooms}});
  }
  return {{"stage", "embed"},
          {"embedder", embedder},
          {"instances", inst},
          {"embedded", embedded},
          {"seconds", seconds_since(t0)}};
}

Json stage_query(const SceneConfig& cfg, const fs::path& checkpoint, const fs::path& instances,
                 const fs::path& manifest, const std::string& embedder, const std::string& text,
                 const fs::path& out_dir) {
  cfg.validate();
  const GaussianCloud cloud = load_cloud_checked(checkpoint, cfg);
  const InstanceTable t = load_instance_table(instances);
  require(t.labels.size() == cloud.size(), ErrorCode::kInvalidParameter,
          instances.string() + ": instance table does not match the checkpoint");
  const auto e = make_embedder(embedder);
  const auto ranking = query(t, text, *e);
  require(!ranking.empty() || t.instances.empty(), ErrorCode::kUndefined,
          instances.string() + ": no embedded instances (run embed first)");
  const auto selected = select_instances(ranking, cfg.query_threshold);
  const fs::path dir = out_dir / ("query_" + slug(text));
  fs::create_directories(dir);
  std::vector<std::pair<std::string, fs::path>> outputs;
  if (!manifest.empty() && !selected.empty()) {
    const RenderSettings rs = cfg.render_settings();
    std::vector<int> labels = t.labels;
    for (int& l : labels)
      l = std::find(selected.begin(), selected.end(), l) != selected.end() ? 0 : (l < 0 ? -1 : 1);
    for (const Camera& cam : load_cameras(manifest)) {
      const Mask m = render_instance_silhouette(cloud, labels, 0, cam, true, cfg.silhouette_threshold, rs);
      const fs::path p = dir / view_name("view", cam.view_id, "pgm");
      save_pgm8(m, p);
      outputs.emplace_back(p.filename().string(), p);
    }
  }
  write_manifest(dir, "query", cfg,
                 {{"checkpoint", checkpoint}, {"instances", instances}, {"manifest", manifest}}, outputs);
  Json rank = Json::array();
  for (const auto& [id, score] : ranking) rank.push_back({{"instance", id}, {"score", score}});
  return {{"stage", "query"}, {"text", text}, {"ranking", rank}, {"selected", selected},
          {"silhouettes", dir.string()}};
}

Json stage_render(const SceneConfig& cfg, const fs::path& checkpoint, const fs::path& manifest,
                  const std::vector<std::string>& channels, const fs::path& clusters,
                  const fs::path& out_dir) {
  cfg.validate();
  const GaussianCloud cloud = load_cloud_checked(checkpoint, cfg);
  unsigned mask = 0;
  bool ids = false;
  for (const auto& c : channels) {
    if (c == "color") mask |= channel::kColor;
    else if (c == "feature") mask |= channel::kFeature;
    else if (c == "variance") mask |= channel::kVariance;
    else if (c == "alpha") mask |= channel::kAlpha;
    else if (c == "depth") mask |= channel::kDepth;
    else if (c == "ids") ids = true;
    else fail(ErrorCode::kUsage, "unknown render channel '" + c + "'");
  }
  std::vector<int> labels;
  if (ids) {
    require(!clusters.empty(), ErrorCode::kUsage, "render: the ids channel needs --clusters");
    labels = load_clusters_checked(clusters, cloud.size()).labels;
  }
  fs::create_directories(out_dir);
  const RenderSettings rs = cfg.render_settings();
  std::vector<std::pair<std::string, fs::path>> outputs;
  auto out = [&](const fs::path& p) { outputs.emplace_back(p.filename().string(), p); };
  std::size_t count = 0;
  for (const Camera& cam : load_cameras(manifest)) {
    ++count;
    if (mask) {
      const RenderOutput r = render(cloud, cam, mask, rs);
      if (mask & channel::kColor) {
        save_ppm(r.color, out_dir / view_name("color", cam.view_id, "ppm"));
        out(out_dir / view_name("color", cam.view_id, "ppm"));
      }
      const std::pair<unsigned, std::pair<const char*, const ImageD*>> maps[] = {
          {channel::kFeature, {"feature", &r.feature}},
          {channel::kVariance, {"variance", &r.variance}},
          {channel::kAlpha, {"alpha", &r.alpha}},
          {channel::kDepth, {"depth", &r.depth}}};
      for (const auto& [bit, named] : maps)
        if ((mask & bit) && !named.second->empty()) {
          const fs::path p = out_dir / view_name(named.first, cam.view_id, "ospm");
          save_ospm(*named.second, p);
          out(p);
        }
    }
    if (ids) {
      const fs::path p = out_dir / view_name("ids", cam.view_id, "pgm");
      save_pgm16(render_instance_ids(cloud, labels, cam, 0.5, rs), p);
      out(p);
    }
  }
  write_manifest(out_dir, "render", cfg,
                 {{"checkpoint", checkpoint}, {"manifest", manifest}, {"clusters", clusters}}, outputs);
  return {{"stage", "render"}, {"views", count}, {"channels", channels}, {"files", outputs.size()}};
}

double mean_psnr(const GaussianCloud& cloud, const std::vector<View>& views,
                 const RenderSettings& settings) {
  require(!views.empty(), ErrorCode::kUndefined, "psnr: no views");
  double sum = 0.0;
  for (const View& v : views) sum += psnr(render(cloud, v.camera, channel::kColor, settings).color, v.image);
  return sum / static_cast<double>(views.size());
}

InstanceScores3d score_instances_3d(const GaussianCloud& cloud, const ClusterResult& clusters,
                                    const LabeledPointCloud& gt) {
  require(clusters.labels.size() == cloud.size(), ErrorCode::kContractViolation,
          "score_instances_3d: one label per Gaussian required");
  require(!gt.positions.empty(), ErrorCode::kUndefined, "score_instances_3d: no GT points");
  const std::vector<int> pred = transfer_labels(cloud.means, clusters.labels, gt.positions);
  InstanceScores3d s;
  const MatchResult m = hungarian_match(pred, gt.gt_instance);
  s.miou = m.miou;
  s.purity = m.purity;
  // Confidence of a predicted instance: mean membership probability.
  std::vector<double> conf(std::max(clusters.count, 0), 0.0), cnt(conf.size(), 0.0);
  for (std::size_t i = 0; i < clusters.labels.size(); ++i)
    if (int l = clusters.labels[i]; l >= 0 && l < clusters.count) {
      conf[l] += i < clusters.probabilities.size() ? clusters.probabilities[i] : 1.0;
      cnt[l] += 1.0;
    }
  for (std::size_t l = 0; l < conf.size(); ++l) conf[l] = cnt[l] > 0 ? conf[l] / cnt[l] : 0.0;
  s.ap = instance_ap(instances_from_labels(pred, conf), instances_from_labels(gt.gt_instance));
  return s;
}

double mask_miou_2d(const GaussianCloud& cloud, const std::vector<int>& labels,
                    const std::vector<View>& views, const RenderSettings& settings) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const View& v : views) {
    if (v.mask.empty()) continue;
    const IdMap ids = render_instance_ids(cloud, labels, v.camera, 0.5, settings);
    std::vector<int> pred(ids.data.size()), gt(ids.data.size());
    for (std::size_t i = 0; i < ids.data.size(); ++i) {
      pred[i] = static_cast<int>(ids.data[i]) - 1;
      gt[i] = static_cast<int>(v.mask.data[i]) - 1;
    }
    const MatchResult m = hungarian_match(pred, gt);
    for (double iou : m.iou) sum += iou;
    count += m.iou.size();
  }
  require(count > 0, ErrorCode::kUndefined, "miou2d: no ground-truth instances in the test views");
  return sum / static_cast<double>(count);
}

Json stage_eval(const SceneConfig& cfg, const EvalInputs& in, const std::vector<std::string>& metrics,
                const fs::path& out_dir) {
  cfg.validate();
  require(!metrics.empty(), ErrorCode::kUsage, "eval: no metrics requested");
  const GaussianCloud cloud = load_cloud_checked(in.checkpoint, cfg);
  auto need = [](const fs::path& p, const std::string& metric, const char* what) {
    require(!p.empty(), ErrorCode::kUsage, "eval: " + metric + " needs " + what);
  };
  const RenderSettings rs = cfg.render_settings();
  Json rep = {{"stage", "eval"}};
  for (const std::string& m : metrics) {
    if (m == "psnr") {
      need(in.test_manifest, m, "a test manifest");
      rep["psnr"] = mean_psnr(cloud, load_dataset(in.test_manifest), rs);
    } else if (m == "miou3d" || m == "ap") {
      need(in.clusters, m, "clusters");
      need(in.gt_points, m, "ground-truth points");
      const auto s = score_instances_3d(cloud, load_clusters_checked(in.clusters, cloud.size()),
                                        load_point_labels(in.gt_points));
      if (m == "miou3d") {
        rep["miou3d"] = s.miou;
        rep["purity3d"] = s.purity;
      } else {
        rep["ap"] = s.ap.ap;
        rep["ap50"] = s.ap.ap50;
        rep["ap25"] = s.ap.ap25;
      }
    } else if (m == "miou2d") {
      need(in.clusters, m, "clusters");
      need(in.test_manifest, m, "a test manifest");
      rep["miou2d"] = mask_miou_2d(cloud, load_clusters_checked(in.clusters, cloud.size()).labels,
                                   load_dataset(in.test_manifest), rs);
    } else {
      fail(ErrorCode::kUsage, "unknown metric '" + m + "'");
    }
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(out_dir / "metrics.json", rep.dump(1) + "\n");
    write_manifest(out_dir, "eval", cfg,
                   {{"checkpoint", in.checkpoint}, {"clusters", in.clusters},
                    {"test_manifest", in.test_manifest}, {"gt_points", in.gt_points}},
                   {{"metrics", out_dir / "metrics.json"}});
  }
  return rep;
}

Json run_pipeline(const SceneConfig& cfg, const PipelineOptions& o, const fs::path& out_dir) {
  cfg.validate();
  const auto t0 = Clock::now();
  fs::create_directories(out_dir);
  const SceneSource scene = resolve_scene(o.scene, out_dir, cfg.seed);
  Json rep = {{"scene", o.scene}, {"config_hash", config_hash(cfg)}, {"seed", cfg.seed}};
  rep["train"] = stage_train(cfg, scene.train_manifest, scene.init_points, out_dir / "train");
  const fs::path ckpt = out_dir / "train" / "cloud.osp3";
  rep["cluster"] = stage_cluster(cfg, ckpt, out_dir / "cluster");
  const fs::path clusters = out_dir / "cluster" / "clusters.csv";
  if (!o.queries.empty()) {
    rep["embed"] = stage_embed(cfg, ckpt, out_dir / "cluster" / "instances.json", scene.train_manifest,
                               o.embedder, out_dir / "embed");
    Json qs = Json::array();
    for (const auto& q : o.queries)
      qs.push_back(stage_query(cfg, ckpt, out_dir / "embed" / "instances.json", scene.train_manifest,
                               o.embedder, q, out_dir / "query"));
    rep["queries"] = qs;
  }
  if (!o.metrics.empty()) {
    EvalInputs in{ckpt, clusters, scene.test_manifest, scene.gt_points};
    rep["eval"] = stage_eval(cfg, in, o.metrics, out_dir / "eval");
  }
  rep["seconds"] = seconds_since(t0);
  write_text_file(out_dir / "report.json", rep.dump(1) + "\n");
  write_manifest(out_dir, "pipeline", cfg, {{"train_manifest", scene.train_manifest}},
                 {{"checkpoint", ckpt}, {"clusters", clusters}});
  return rep;
}

}  // namespace osp3d

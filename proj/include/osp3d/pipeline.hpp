#pragma once

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "osp3d/clustering.hpp"
#include "osp3d/config.hpp"
#include "osp3d/dataset.hpp"
#include "osp3d/eval.hpp"
#include "osp3d/language.hpp"
#include "osp3d/synth.hpp"

namespace osp3d {

using Json = nlohmann::ordered_json;

// Files making up one scene. Optional members are empty when absent.
struct SceneSource {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path init_points;  // PLY point cloud
  std::filesystem::path gt_points;    // labeled point CSV
};

// "synth://<N>obj[?seed=S&over=K&erode=E&views=V&size=P]" generates a scene
// under `work_dir`; a directory is searched for train.json, test.json,
// init_points.ply and gt_points.csv; a .json file is a training manifest.
SceneSource resolve_scene(const std::string& spec, const std::filesystem::path& work_dir,
                          std::uint64_t seed);
SynthOptions parse_synth_spec(const std::string& spec, std::uint64_t seed);

// "mock" or the path of a precomputed-embedding index.
std::unique_ptr<Embedder> make_embedder(const std::string& spec);

LanguageSettings language_settings(const SceneConfig& config);
HdbscanParams hdbscan_params(const SceneConfig& config, std::size_t gaussians);

// Each stage writes its artifacts plus a "<stage>_manifest.json" into
// `out_dir` and returns a JSON report.
Json stage_synth(const SynthOptions& options, const std::filesystem::path& out_dir);
// Initializes from `init` (PLY points or an .osp3 checkpoint; empty: a grey
// cube of points around the cameras' look-at region), trains, and writes
// cloud.osp3, train_log.csv and optional checkpoints/.
Json stage_train(const SceneConfig& config, const std::filesystem::path& train_manifest,
                 const std::filesystem::path& init, const std::filesystem::path& out_dir);
// Writes clusters.csv and instances.json (+ .f32).
Json stage_cluster(const SceneConfig& config, const std::filesystem::path& checkpoint,
                   const std::filesystem::path& out_dir);
// Embeds every instance and rewrites the table to out_dir/instances.json.
Json stage_embed(const SceneConfig& config, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& instances, const std::filesystem::path& manifest,
                 const std::string& embedder, const std::filesystem::path& out_dir);
// Ranks instances for `text` and writes one silhouette PGM per view of the
// selected instances under out_dir/query_<slug>/.
Json stage_query(const SceneConfig& config, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& instances, const std::filesystem::path& manifest,
                 const std::string& embedder, const std::string& text,
                 const std::filesystem::path& out_dir);
// Channels: any of color, feature, variance, alpha, depth, ids (ids needs
// `clusters`). Colour goes to PPM, ids to 16-bit PGM, the rest to OSPM.
Json stage_render(const SceneConfig& config, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& manifest, const std::vector<std::string>& channels,
                  const std::filesystem::path& clusters, const std::filesystem::path& out_dir);

struct EvalInputs {
  std::filesystem::path checkpoint;
  std::filesystem::path clusters;       // needed by miou3d, ap, miou2d
  std::filesystem::path test_manifest;  // needed by psnr, miou2d
  std::filesystem::path gt_points;      // needed by miou3d, ap
};
// Metrics: psnr, miou3d, ap, miou2d.
Json stage_eval(const SceneConfig& config, const EvalInputs& inputs,
                const std::vector<std::string>& metrics, const std::filesystem::path& out_dir);

struct PipelineOptions {
  std::string scene;                // see resolve_scene
  std::vector<std::string> metrics;
  std::vector<std::string> queries;
  std::string embedder = "mock";
};
// synth (if needed) -> train -> cluster -> embed -> query -> eval, each stage
// in its own subdirectory of out_dir. Writes out_dir/report.json.
Json run_pipeline(const SceneConfig& config, const PipelineOptions& options,
                  const std::filesystem::path& out_dir);

// ---- evaluation helpers used by the eval stage ----

double mean_psnr(const GaussianCloud& cloud, const std::vector<View>& views,
                 const RenderSettings& settings);

struct InstanceScores3d {
  double miou = 0.0, purity = 0.0;
  ApResult ap;
};
// Each GT point takes the cluster label of its nearest Gaussian mean (noise
// stays unlabeled); Hungarian-matched mIoU and class-agnostic AP against the
// GT instances.
InstanceScores3d score_instances_3d(const GaussianCloud& cloud, const ClusterResult& clusters,
                                    const LabeledPointCloud& gt);

// Per test view, rendered instance ids Hungarian-matched against the GT id
// mask; mean IoU over all GT instances of all views.
double mask_miou_2d(const GaussianCloud& cloud, const std::vector<int>& labels,
                    const std::vector<View>& views, const RenderSettings& settings);

// Git-style hashes of a file or of a dataset manifest and every file it references.
Json hash_inputs(const std::vector<std::pair<std::string, std::filesystem::path>>& inputs);

}  // namespace osp3d

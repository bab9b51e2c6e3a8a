#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "osp3d/clustering.hpp"
#include "osp3d/dataset.hpp"
#include "osp3d/rasterizer.hpp"

namespace osp3d {

struct Instance {
  int id = 0;
  std::vector<std::size_t> members;  // Gaussian rows G_i
  std::vector<double> embedding;     // unit norm when `embedded`
  std::vector<int> views;            // view ids that contributed
  std::vector<int> zooms;            // zoom levels that contributed
  bool embedded = false;
  double stability = 0.0;
};

struct InstanceTable {
  std::vector<int> labels;  // per Gaussian, -1 noise
  std::vector<Instance> instances;
  int embedding_dim = 0;

  const Instance* find(int id) const;
};

InstanceTable assign_instances(const GaussianCloud& cloud, const ClusterResult& result);

// JSON metadata next to a raw f32 block (instances x embedding_dim) whose
// file name is the JSON path with extension ".f32".
void save_instance_table(const InstanceTable& table, const std::filesystem::path& json_path);
InstanceTable load_instance_table(const std::filesystem::path& json_path);

struct RegionKey {
  int view = 0;
  int instance = 0;
  int zoom = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim() const = 0;
  // Unit-norm embedding of the masked region of `image`; nullopt if the
  // embedder has nothing for this region.
  virtual std::optional<std::vector<double>> embed_image_region(const ImageD& image,
                                                                const Mask& mask,
                                                                const RegionKey& key) const = 0;
  virtual std::vector<double> embed_text(const std::string& text) const = 0;
};

// Deterministic stand-in: 3 mean-colour dims, a 12-bin hue histogram and a
// bias dim, computed over masked pixels only. Text maps colour words into
// the same space; shape words and "object" only touch the bias.
class MockEmbedder final : public Embedder {
 public:
  static constexpr int kDim = 16;
  int dim() const override { return kDim; }
  std::optional<std::vector<double>> embed_image_region(const ImageD& image, const Mask& mask,
                                                        const RegionKey& key) const override;
  std::vector<double> embed_text(const std::string& text) const override;

  // Colour words known to the lexicon with their RGB values.
  static const std::vector<std::pair<std::string, std::array<double, 3>>>& colors();
};

// Precomputed vectors: a JSON index {"dim": D, "data": "<file>.f32",
// "regions": {"<view>/<instance>/<zoom>": row}, "texts": {"<query>": row}}
// pointing into a raw f32 block of rows x D.
class FileEmbedder final : public Embedder {
 public:
  explicit FileEmbedder(const std::filesystem::path& index_json);
  int dim() const override { return dim_; }
  std::optional<std::vector<double>> embed_image_region(const ImageD& image, const Mask& mask,
                                                        const RegionKey& key) const override;
  std::vector<double> embed_text(const std::string& text) const override;

  static std::string region_key(const RegionKey& key);

 private:
  std::vector<double> row(std::size_t r) const;
  int dim_ = 0;
  std::vector<float> data_;
  std::map<std::string, std::size_t> regions_, texts_;
};

struct LanguageSettings {
  int top_k = 5;
  int zoom_levels = 3;
  double expansion_ratio = 0.3;
  double silhouette_threshold = 0.5;
  RenderSettings render;
};

// s = (|M_vi| / |I_v|) * (|G_vi| / |G_i|) with an occlusion-respecting
// silhouette. Throws kUndefined for an instance without members.
double visibility_score(const Instance& instance, const Camera& camera, const InstanceTable& table,
                        const GaussianCloud& cloud, const LanguageSettings& settings = {});
double visibility_score(const Mask& silhouette, std::size_t visible_members, std::size_t members);

// Indices of the K best scores (ties by index), zero scores excluded.
std::vector<int> select_topk_views(const std::vector<double>& scores, int k);

struct Crop {
  int level = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open box in image pixels
  ImageD image;
  Mask mask;
};

// Level l expands the tight mask box by round(expansion * l * size) per
// side, clamped to the image. Throws kEmptySelection for an empty mask.
std::vector<Crop> build_crops(const ImageD& image, const Mask& mask, int levels, double expansion);

// Normalized mean of the given vectors; empty input gives an empty result.
std::vector<double> normalized_mean(const std::vector<std::vector<double>>& vectors);

// Language embedding of one instance: scores every view, keeps the top K, embeds L
// zoomed crops of each and stores the normalized average with provenance.
void embed_instance(Instance& instance, const InstanceTable& table, const GaussianCloud& cloud,
                    const std::vector<View>& views, const Embedder& embedder,
                    const LanguageSettings& settings = {});
void embed_all(InstanceTable& table, const GaussianCloud& cloud, const std::vector<View>& views,
               const Embedder& embedder, const LanguageSettings& settings = {});

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// Embedded instances ranked by cosine to the text (ties by id).
std::vector<std::pair<int, double>> query(const InstanceTable& table, const std::string& text,
                                          const Embedder& embedder);
// Top-1 id, or every id scoring >= threshold when threshold > 0.
std::vector<int> select_instances(const std::vector<std::pair<int, double>>& ranking,
                                  double threshold = 0.0);
// Index into `labels` of the best label per instance (-1 if not embedded).
std::vector<int> assign_semantics(const InstanceTable& table, const std::vector<std::string>& labels,
                                  const Embedder& embedder);

}  // namespace osp3d

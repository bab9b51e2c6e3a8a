#include "osp3d/language.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "osp3d/io.hpp"

namespace osp3d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kBias = 0.5;
constexpr int kHueBins = 12;
constexpr double kMinChroma = 0.1;

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

// Hue bin centred on multiples of 30 degrees, or -1 for achromatic colours.
int hue_bin(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  if (c < kMinChroma) return -1;
  double h;
  if (mx == r) h = std::fmod((g - b) / c + 6.0, 6.0);
  else if (mx == g) h = (b - r) / c + 2.0;
  else h = (r - g) / c + 4.0;
  const double deg = 60.0 * h;
  return static_cast<int>(std::floor((deg + 15.0) / 30.0)) % kHueBins;
}

fs::path sidecar(const fs::path& json_path) {
  fs::path p = json_path;
  p.replace_extension(".f32");
  return p;
}

}  // namespace

const Instance* InstanceTable::find(int id) const {
  for (const Instance& i : instances)
    if (i.id == id) return &i;
  return nullptr;
}

InstanceTable assign_instances(const GaussianCloud& cloud, const ClusterResult& result) {
  require(result.labels.size() == cloud.size(), ErrorCode::kContractViolation,
          "assign_instances: label count differs from cloud size");
  InstanceTable t;
  t.labels = result.labels;
  int count = 0;
  for (int l : t.labels) count = std::max(count, l + 1);
  t.instances.resize(count);
  for (int c = 0; c < count; ++c) {
    t.instances[c].id = c;
    if (c < static_cast<int>(result.stability.size())) t.instances[c].stability = result.stability[c];
  }
  for (std::size_t i = 0; i < t.labels.size(); ++i)
    if (t.labels[i] >= 0) t.instances[t.labels[i]].members.push_back(i);
  std::erase_if(t.instances, [](const Instance& i) { return i.members.empty(); });
  return t;
}

void save_instance_table(const InstanceTable& t, const fs::path& json_path) {
  json inst = json::array();
  std::string block;
  for (const Instance& i : t.instances) {
    inst.push_back({{"id", i.id},
                    {"members", i.members},
                    {"views", i.views},
                    {"zooms", i.zooms},
                    {"embedded", i.embedded},
                    {"stability", i.stability}});
    for (int k = 0; k < t.embedding_dim; ++k) {
      const float v = i.embedded ? static_cast<float>(i.embedding[k]) : 0.0f;
      char b[4];
      std::memcpy(b, &v, 4);
      block.append(b, 4);
    }
  }
  const json j = {{"gaussians", t.labels.size()},
                  {"embedding_dim", t.embedding_dim},
                  {"embeddings", sidecar(json_path).filename().string()},
                  {"instances", inst}};
  write_text_file(json_path, j.dump(1) + "\n");
  write_text_file(sidecar(json_path), block);
}

InstanceTable load_instance_table(const fs::path& json_path) {
  InstanceTable t;
  try {
    const json j = json::parse(read_text_file(json_path));
    t.embedding_dim = j.at("embedding_dim").get<int>();
    const std::size_t n = j.at("gaussians").get<std::size_t>();
    t.labels.assign(n, -1);
    const std::string block = read_text_file(json_path.parent_path() / j.at("embeddings").get<std::string>());
    const auto& list = j.at("instances");
    require(block.size() == list.size() * t.embedding_dim * 4, ErrorCode::kFormat,
            json_path.string() + ": embedding block size mismatch");
    std::size_t row = 0;
    for (const auto& e : list) {
      Instance i;
      i.id = e.at("id").get<int>();
      i.members = e.at("members").get<std::vector<std::size_t>>();
      i.views = e.value("views", std::vector<int>{});
      i.zooms = e.value("zooms", std::vector<int>{});
      i.embedded = e.value("embedded", false);
      i.stability = e.value("stability", 0.0);
      for (std::size_t m : i.members) {
        require(m < n, ErrorCode::kFormat, json_path.string() + ": member index out of range");
        t.labels[m] = i.id;
      }
      if (i.embedded) {
        i.embedding.resize(t.embedding_dim);
        for (int k = 0; k < t.embedding_dim; ++k) {
          float v;
          std::memcpy(&v, block.data() + 4 * (row * t.embedding_dim + k), 4);
          i.embedding[k] = v;
        }
      }
      ++row;
      t.instances.push_back(std::move(i));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, json_path.string() + ": " + e.what());
  }
  return t;
}

const std::vector<std::pair<std::string, std::array<double, 3>>>& MockEmbedder::colors() {
  static const std::vector<std::pair<std::string, std::array<double, 3>>> table = {
      {"red", {1.0, 0.0, 0.0}},     {"orange", {1.0, 0.5, 0.0}},  {"yellow", {1.0, 1.0, 0.0}},
      {"lime", {0.5, 1.0, 0.0}},    {"green", {0.0, 1.0, 0.0}},   {"teal", {0.0, 1.0, 0.5}},
      {"cyan", {0.0, 1.0, 1.0}},    {"azure", {0.0, 0.5, 1.0}},   {"blue", {0.0, 0.0, 1.0}},
      {"purple", {0.5, 0.0, 1.0}},  {"violet", {0.5, 0.0, 1.0}},
      {"magenta", {1.0, 0.0, 1.0}}, {"pink", {1.0, 0.0, 0.5}},
      {"white", {1.0, 1.0, 1.0}},   {"gray", {0.5, 0.5, 0.5}},    {"grey", {0.5, 0.5, 0.5}},
      {"black", {0.0, 0.0, 0.0}}};
  return table;
}

std::optional<std::vector<double>> MockEmbedder::embed_image_region(const ImageD& image,
                                                                    const Mask& mask,
                                                                    const RegionKey&) const {
  require(image.width == mask.width && image.height == mask.height && image.channels >= 3,
          ErrorCode::kContractViolation, "embedder: image and mask dimensions differ");
  std::vector<double> v(kDim, 0.0);
  std::size_t count = 0, chromatic = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      if (!mask.at(x, y)) continue;
      const double r = image.at(x, y, 0), g = image.at(x, y, 1), b = image.at(x, y, 2);
      v[0] += r;
      v[1] += g;
      v[2] += b;
      ++count;
      const int bin = hue_bin(r, g, b);
      if (bin >= 0) {
        v[3 + bin] += 1.0;
        ++chromatic;
      }
    }
  if (count == 0) return std::nullopt;
  for (int k = 0; k < 3; ++k) v[k] /= static_cast<double>(count);
  if (chromatic > 0)
    for (int k = 0; k < kHueBins; ++k) v[3 + k] /= static_cast<double>(chromatic);
  v[kDim - 1] = kBias;
  normalize(v);
  return v;
}

std::vector<double> MockEmbedder::embed_text(const std::string& text) const {
  std::vector<double> v(kDim, 0.0);
  std::string word;
  int colors_found = 0;
  std::vector<int> bins;
  auto flush = [&] {
    for (const auto& [name, rgb] : colors())
      if (word == name) {
        for (int k = 0; k < 3; ++k) v[k] += rgb[k];
        const int bin = hue_bin(rgb[0], rgb[1], rgb[2]);
        if (bin >= 0) bins.push_back(bin);
        ++colors_found;
      }
    word.clear();
  };
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else
      flush();
  }
  flush();
  if (colors_found > 0)
    for (int k = 0; k < 3; ++k) v[k] /= colors_found;
  for (int b : bins) v[3 + b] += 1.0 / static_cast<double>(bins.size());
  v[kDim - 1] = kBias;
  normalize(v);
  return v;
}

FileEmbedder::FileEmbedder(const fs::path& index_json) {
  try {
    const json j = json::parse(read_text_file(index_json));
    dim_ = j.at("dim").get<int>();
    require(dim_ >= 1, ErrorCode::kFormat, index_json.string() + ": dim must be >= 1");
    const std::string block = read_text_file(index_json.parent_path() / j.at("data").get<std::string>());
    require(block.size() % (4 * dim_) == 0, ErrorCode::kFormat,
            index_json.string() + ": vector block is not a whole number of rows");
    data_.resize(block.size() / 4);
    std::memcpy(data_.data(), block.data(), block.size());
    const std::size_t rows = data_.size() / dim_;
    for (const char* section : {"regions", "texts"}) {
      if (!j.contains(section)) continue;
      auto& dst = std::string(section) == "regions" ? regions_ : texts_;
      for (const auto& [key, r] : j[section].items()) {
        const std::size_t idx = r.get<std::size_t>();
        require(idx < rows, ErrorCode::kFormat, index_json.string() + ": row out of range for " + key);
        dst[key] = idx;
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, index_json.string() + ": " + e.what());
  }
}

std::string FileEmbedder::region_key(const RegionKey& k) {
  return std::to_string(k.view) + "/" + std::to_string(k.instance) + "/" + std::to_string(k.zoom);
}

std::vector<double> FileEmbedder::row(std::size_t r) const {
  std::vector<double> v(data_.begin() + r * dim_, data_.begin() + (r + 1) * dim_);
  normalize(v);
  return v;
}

std::optional<std::vector<double>> FileEmbedder::embed_image_region(const ImageD&, const Mask&,
                                                                    const RegionKey& key) const {
  auto it = regions_.find(region_key(key));
  if (it == regions_.end()) return std::nullopt;
  return row(it->second);
}

std::vector<double> FileEmbedder::embed_text(const std::string& text) const {
  auto it = texts_.find(text);
  require(it != texts_.end(), ErrorCode::kUndefined, "no precomputed text embedding for '" + text + "'");
  return row(it->second);
}

double visibility_score(const Mask& silhouette, std::size_t visible, std::size_t members) {
  require(members > 0, ErrorCode::kUndefined, "visibility_score: instance has no Gaussians");
  std::size_t area = 0;
  for (auto v : silhouette.data) area += v != 0;
  return (static_cast<double>(area) / static_cast<double>(silhouette.data.size())) *
         (static_cast<double>(visible) / static_cast<double>(members));
}

double visibility_score(const Instance& instance, const Camera& camera, const InstanceTable& table,
                        const GaussianCloud& cloud, const LanguageSettings& s) {
  require(!instance.members.empty(), ErrorCode::kUndefined,
          "visibility_score: instance has no Gaussians");
  const Mask sil = render_instance_silhouette(cloud, table.labels, instance.id, camera, true,
                                              s.silhouette_threshold, s.render);
  const std::size_t visible = count_in_viewport(cloud, instance.members, camera, s.render.near_plane);
  return visibility_score(sil, visible, instance.members.size());
}

std::vector<int> select_topk_views(const std::vector<double>& scores, int k) {
  require(k >= 1, ErrorCode::kInvalidParameter, "select_topk_views: K must be >= 1");
  std::vector<int> idx;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.0) idx.push_back(static_cast<int>(i));
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  if (static_cast<int>(idx.size()) > k) idx.resize(k);
  return idx;
}

std::vector<Crop> build_crops(const ImageD& image, const Mask& mask, int levels, double expansion) {
  require(image.width == mask.width && image.height == mask.height, ErrorCode::kContractViolation,
          "build_crops: image and mask dimensions differ");
  require(levels >= 1, ErrorCode::kInvalidParameter, "build_crops: need at least one level");
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  require(x1 >= 0, ErrorCode::kEmptySelection, "build_crops: empty mask");
  ++x1;
  ++y1;
  std::vector<Crop> crops;
  for (int l = 0; l < levels; ++l) {
    const int px = static_cast<int>(std::lround(expansion * l * (x1 - x0)));
    const int py = static_cast<int>(std::lround(expansion * l * (y1 - y0)));
    Crop c;
    c.level = l;
    c.x0 = std::max(0, x0 - px);
    c.y0 = std::max(0, y0 - py);
    c.x1 = std::min(image.width, x1 + px);
    c.y1 = std::min(image.height, y1 + py);
    const int w = c.x1 - c.x0, h = c.y1 - c.y0;
    c.image = ImageD(w, h, image.channels);
    c.mask = Mask(w, h, 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < image.channels; ++ch) c.image.at(x, y, ch) = image.at(c.x0 + x, c.y0 + y, ch);
        c.mask.at(x, y) = mask.at(c.x0 + x, c.y0 + y) != 0;
      }
    crops.push_back(std::move(c));
  }
  return crops;
}

std::vector<double> normalized_mean(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) return {};
  std::vector<double> m(vectors.front().size(), 0.0);
  for (const auto& v : vectors) {
    require(v.size() == m.size(), ErrorCode::kContractViolation, "embedding dimensions differ");
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += v[k];
  }
  for (double& x : m) x /= static_cast<double>(vectors.size());
  normalize(m);
  return m;
}

void embed_instance(Instance& inst, const InstanceTable& table, const GaussianCloud& cloud,
                    const std::vector<View>& views, const Embedder& embedder,
                    const LanguageSettings& s) {
  inst.embedded = false;
  inst.embedding.clear();
  inst.views.clear();
  inst.zooms.clear();
  if (inst.members.empty()) return;
  std::vector<double> scores(views.size(), 0.0);
  std::vector<Mask> silhouettes(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    silhouettes[v] = render_instance_silhouette(cloud, table.labels, inst.id, views[v].camera, true,
                                                s.silhouette_threshold, s.render);
    const std::size_t visible =
        count_in_viewport(cloud, inst.members, views[v].camera, s.render.near_plane);
    scores[v] = visibility_score(silhouettes[v], visible, inst.members.size());
  }
  std::vector<std::vector<double>> parts;
  for (int v : select_topk_views(scores, s.top_k)) {
    bool used = false;
    for (const Crop& crop :
         build_crops(views[v].image, silhouettes[v], s.zoom_levels, s.expansion_ratio)) {
      const RegionKey key{views[v].camera.view_id, inst.id, crop.level};
      auto e = embedder.embed_image_region(crop.image, crop.mask, key);
      if (!e) continue;
      parts.push_back(std::move(*e));
      used = true;
      if (std::find(inst.zooms.begin(), inst.zooms.end(), crop.level) == inst.zooms.end())
        inst.zooms.push_back(crop.level);
    }
    if (used) inst.views.push_back(views[v].camera.view_id);
  }
  std::sort(inst.zooms.begin(), inst.zooms.end());
  if (parts.empty()) return;
  inst.embedding = normalized_mean(parts);
  inst.embedded = true;
}

void embed_all(InstanceTable& table, const GaussianCloud& cloud, const std::vector<View>& views,
               const Embedder& embedder, const LanguageSettings& s) {
  require(table.labels.size() == cloud.size(), ErrorCode::kContractViolation,
          "embed_all: table does not match cloud");
  table.embedding_dim = embedder.dim();
  for (Instance& inst : table.instances) embed_instance(inst, table, cloud, views, embedder, s);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorCode::kContractViolation, "cosine: dimensions differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

std::vector<std::pair<int, double>> query(const InstanceTable& table, const std::string& text,
                                          const Embedder& embedder) {
  std::vector<std::pair<int, double>> out;
  if (table.instances.empty()) return out;
  const auto t = embedder.embed_text(text);
  for (const Instance& i : table.instances)
    if (i.embedded) out.emplace_back(i.id, cosine(i.embedding, t));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second > b.second || (a.second == b.second && a.first < b.first);
  });
  return out;
}

std::vector<int> select_instances(const std::vector<std::pair<int, double>>& ranking,
                                  double threshold) {
  std::vector<int> out;
  if (ranking.empty()) return out;
  if (threshold <= 0.0) return {ranking.front().first};
  for (const auto& [id, score] : ranking)
    if (score >= threshold) out.push_back(id);
  return out;
}

std::vector<int> assign_semantics(const InstanceTable& table, const std::vector<std::string>& labels,
                                  const Embedder& embedder) {
  std::vector<std::vector<double>> texts;
  for (const auto& l : labels) texts.push_back(embedder.embed_text(l));
  std::vector<int> out;
  for (const Instance& i : table.instances) {
    int best = -1;
    double best_score = -2.0;
    if (i.embedded)
      for (std::size_t l = 0; l < texts.size(); ++l) {
        const double c = cosine(i.embedding, texts[l]);
        if (c > best_score) {
          best_score = c;
          best = static_cast<int>(l);
        }
      }
    out.push_back(best);
  }
  return out;
}

}  // namespace osp3d

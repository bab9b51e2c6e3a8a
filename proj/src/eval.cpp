#include "osp3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "osp3d/io.hpp"
#include "osp3d/kdtree.hpp"

namespace osp3d {

double mask_iou(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_iou: mask dimensions differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask boundary_band(const Mask& mask, int radius) {
  Mask eroded = mask;
  for (auto& v : eroded.data) v = v != 0;
  Mask tmp = eroded;
  for (int it = 0; it < radius; ++it) {
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x) {
        std::uint8_t m = 1;
        for (int dy = -1; dy <= 1 && m; ++dy)
          for (int dx = -1; dx <= 1 && m; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= mask.width || yy >= mask.height) m = 0;
            else m = eroded.at(xx, yy);
          }
        tmp.at(x, y) = m;
      }
    std::swap(tmp, eroded);
  }
  Mask band(mask.width, mask.height, 1, 0);
  for (std::size_t i = 0; i < band.data.size(); ++i)
    band.data[i] = mask.data[i] != 0 && !eroded.data[i];
  return band;
}

int boundary_radius(int width, int height, double fraction) {
  const double diag = std::hypot(static_cast<double>(width), static_cast<double>(height));
  return std::max(1, static_cast<int>(std::lround(fraction * diag)));
}

MaskScores miou_biou(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                     double radius_fraction) {
  require(pred.size() == gt.size(), ErrorCode::kContractViolation,
          "miou_biou: prediction and ground-truth counts differ");
  require(!gt.empty(), ErrorCode::kUndefined, "miou_biou: zero queries");
  MaskScores s;
  for (std::size_t q = 0; q < gt.size(); ++q) {
    s.iou.push_back(mask_iou(pred[q], gt[q]));
    const int r = boundary_radius(gt[q].width, gt[q].height, radius_fraction);
    s.biou.push_back(mask_iou(boundary_band(pred[q], r), boundary_band(gt[q], r)));
  }
  s.miou = std::accumulate(s.iou.begin(), s.iou.end(), 0.0) / s.iou.size();
  s.mbiou = std::accumulate(s.biou.begin(), s.biou.end(), 0.0) / s.biou.size();
  return s;
}

double fraction_above(const std::vector<double>& ious, double tau) {
  require(!ious.empty(), ErrorCode::kUndefined, "mAcc: zero queries");
  const auto hits = std::count_if(ious.begin(), ious.end(), [&](double v) { return v > tau; });
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

double macc_at(const std::vector<Mask>& pred, const std::vector<Mask>& gt, double tau) {
  require(pred.size() == gt.size(), ErrorCode::kContractViolation,
          "macc_at: prediction and ground-truth counts differ");
  std::vector<double> ious;
  for (std::size_t q = 0; q < gt.size(); ++q) ious.push_back(mask_iou(pred[q], gt[q]));
  return fraction_above(ious, tau);
}

std::vector<int> observer_select(const IdMap& ids, const Mask& proposal, double threshold) {
  require(ids.width == proposal.width && ids.height == proposal.height, ErrorCode::kContractViolation,
          "observer_select: dimensions differ");
  std::map<int, std::pair<std::size_t, std::size_t>> area;  // id -> (area, intersection)
  for (std::size_t i = 0; i < ids.data.size(); ++i) {
    if (ids.data[i] == 0) continue;
    auto& a = area[ids.data[i]];
    ++a.first;
    a.second += proposal.data[i] != 0;
  }
  std::vector<int> out;
  for (const auto& [id, a] : area)
    if (a.second > 0 && static_cast<double>(a.second) >= threshold * static_cast<double>(a.first))
      out.push_back(id - 1);
  return out;
}

std::vector<int> transfer_labels(const std::vector<double>& means, const std::vector<int>& labels,
                                 const std::vector<Eigen::Vector3d>& points) {
  require(means.size() == 3 * labels.size(), ErrorCode::kContractViolation,
          "transfer_labels: one label per mean required");
  require(!labels.empty(), ErrorCode::kInvalidParameter, "transfer_labels: empty cloud");
  const KdTree tree(means.data(), labels.size(), 3);
  std::vector<int> out(points.size());
  for (std::size_t p = 0; p < points.size(); ++p)
    out[p] = labels[tree.nearest(points[p].data()).second];
  return out;
}

std::vector<int> fh_segments(const std::vector<Eigen::Vector3d>& points, int k,
                             double merge_threshold) {
  require(k >= 1, ErrorCode::kInvalidParameter, "graph_smooth: k must be >= 1");
  const std::size_t n = points.size();
  std::vector<double> flat(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) flat[3 * i + c] = points[i][c];
  struct E {
    double w;
    std::size_t a, b;
  };
  std::vector<E> edges;
  if (n > 0) {
    const KdTree tree(flat.data(), n, 3);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& h : tree.knn(&flat[3 * i], static_cast<std::size_t>(k), i))
        edges.push_back({std::sqrt(h.first), std::min(i, h.second), std::max(i, h.second)});
  }
  std::sort(edges.begin(), edges.end(), [](const E& x, const E& y) {
    return std::tie(x.w, x.a, x.b) < std::tie(y.w, y.a, y.b);
  });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const E& x, const E& y) { return x.a == y.a && x.b == y.b; }),
              edges.end());

  std::vector<std::size_t> parent(n), size(n, 1);
  std::vector<double> internal(n, 0.0);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const E& e : edges) {
    std::size_t a = find(e.a), b = find(e.b);
    if (a == b) continue;
    const double ta = internal[a] + merge_threshold / size[a];
    const double tb = internal[b] + merge_threshold / size[b];
    if (e.w > std::min(ta, tb)) continue;
    if (a > b) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    internal[a] = std::max({internal[a], internal[b], e.w});
  }
  std::vector<int> seg(n);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    auto it = ids.try_emplace(r, static_cast<int>(ids.size())).first;
    seg[i] = it->second;
  }
  return seg;
}

std::vector<int> graph_smooth(const std::vector<Eigen::Vector3d>& points,
                              const std::vector<int>& labels, int k, double merge_threshold) {
  require(points.size() == labels.size(), ErrorCode::kContractViolation,
          "graph_smooth: one label per point required");
  const auto seg = fh_segments(points, k, merge_threshold);
  std::map<int, std::map<int, std::size_t>> votes;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (labels[i] >= 0) ++votes[seg[i]][labels[i]];
  std::map<int, int> winner;
  for (const auto& [s, counts] : votes) {
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [label, c] : counts)
      if (c > best_count) {
        best = label;
        best_count = c;
      }
    winner[s] = best;
  }
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = winner.find(seg[i]);
    out[i] = it == winner.end() ? labels[i] : it->second;
  }
  return out;
}

namespace {

double set_iou(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double average_precision(const std::vector<ApInstance>& pred, const std::vector<ApInstance>& gt,
                         double threshold) {
  if (gt.empty() || pred.empty()) return 0.0;
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred[a].confidence > pred[b].confidence;
  });
  std::vector<char> taken(gt.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const ApInstance& p = pred[order[rank]];
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g]) continue;
      const double iou = set_iou(p.points, gt[g].points);
      if (iou >= threshold && iou > best_iou) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      taken[best] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
  }
  for (std::size_t i = precision.size() - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  std::size_t idx = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (idx < recall.size() && recall[idx] < level) ++idx;
    if (idx < recall.size()) ap += precision[idx];
  }
  return ap / 101.0;
}

ApResult instance_ap(const std::vector<ApInstance>& pred, const std::vector<ApInstance>& gt) {
  ApResult r;
  if (gt.empty()) return r;
  r.defined = true;
  for (int t = 50; t <= 95; t += 5) r.ap += average_precision(pred, gt, t / 100.0);
  r.ap /= 10.0;
  r.ap50 = average_precision(pred, gt, 0.5);
  r.ap25 = average_precision(pred, gt, 0.25);
  return r;
}

ApResult semantic_instance_ap(const std::vector<ApInstance>& pred,
                              const std::vector<ApInstance>& gt) {
  std::map<int, std::pair<std::vector<ApInstance>, std::vector<ApInstance>>> by_label;
  for (const auto& g : gt) by_label[g.semantic].second.push_back(g);
  for (const auto& p : pred)
    if (by_label.count(p.semantic)) by_label[p.semantic].first.push_back(p);
  ApResult out;
  int classes = 0;
  for (const auto& [label, pg] : by_label) {
    const ApResult r = instance_ap(pg.first, pg.second);
    if (!r.defined) continue;
    out.ap += r.ap;
    out.ap50 += r.ap50;
    out.ap25 += r.ap25;
    ++classes;
  }
  if (classes > 0) {
    out.defined = true;
    out.ap /= classes;
    out.ap50 /= classes;
    out.ap25 /= classes;
  }
  return out;
}

std::vector<ApInstance> instances_from_labels(const std::vector<int>& labels,
                                              const std::vector<double>& confidence) {
  int count = 0;
  for (int l : labels) count = std::max(count, l + 1);
  std::vector<ApInstance> out(count);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) out[labels[i]].points.push_back(i);
  for (int c = 0; c < count; ++c) {
    out[c].semantic = 0;
    out[c].confidence = c < static_cast<int>(confidence.size()) ? confidence[c] : 1.0;
  }
  std::erase_if(out, [](const ApInstance& a) { return a.points.empty(); });
  return out;
}

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t rows = cost.size();
  if (rows == 0) return {};
  const std::size_t cols = cost[0].size();
  if (rows > cols) {
    std::vector<std::vector<double>> t(cols, std::vector<double>(rows));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t[j][i] = cost[i][j];
    const auto tcol = hungarian(t);
    std::vector<int> out(rows, -1);
    for (std::size_t j = 0; j < cols; ++j)
      if (tcol[j] >= 0) out[tcol[j]] = static_cast<int>(j);
    return out;
  }
  // Shortest augmenting path with potentials; 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(rows, -1);
  for (std::size_t j = 1; j <= cols; ++j)
    if (p[j] != 0) out[p[j] - 1] = static_cast<int>(j - 1);
  return out;
}

MatchResult hungarian_match(const std::vector<int>& pred, const std::vector<int>& gt) {
  require(pred.size() == gt.size(), ErrorCode::kContractViolation,
          "hungarian_match: label arrays differ in length");
  int np = 0, ng = 0;
  for (int l : pred) np = std::max(np, l + 1);
  for (int l : gt) ng = std::max(ng, l + 1);
  MatchResult r;
  r.gt_to_pred.assign(ng, -1);
  r.iou.assign(ng, 0.0);
  if (ng == 0) return r;
  std::vector<std::size_t> psize(np, 0), gsize(ng, 0);
  std::vector<std::vector<std::size_t>> inter(ng, std::vector<std::size_t>(np, 0));
  std::size_t labeled_pred = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= 0) {
      ++psize[pred[i]];
      ++labeled_pred;
    }
    if (gt[i] >= 0) ++gsize[gt[i]];
    if (pred[i] >= 0 && gt[i] >= 0) ++inter[gt[i]][pred[i]];
  }
  if (np > 0) {
    std::vector<std::vector<double>> cost(ng, std::vector<double>(np));
    auto iou = [&](int g, int p) {
      const double u = static_cast<double>(gsize[g] + psize[p] - inter[g][p]);
      return u > 0 ? inter[g][p] / u : 0.0;
    };
    for (int g = 0; g < ng; ++g)
      for (int p = 0; p < np; ++p) cost[g][p] = -iou(g, p);
    const auto assign = hungarian(cost);
    std::size_t matched_inter = 0;
    for (int g = 0; g < ng; ++g) {
      if (assign[g] < 0) continue;
      r.gt_to_pred[g] = assign[g];
      r.iou[g] = iou(g, assign[g]);
      matched_inter += inter[g][assign[g]];
    }
    r.purity = labeled_pred > 0 ? static_cast<double>(matched_inter) / labeled_pred : 0.0;
  }
  int present = 0;
  double sum = 0.0;
  for (int g = 0; g < ng; ++g)
    if (gsize[g] > 0) {
      ++present;
      sum += r.iou[g];
    }
  r.miou = present > 0 ? sum / present : 0.0;
  return r;
}

double psnr(const ImageD& a, const ImageD& b) {
  require_same_shape(a, b, "psnr: image dimensions differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  return mse <= 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

LabeledPointCloud load_point_labels(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  LabeledPointCloud c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && !std::isdigit(static_cast<unsigned char>(line[0])) && line[0] != '-' &&
        line[0] != '.' && line[0] != '+')
      continue;  // header
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    Eigen::Vector3d p;
    int inst = -1, sem = -1;
    require(static_cast<bool>(ls >> p[0] >> p[1] >> p[2] >> inst >> sem), ErrorCode::kFormat,
            path.string() + ":" + std::to_string(line_no) + ": expected x,y,z,instance_id,semantic_id");
    c.positions.push_back(p);
    c.gt_instance.push_back(inst);
    c.gt_semantic.push_back(sem);
  }
  c.predicted.assign(c.positions.size(), -1);
  return c;
}

void save_point_labels(const LabeledPointCloud& c, const std::filesystem::path& path) {
  std::ostringstream s;
  s.precision(9);
  s << "x,y,z,instance_id,semantic_id\n";
  for (std::size_t i = 0; i < c.positions.size(); ++i) {
    const int inst = i < c.gt_instance.size() ? c.gt_instance[i] : -1;
    const int sem = i < c.gt_semantic.size() ? c.gt_semantic[i] : -1;
    s << c.positions[i][0] << ',' << c.positions[i][1] << ',' << c.positions[i][2] << ',' << inst
      << ',' << sem << '\n';
  }
  write_text_file(path, s.str());
}

void MetricTable::add(const std::string& scene, std::vector<double> values) {
  require(values.size() == columns.size(), ErrorCode::kContractViolation,
          "MetricTable: row width differs from column count");
  rows.emplace_back(scene, std::move(values));
}

std::vector<double> MetricTable::mean() const {
  std::vector<double> m(columns.size(), 0.0);
  for (const auto& [name, vals] : rows)
    for (std::size_t c = 0; c < vals.size(); ++c) m[c] += vals[c];
  for (double& v : m) v = rows.empty() ? 0.0 : v / static_cast<double>(rows.size());
  return m;
}

std::string MetricTable::to_text(int precision) const {
  std::size_t name_w = 4;
  for (const auto& r : rows) name_w = std::max(name_w, r.first.size());
  std::vector<std::size_t> w(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c)
    w[c] = std::max<std::size_t>(columns[c].size(), precision + 3);
  std::ostringstream s;
  s << std::left << std::setw(static_cast<int>(name_w)) << "scene";
  for (std::size_t c = 0; c < columns.size(); ++c)
    s << "  " << std::right << std::setw(static_cast<int>(w[c])) << columns[c];
  s << '\n';
  auto row = [&](const std::string& name, const std::vector<double>& vals) {
    s << std::left << std::setw(static_cast<int>(name_w)) << name << std::right << std::fixed
      << std::setprecision(precision);
    for (std::size_t c = 0; c < vals.size(); ++c)
      s << "  " << std::setw(static_cast<int>(w[c])) << vals[c];
    s << '\n';
  };
  for (const auto& [name, vals] : rows) row(name, vals);
  row("mean", mean());
  return s.str();
}

std::string MetricTable::to_json() const {
  nlohmann::json j;
  j["columns"] = columns;
  j["rows"] = nlohmann::json::array();
  for (const auto& [name, vals] : rows) j["rows"].push_back({{"scene", name}, {"values", vals}});
  j["mean"] = mean();
  return j.dump(1);
}

}  // namespace osp3d

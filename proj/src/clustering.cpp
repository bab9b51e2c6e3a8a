#include "osp3d/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "osp3d/error.hpp"
#include "osp3d/io.hpp"
#include "osp3d/kdtree.hpp"

namespace osp3d {
namespace {

constexpr double kMinDistance = 1e-200;

struct Edge {
  std::size_t a, b;
  double w;
};

struct DendroNode {
  std::vector<std::size_t> children;  // empty for leaves (points)
  double dist = 0.0;
  std::size_t size = 1;
};

struct Cluster {
  int parent = -1;
  double birth = 0.0;      // lambda at which the cluster appears
  double stability = 0.0;
  double max_lambda = 0.0; // largest lambda among rows leaving this cluster
  std::vector<int> children;
};

double distance(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int k = 0; k < dim; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return std::sqrt(s);
}

std::vector<double> core_distances(const std::vector<double>& pts, std::size_t n, int dim,
                                   int min_samples) {
  std::vector<double> core(n, 0.0);
  if (n < 2) return core;
  const KdTree tree(pts.data(), n, dim);
  const std::size_t k = std::min<std::size_t>(min_samples, n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto hits = tree.knn(&pts[i * dim], k, i);
    core[i] = std::sqrt(hits.back().first);
  }
  return core;
}

// Prim's algorithm on the implicit complete mutual-reachability graph.
std::vector<Edge> mst(const std::vector<double>& pts, std::size_t n, int dim,
                      const std::vector<double>& core) {
  std::vector<Edge> edges;
  edges.reserve(n > 0 ? n - 1 : 0);
  std::vector<double> key(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::vector<char> done(n, 0);
  std::size_t current = 0;
  for (std::size_t step = 1; step < n; ++step) {
    done[current] = 1;
    const double* pc = &pts[current * dim];
    std::size_t best = n;
    for (std::size_t u = 0; u < n; ++u) {
      if (done[u]) continue;
      const double w = std::max({core[current], core[u], distance(pc, &pts[u * dim], dim)});
      if (w < key[u]) {
        key[u] = w;
        from[u] = current;
      }
      if (best == n || key[u] < key[best]) best = u;
    }
    edges.push_back({from[best], best, key[best]});
    current = best;
  }
  return edges;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

// Single-linkage dendrogram where all edges of one weight merge at once.
std::vector<DendroNode> dendrogram(std::vector<Edge> edges, std::size_t n) {
  std::vector<DendroNode> nodes(n);
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.w < y.w; });
  UnionFind uf(n);
  std::vector<std::size_t> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);
  std::size_t i = 0;
  while (i < edges.size()) {
    std::size_t j = i;
    while (j < edges.size() && edges[j].w == edges[i].w) ++j;
    std::vector<std::size_t> roots;
    for (std::size_t e = i; e < j; ++e) {
      roots.push_back(uf.find(edges[e].a));
      roots.push_back(uf.find(edges[e].b));
    }
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
    std::vector<std::size_t> old_nodes;
    for (std::size_t r : roots) old_nodes.push_back(node_of[r]);
    for (std::size_t e = i; e < j; ++e) uf.unite(edges[e].a, edges[e].b);

    std::vector<std::pair<std::size_t, std::size_t>> grouped;  // (new root, old node)
    for (std::size_t k = 0; k < roots.size(); ++k) grouped.emplace_back(uf.find(roots[k]), old_nodes[k]);
    std::sort(grouped.begin(), grouped.end());
    for (std::size_t k = 0; k < grouped.size();) {
      std::size_t l = k;
      DendroNode node;
      node.dist = edges[i].w;
      node.size = 0;
      while (l < grouped.size() && grouped[l].first == grouped[k].first) {
        node.children.push_back(grouped[l].second);
        node.size += nodes[grouped[l].second].size;
        ++l;
      }
      node_of[grouped[k].first] = nodes.size();
      nodes.push_back(std::move(node));
      k = l;
    }
    i = j;
  }
  return nodes;
}

}  // namespace

int default_min_cluster_size(std::size_t n) {
  return static_cast<int>(std::max<std::size_t>(50, n / 1000));
}

ClusterResult hdbscan(const std::vector<double>& points, int dim, const HdbscanParams& params) {
  require(dim >= 1 && points.size() % dim == 0, ErrorCode::kContractViolation,
          "hdbscan: point array is not N x dim");
  const std::size_t n = points.size() / dim;
  require(n >= 1, ErrorCode::kInvalidParameter, "hdbscan: need at least one point");
  require(params.min_cluster_size >= 2, ErrorCode::kInvalidParameter,
          "hdbscan: min_cluster_size must be >= 2");
  require(params.min_samples >= 1, ErrorCode::kInvalidParameter,
          "hdbscan: min_samples must be >= 1");
  for (double v : points)
    require(std::isfinite(v), ErrorCode::kNonFinite, "hdbscan: non-finite input");

  ClusterResult result;
  result.labels.assign(n, -1);
  result.probabilities.assign(n, 0.0);
  const std::size_t mcs = static_cast<std::size_t>(params.min_cluster_size);
  if (n < mcs) return result;

  const auto core = core_distances(points, n, dim, params.min_samples);
  const auto nodes = dendrogram(mst(points, n, dim, core), n);
  const std::size_t root = nodes.size() - 1;

  std::vector<Cluster> clusters(1);
  std::vector<double> point_lambda(n, 0.0);
  std::vector<int> point_cluster(n, 0);

  auto fall_out = [&](std::size_t node, int cluster, double lambda) {
    std::vector<std::size_t> stack{node};
    std::size_t count = 0;
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      if (nodes[x].children.empty()) {
        point_lambda[x] = lambda;
        point_cluster[x] = cluster;
        ++count;
      } else {
        stack.insert(stack.end(), nodes[x].children.begin(), nodes[x].children.end());
      }
    }
    Cluster& c = clusters[cluster];
    c.stability += (lambda - c.birth) * static_cast<double>(count);
    c.max_lambda = std::max(c.max_lambda, lambda);
  };

  std::vector<std::pair<int, std::size_t>> work{{0, root}};
  while (!work.empty()) {
    const auto [cid, node] = work.back();
    work.pop_back();
    const DendroNode& d = nodes[node];
    const double lambda = 1.0 / std::max(d.dist, kMinDistance);
    std::vector<std::size_t> big;
    for (std::size_t ch : d.children)
      if (nodes[ch].size >= mcs) big.push_back(ch);
    for (std::size_t ch : d.children)
      if (nodes[ch].size < mcs) fall_out(ch, cid, lambda);
    if (big.size() == 1) {
      work.emplace_back(cid, big.front());
    } else {
      for (std::size_t ch : big) {
        const int child = static_cast<int>(clusters.size());
        Cluster c;
        c.parent = cid;
        c.birth = lambda;
        clusters.push_back(c);
        Cluster& p = clusters[cid];
        p.children.push_back(child);
        p.stability += (lambda - p.birth) * static_cast<double>(nodes[ch].size);
        p.max_lambda = std::max(p.max_lambda, lambda);
        work.emplace_back(child, ch);
      }
    }
  }

  // Excess of mass, children before parents (ids grow top-down).
  const std::size_t nc = clusters.size();
  std::vector<double> best(nc);
  std::vector<char> selected(nc, 0);
  for (std::size_t c = nc; c-- > 0;) {
    double subtree = 0.0;
    for (int ch : clusters[c].children) subtree += best[ch];
    if (c == 0 && !params.allow_single_cluster) break;
    if (!clusters[c].children.empty() && subtree > clusters[c].stability) {
      best[c] = subtree;
    } else {
      best[c] = clusters[c].stability;
      selected[c] = 1;
      std::vector<int> stack(clusters[c].children.begin(), clusters[c].children.end());
      while (!stack.empty()) {
        const int x = stack.back();
        stack.pop_back();
        selected[x] = 0;
        stack.insert(stack.end(), clusters[x].children.begin(), clusters[x].children.end());
      }
    }
  }

  std::vector<int> owner(nc, -1);
  for (std::size_t c = 0; c < nc; ++c)
    owner[c] = selected[c] ? static_cast<int>(c) : (c == 0 ? -1 : owner[clusters[c].parent]);
  std::vector<int> label_of(nc, -1);
  for (std::size_t p = 0; p < n; ++p) {
    const int s = owner[point_cluster[p]];
    if (s < 0) continue;
    if (label_of[s] < 0) {
      label_of[s] = result.count++;
      result.stability.push_back(clusters[s].stability);
    }
    result.labels[p] = label_of[s];
    const double lmax = clusters[s].max_lambda;
    result.probabilities[p] = lmax > 0.0 ? std::min(point_lambda[p], lmax) / lmax : 1.0;
  }
  return result;
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::vector<int> out(labels.size(), -1);
  std::vector<std::pair<int, int>> seen;
  int next = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    auto it = std::find_if(seen.begin(), seen.end(), [&](auto& s) { return s.first == labels[i]; });
    if (it == seen.end()) {
      seen.emplace_back(labels[i], next);
      out[i] = next++;
    } else {
      out[i] = it->second;
    }
  }
  return out;
}

void save_cluster_csv(const ClusterResult& r, const std::filesystem::path& path) {
  std::ostringstream s;
  s.precision(17);
  s << "gaussian_index,label,probability\n";
  for (std::size_t i = 0; i < r.labels.size(); ++i)
    s << i << ',' << r.labels[i] << ',' << r.probabilities[i] << '\n';
  write_text_file(path, s.str());
}

ClusterResult load_cluster_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  require(std::getline(in, line) && line.rfind("gaussian_index,label", 0) == 0, ErrorCode::kFormat,
          path.string() + ": missing cluster CSV header");
  ClusterResult r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t idx = 0;
    int label = 0;
    double prob = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    require(static_cast<bool>(ls >> idx >> c1 >> label >> c2 >> prob) && c1 == ',' && c2 == ',' &&
                idx == r.labels.size() && label >= -1,
            ErrorCode::kFormat, path.string() + ": malformed row '" + line + "'");
    r.labels.push_back(label);
    r.probabilities.push_back(prob);
    r.count = std::max(r.count, label + 1);
  }
  r.stability.assign(r.count, 0.0);
  return r;
}

}  // namespace osp3d

#pragma once

// Brute-force HDBSCAN for tiny inputs: dense mutual-reachability matrix,
// top-down single linkage by repeated connectivity search (no spanning
// tree), condensation and excess-of-mass extraction written out directly.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace osp3d::testing {

struct OracleCluster {
  int parent = -1;
  double birth = 0.0;
  double stability = 0.0;
  std::vector<int> children;
};

inline std::vector<int> oracle_hdbscan(const std::vector<double>& pts, int dim, int mcs,
                                       int min_samples) {
  const int n = static_cast<int>(pts.size()) / dim;
  std::vector<int> labels(n, -1);
  if (n < mcs) return labels;

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double t = pts[i * dim + k] - pts[j * dim + k];
        s += t * t;
      }
      dist[i][j] = std::sqrt(s);
    }
  std::vector<double> core(n, 0.0);
  if (n > 1) {
    const int k = std::min(min_samples, n - 1);
    for (int i = 0; i < n; ++i) {
      std::vector<double> others;
      for (int j = 0; j < n; ++j)
        if (j != i) others.push_back(dist[i][j]);
      std::sort(others.begin(), others.end());
      core[i] = others[k - 1];
    }
  }
  auto mr = [&](int a, int b) { return std::max({core[a], core[b], dist[a][b]}); };

  // Connected components of `set` using edges with weight < limit (or <= when inclusive).
  auto components = [&](const std::vector<int>& set, double limit, bool inclusive) {
    std::vector<int> comp(set.size(), -1);
    std::vector<std::vector<int>> out;
    for (std::size_t s = 0; s < set.size(); ++s) {
      if (comp[s] >= 0) continue;
      const int id = static_cast<int>(out.size());
      out.emplace_back();
      std::vector<std::size_t> queue{s};
      comp[s] = id;
      while (!queue.empty()) {
        const std::size_t x = queue.back();
        queue.pop_back();
        out[id].push_back(set[x]);
        for (std::size_t y = 0; y < set.size(); ++y) {
          if (comp[y] >= 0) continue;
          const double w = mr(set[x], set[y]);
          if (w < limit || (inclusive && w == limit)) {
            comp[y] = id;
            queue.push_back(y);
          }
        }
      }
    }
    return out;
  };

  std::vector<OracleCluster> clusters(1);
  std::vector<int> fell_from(n, 0);
  std::vector<double> fell_at(n, 0.0);
  auto drop = [&](const std::vector<int>& pts_out, int c, double lambda) {
    for (int p : pts_out) {
      fell_from[p] = c;
      fell_at[p] = lambda;
    }
    clusters[c].stability += (lambda - clusters[c].birth) * pts_out.size();
  };

  std::function<void(int, std::vector<int>)> process = [&](int c, std::vector<int> set) {
    while (true) {
      std::vector<double> weights;
      for (std::size_t a = 0; a < set.size(); ++a)
        for (std::size_t b = a + 1; b < set.size(); ++b) weights.push_back(mr(set[a], set[b]));
      std::sort(weights.begin(), weights.end());
      double level = weights.back();
      for (double w : weights)
        if (components(set, w, true).size() == 1) {
          level = w;
          break;
        }
      const double lambda = 1.0 / std::max(level, 1e-200);
      const auto parts = components(set, level, false);
      std::vector<std::vector<int>> big;
      for (const auto& part : parts) {
        if (static_cast<int>(part.size()) >= mcs) big.push_back(part);
        else drop(part, c, lambda);
      }
      if (big.size() == 1) {
        set = big.front();
        continue;
      }
      for (const auto& part : big) {
        const int child = static_cast<int>(clusters.size());
        clusters.push_back({c, lambda, 0.0, {}});
        clusters[c].children.push_back(child);
        clusters[c].stability += (lambda - clusters[c].birth) * part.size();
        process(child, part);
      }
      return;
    }
  };
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  process(0, all);

  // Excess of mass: a cluster wins over its descendants unless their best
  // total stability is strictly larger. The root is never selected.
  std::function<double(int)> best = [&](int c) {
    double sub = 0.0;
    for (int ch : clusters[c].children) sub += best(ch);
    return clusters[c].children.empty() ? clusters[c].stability
                                         : std::max(sub, clusters[c].stability);
  };
  std::vector<char> chosen(clusters.size(), 0);
  std::function<void(int)> choose = [&](int c) {
    double sub = 0.0;
    for (int ch : clusters[c].children) sub += best(ch);
    if (c != 0 && (clusters[c].children.empty() || sub <= clusters[c].stability)) {
      chosen[c] = 1;
      return;
    }
    for (int ch : clusters[c].children) choose(ch);
  };
  choose(0);

  for (int p = 0; p < n; ++p) {
    int c = fell_from[p];
    while (c > 0 && !chosen[c]) c = clusters[c].parent;
    labels[p] = c > 0 ? c : -1;
  }
  return labels;
}

// Random small instance; some use integer coordinates so that many
// mutual-reachability weights tie exactly.
struct OracleInstance {
  std::vector<double> pts;
  int dim, mcs, ms;
};

inline OracleInstance random_oracle_instance(std::mt19937_64& rng, int t) {
  std::uniform_int_distribution<int> dim_d(1, 5), blobs_d(1, 4), mcs_d(2, 8), ms_d(1, 7);
  OracleInstance in;
  in.dim = dim_d(rng);
  in.mcs = mcs_d(rng);
  in.ms = ms_d(rng);
  const int nb = blobs_d(rng);
  std::uniform_int_distribution<int> size_d(1, 50 / nb);
  std::uniform_real_distribution<double> center(-6.0, 6.0), spread(0.2, 1.5);
  for (int b = 0; b < nb; ++b) {
    const int sz = size_d(rng);
    std::vector<double> c(in.dim);
    for (double& v : c) v = center(rng);
    std::normal_distribution<double> g(0.0, spread(rng));
    for (int i = 0; i < sz; ++i)
      for (int k = 0; k < in.dim; ++k) {
        double v = c[k] + g(rng);
        if (t % 4 == 0) v = std::round(v);
        in.pts.push_back(v);
      }
  }
  return in;
}

}  // namespace osp3d::testing

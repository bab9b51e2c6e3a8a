#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "osp3d/scene.hpp"

namespace osp3d {

struct ClusterResult {
  std::vector<int> labels;            // -1 noise, else 0..count-1
  int count = 0;
  std::vector<double> probabilities;  // 0 for noise
  std::vector<double> stability;      // per cluster
};

struct HdbscanParams {
  int min_cluster_size = 5;
  int min_samples = 10;
  bool allow_single_cluster = false;
};

// HDBSCAN over N points of dimension `dim` (row-major), Euclidean metric.
// Core distance is the distance to the min_samples-th nearest other point.
// Edges of equal mutual-reachability weight merge simultaneously, so the
// hierarchy (and the result) does not depend on tie order. Clusters are
// extracted by excess of mass and numbered by their lowest member index.
ClusterResult hdbscan(const std::vector<double>& points, int dim, const HdbscanParams& params);

// max(50, N / 1000).
int default_min_cluster_size(std::size_t n);

// Relabels clusters in order of first appearance; noise stays -1.
std::vector<int> canonical_labels(const std::vector<int>& labels);

void save_cluster_csv(const ClusterResult& result, const std::filesystem::path& path);
ClusterResult load_cluster_csv(const std::filesystem::path& path);

}  // namespace osp3d

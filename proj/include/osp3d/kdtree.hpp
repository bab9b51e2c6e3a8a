#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace osp3d {

// Exact k-d tree over N points of dimension `dim` (row-major). Queries order
// neighbours by (squared distance, index), so ties go to the lower index.
class KdTree {
 public:
  using Hit = std::pair<double, std::size_t>;  // (squared distance, index)

  KdTree(const double* points, std::size_t count, int dim, std::size_t leaf_size = 8);

  std::size_t size() const { return count_; }
  Hit nearest(const double* query) const;
  // Up to k nearest, closest first. `exclude` (if < size) is skipped.
  std::vector<Hit> knn(const double* query, std::size_t k,
                       std::size_t exclude = static_cast<std::size_t>(-1)) const;

 private:
  struct Node {
    int dim = -1;  // -1 for leaves
    double split = 0.0;
    std::size_t begin = 0, end = 0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const double* q, std::size_t k, std::size_t exclude,
              std::vector<Hit>& heap) const;
  double dist2(const double* q, std::size_t i) const;

  const double* pts_;
  std::size_t count_;
  int dim_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace osp3d

#include "osp3d/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "osp3d/error.hpp"

namespace osp3d {

KdTree::KdTree(const double* points, std::size_t count, int dim, std::size_t leaf_size)
    : pts_(points), count_(count), dim_(dim), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  require(dim >= 1, ErrorCode::kInvalidParameter, "kdtree: dim must be >= 1");
  order_.resize(count);
  std::iota(order_.begin(), order_.end(), 0);
  if (count > 0) {
    nodes_.reserve(2 * count / leaf_size_ + 2);
    build(0, count);
  }
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= leaf_size_) return id;

  int best_dim = 0;
  double best_spread = -1.0;
  for (int d = 0; d < dim_; ++d) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = pts_[order_[i] * dim_ + d];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = d;
    }
  }
  if (best_spread <= 0.0) return id;  // all points coincide

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) {
                     return pts_[a * dim_ + best_dim] < pts_[b * dim_ + best_dim];
                   });
  const double split = pts_[order_[mid] * dim_ + best_dim];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].dim = best_dim;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::dist2(const double* q, std::size_t i) const {
  double s = 0.0;
  const double* p = pts_ + i * dim_;
  for (int d = 0; d < dim_; ++d) {
    const double t = q[d] - p[d];
    s += t * t;
  }
  return s;
}

void KdTree::search(std::size_t node_id, const double* q, std::size_t k, std::size_t exclude,
                    std::vector<Hit>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.dim < 0) {
    for (std::size_t j = node.begin; j < node.end; ++j) {
      const std::size_t i = order_[j];
      if (i == exclude) continue;
      const Hit h{dist2(q, i), i};
      if (heap.size() < k) {
        heap.push_back(h);
        std::push_heap(heap.begin(), heap.end());
      } else if (h < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = h;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double diff = q[node.dim] - node.split;
  const std::size_t near = diff < 0 ? node.left : node.right;
  const std::size_t far = diff < 0 ? node.right : node.left;
  search(near, q, k, exclude, heap);
  // Points equal to the split value can sit on either side, so the far side
  // is visited whenever it could hold a hit at the current worst distance.
  if (heap.size() < k || diff * diff <= heap.front().first) search(far, q, k, exclude, heap);
}

KdTree::Hit KdTree::nearest(const double* query) const {
  require(count_ > 0, ErrorCode::kContractViolation, "kdtree: empty tree");
  return knn(query, 1).front();
}

std::vector<KdTree::Hit> KdTree::knn(const double* query, std::size_t k,
                                     std::size_t exclude) const {
  std::vector<Hit> heap;
  if (count_ == 0 || k == 0) return heap;
  heap.reserve(k + 1);
  search(0, query, k, exclude, heap);
  std::sort_heap(heap.begin(), heap.end());
  return heap;
}

}  // namespace osp3d

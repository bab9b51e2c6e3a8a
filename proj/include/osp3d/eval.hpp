#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "osp3d/image.hpp"

namespace osp3d {

// ---- 2D masks ----

// |A & B| / |A | B|; both empty counts as 1.
double mask_iou(const Mask& a, const Mask& b);

// Pixels of `mask` within chessboard distance `radius` of its contour
// (mask minus its erosion; outside the image counts as background).
Mask boundary_band(const Mask& mask, int radius);

// Band radius: max(1, round(fraction * image diagonal)).
int boundary_radius(int width, int height, double fraction);

struct MaskScores {
  double miou = 0.0, mbiou = 0.0;
  std::vector<double> iou, biou;  // per query
};

MaskScores miou_biou(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                     double radius_fraction = 0.02);

// Fraction of queries with IoU > tau. Throws kUndefined for zero queries.
double macc_at(const std::vector<Mask>& pred, const std::vector<Mask>& gt, double tau = 0.25);
double fraction_above(const std::vector<double>& ious, double tau);

// Instances (label = id - 1 of the id map) whose rendered area overlaps the
// proposal with intersection-over-area >= threshold.
std::vector<int> observer_select(const IdMap& rendered_ids, const Mask& proposal,
                                 double ioa_threshold = 0.75);

// ---- 3D points ----

struct LabeledPointCloud {
  std::vector<Eigen::Vector3d> positions;
  std::vector<int> predicted;  // -1 unassigned
  std::vector<int> gt_instance;
  std::vector<int> gt_semantic;
};

// Label of the nearest Gaussian mean (ties to the lower index).
std::vector<int> transfer_labels(const std::vector<double>& means, const std::vector<int>& labels,
                                 const std::vector<Eigen::Vector3d>& points);

// Felzenszwalb-Huttenlocher segmentation of the k-NN graph (Euclidean
// weights, tau(C) = merge_threshold / |C|); every segment takes the
// majority predicted label of its points (ties: smaller label, -1 ignored).
std::vector<int> fh_segments(const std::vector<Eigen::Vector3d>& points, int k,
                             double merge_threshold);
std::vector<int> graph_smooth(const std::vector<Eigen::Vector3d>& points,
                              const std::vector<int>& labels, int k, double merge_threshold);

struct ApInstance {
  std::vector<std::size_t> points;  // sorted point indices
  double confidence = 1.0;
  int semantic = 0;
};

struct ApResult {
  double ap = 0.0, ap50 = 0.0, ap25 = 0.0;
  bool defined = false;  // false when there is no ground truth
};

// Average precision at one IoU threshold: greedy matching in descending
// confidence (ties by input order) to the unmatched GT of highest IoU with
// IoU >= threshold, then 101-point interpolated precision.
double average_precision(const std::vector<ApInstance>& pred, const std::vector<ApInstance>& gt,
                         double threshold);
// Class-agnostic: pools all instances.
ApResult instance_ap(const std::vector<ApInstance>& pred, const std::vector<ApInstance>& gt);
// Per semantic label, averaged over labels that have ground truth.
ApResult semantic_instance_ap(const std::vector<ApInstance>& pred,
                              const std::vector<ApInstance>& gt);
std::vector<ApInstance> instances_from_labels(const std::vector<int>& labels,
                                              const std::vector<double>& confidence = {});

struct MatchResult {
  double miou = 0.0;      // sum of matched IoUs / number of GT instances
  double purity = 0.0;    // matched intersections / predicted (non-noise) points
  std::vector<int> gt_to_pred;  // -1 when unmatched
  std::vector<double> iou;      // per GT instance
};

// One-to-one Hungarian assignment maximizing total IoU between predicted and
// ground-truth instance labels (both -1 = none).
MatchResult hungarian_match(const std::vector<int>& pred, const std::vector<int>& gt);

// Minimizes total cost of a rows x cols matrix; returns column per row
// (-1 if rows > cols and the row is left out).
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

double psnr(const ImageD& a, const ImageD& b);

// CSV: x,y,z,instance_id,semantic_id (header optional).
LabeledPointCloud load_point_labels(const std::filesystem::path& path);
void save_point_labels(const LabeledPointCloud& cloud, const std::filesystem::path& path);

// Per-scene rows plus a mean row, as aligned text or JSON.
struct MetricTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<double>>> rows;

  void add(const std::string& scene, std::vector<double> values);
  std::vector<double> mean() const;
  std::string to_text(int precision = 3) const;
  std::string to_json() const;
};

}  // namespace osp3d

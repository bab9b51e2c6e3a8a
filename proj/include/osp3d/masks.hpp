#pragma once

#include <filesystem>
#include <vector>

#include "osp3d/image.hpp"

namespace osp3d {

// Weighted sum of a SAM predicted-IoU score and a stability score.
inline double combined_mask_score(double predicted_iou, double stability, double iou_weight = 1.0,
                                  double stability_weight = 1.0) {
  return iou_weight * predicted_iou + stability_weight * stability;
}

// Paints binary masks in ascending score order (ties: lower input index
// first) so higher scores win overlaps. Surviving masks are numbered 1..N in
// paint order; empty or fully overwritten masks disappear.
IdMap combine_masks(const std::vector<Mask>& masks, const std::vector<double>& scores);

// Renumbers the non-zero ids of `ids` to 1..N preserving their order.
// Returns N.
int normalize_ids(IdMap& ids);
int max_id(const IdMap& ids);

IdMap load_view_masks(const std::filesystem::path& path);
void save_view_masks(const IdMap& ids, const std::filesystem::path& path);

}  // namespace osp3d

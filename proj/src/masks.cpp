#include "osp3d/masks.hpp"

#include <algorithm>
#include <numeric>

#include "osp3d/io.hpp"

namespace osp3d {

IdMap combine_masks(const std::vector<Mask>& masks, const std::vector<double>& scores) {
  require(masks.size() == scores.size(), ErrorCode::kContractViolation,
          "combine_masks: one score per mask required");
  if (masks.empty()) return {};
  for (const Mask& m : masks) {
    require_same_shape(m, masks.front(), "combine_masks: mask dimensions differ");
    require(m.channels == 1, ErrorCode::kContractViolation, "combine_masks: masks must be 1-channel");
  }
  require(masks.size() < 65535, ErrorCode::kFormat, "combine_masks: too many masks");

  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  IdMap ids(masks.front().width, masks.front().height, 1, 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Mask& m = masks[order[rank]];
    for (std::size_t p = 0; p < m.data.size(); ++p)
      if (m.data[p]) ids.data[p] = static_cast<std::uint16_t>(rank + 1);
  }
  normalize_ids(ids);
  return ids;
}

int normalize_ids(IdMap& ids) {
  std::vector<std::uint16_t> remap(65536, 0);
  for (std::uint16_t v : ids.data) remap[v] = 1;
  remap[0] = 0;
  int next = 0;
  for (std::size_t v = 1; v < remap.size(); ++v)
    if (remap[v]) remap[v] = static_cast<std::uint16_t>(++next);
  for (std::uint16_t& v : ids.data) v = remap[v];
  return next;
}

int max_id(const IdMap& ids) {
  int m = 0;
  for (std::uint16_t v : ids.data) m = std::max<int>(m, v);
  return m;
}

IdMap load_view_masks(const std::filesystem::path& path) {
  IdMap ids = load_pgm(path);
  normalize_ids(ids);
  return ids;
}

void save_view_masks(const IdMap& ids, const std::filesystem::path& path) { save_pgm16(ids, path); }

}  // namespace osp3d

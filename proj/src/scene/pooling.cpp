#include "qcomp/scene/pooling.hpp"

#include <array>
#include <cmath>
#include <map>

#include "qcomp/errors.hpp"
#include "qcomp/tensor/ops.hpp"

namespace qcomp::scene {

PoolingAssignment voxelize(const Tensor& points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ContractError("voxel_size must be positive");
  if (points.rank() != 2 || points.cols() < 3) throw DimensionError("voxelize expects [N x >=3] points");
  using Cell = std::array<long long, 3>;
  const std::size_t n = points.rows();
  std::vector<Cell> cells(n);
  std::map<Cell, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      cells[i][k] = static_cast<long long>(std::floor(points(i, k) / voxel_size));
    }
    index.emplace(cells[i], 0);
  }
  std::size_t next = 0;
  for (auto& [cell, id] : index) id = next++;
  PoolingAssignment a;
  a.pool_count = index.size();
  a.pool_of_point.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.pool_of_point[i] = index.at(cells[i]);
  return a;
}

Tensor superpoint_pool(const Tensor& point_features, const PoolingAssignment& a) {
  return ops::segment_mean(point_features, a.pool_of_point, a.pool_count);
}

BinaryMasks gt_masks_to_pools(std::span<const int> point_labels, const PoolingAssignment& a,
                              std::size_t instance_count) {
  if (point_labels.size() != a.pool_of_point.size()) throw DimensionError("one label per point required");
  // votes[p][g + 1]; column 0 counts background.
  const std::size_t width = instance_count + 1;
  std::vector<std::size_t> votes(a.pool_count * width, 0);
  std::vector<std::size_t> total(a.pool_count, 0);
  for (std::size_t i = 0; i < point_labels.size(); ++i) {
    const int l = point_labels[i];
    if (l < -1 || l >= static_cast<int>(instance_count)) throw IndexError("point label out of range");
    const std::size_t p = a.pool_of_point[i];
    ++votes[p * width + static_cast<std::size_t>(l + 1)];
    ++total[p];
  }
  BinaryMasks masks(instance_count, a.pool_count);
  for (std::size_t p = 0; p < a.pool_count; ++p) {
    for (std::size_t g = 0; g < instance_count; ++g) {
      if (2 * votes[p * width + g + 1] > total[p]) masks.set(g, p, true);
    }
  }
  return masks;
}

}  // namespace qcomp::scene

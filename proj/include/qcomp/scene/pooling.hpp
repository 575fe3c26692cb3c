#pragma once

#include <cstddef>
#include <span>

#include "qcomp/scene/scene.hpp"

namespace qcomp::scene {

/// Dense re-indexing of the occupied floor(coord / voxel_size) cells, in
/// lexicographic cell order. Only the first three columns of `points` are read.
PoolingAssignment voxelize(const Tensor& points, double voxel_size);

/// Row m of the result is the mean of the feature rows assigned to pool m.
Tensor superpoint_pool(const Tensor& point_features, const PoolingAssignment& a);

/// Pool p belongs to instance g iff a strict majority of its points carry label g.
/// Labels are in [−1, instance_count); −1 marks background.
BinaryMasks gt_masks_to_pools(std::span<const int> point_labels, const PoolingAssignment& a,
                              std::size_t instance_count);

}  // namespace qcomp::scene

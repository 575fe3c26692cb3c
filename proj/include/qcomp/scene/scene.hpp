#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qcomp/tensor/tensor.hpp"

namespace qcomp::scene {

/// Row-major boolean matrix, one row per instance (or query), one column per pool.
struct BinaryMasks {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  BinaryMasks() = default;
  BinaryMasks(std::size_t r, std::size_t c) : rows(r), cols(c), bits(r * c, 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits[r * cols + c] = v ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t r) const { return {bits.data() + r * cols, cols}; }
  std::size_t count(std::size_t r) const;

  friend bool operator==(const BinaryMasks&, const BinaryMasks&) = default;
};

/// Point → pool map. Surjective onto [0, pool_count).
struct PoolingAssignment {
  std::vector<std::size_t> pool_of_point;
  std::size_t pool_count = 0;

  friend bool operator==(const PoolingAssignment&, const PoolingAssignment&) = default;
};

/// Synthetic labeled point cloud at superpoint granularity.
struct Scene {
  Tensor points;                            // [N×6]: x, y, z (m), r, g, b in [0,1]
  std::vector<std::size_t> superpoint_id;   // N entries in [0, M)
  std::size_t superpoint_count = 0;         // M
  std::vector<int> gt_semantic;             // G entries in [0, C')
  BinaryMasks gt_masks;                     // [G×M]
  std::uint64_t seed = 0;

  std::size_t point_count() const { return points.rows(); }
  std::size_t instance_count() const { return gt_semantic.size(); }
  PoolingAssignment assignment() const { return {superpoint_id, superpoint_count}; }

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct SceneConfig {
  std::size_t instances_min = 3;
  std::size_t instances_max = 8;
  std::size_t points_min = 150;  // per instance
  std::size_t points_max = 250;
  double extent = 4.0;           // side of the square floor (m)
  double sigma = 0.12;           // cluster spread (m)
  double separation = 6.0;       // minimum center distance in units of sigma
  double voxel_size = 0.07;      // superpoint cell (m)
  std::size_t classes = 3;       // C'
  std::size_t background_points = 200;
  double color_noise = 0.05;
};

/// Throws ConfigError naming the offending field.
void validate(const SceneConfig& cfg);

struct GeneratedScene {
  Scene scene;
  std::vector<int> point_instance;  // −1 for background
};

/// Deterministic in (cfg, seed). Throws ConfigError when the instance centers
/// cannot be placed at the configured separation inside the extent.
GeneratedScene generate_scene(const SceneConfig& cfg, std::uint64_t seed);

/// Checks the Scene invariants; throws ContractError describing the first violation.
void check_invariants(const Scene& s);

}  // namespace qcomp::scene

#include "qcomp/scene/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "qcomp/errors.hpp"
#include "qcomp/scene/pooling.hpp"

namespace qcomp::scene {

std::size_t BinaryMasks::count(std::size_t r) const {
  std::size_t n = 0;
  for (auto b : row(r)) n += b;
  return n;
}

void validate(const SceneConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("scene." + field + ": " + why);
  };
  if (cfg.instances_min < 1) fail("instances_min", "must be at least 1");
  if (cfg.instances_min > cfg.instances_max) fail("instances_max", "must be >= instances_min");
  if (cfg.points_min < 1) fail("points_min", "must be at least 1");
  if (cfg.points_min > cfg.points_max) fail("points_max", "must be >= points_min");
  if (!(cfg.extent > 0.0) || !std::isfinite(cfg.extent)) fail("extent", "must be a positive length");
  if (!(cfg.sigma > 0.0) || !std::isfinite(cfg.sigma)) fail("sigma", "must be a positive length");
  if (!(cfg.separation >= 2.0)) fail("separation", "must be at least 2 (in units of sigma)");
  if (!(cfg.voxel_size > 0.0) || !std::isfinite(cfg.voxel_size)) fail("voxel_size", "must be positive");
  if (cfg.classes < 1) fail("classes", "must be at least 1");
  if (!(cfg.color_noise >= 0.0)) fail("color_noise", "must be non-negative");
}

namespace {

constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.90, 0.20, 0.20},
    {0.20, 0.80, 0.30},
    {0.20, 0.30, 0.90},
    {0.90, 0.80, 0.20},
    {0.70, 0.30, 0.80},
    {0.20, 0.80, 0.80},
    {0.95, 0.55, 0.10},
    {0.55, 0.35, 0.20},
}};

// Per-class axis scales of the Gaussian box.
constexpr std::array<std::array<double, 3>, 4> kShapes{{
    {1.0, 1.0, 1.0},
    {1.5, 1.5, 0.6},
    {0.7, 0.7, 1.7},
    {1.4, 0.7, 1.0},
}};

std::array<double, 3> class_color(std::size_t c) {
  if (c < kPalette.size()) return kPalette[c];
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL + c);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  return {u(rng), u(rng), u(rng)};
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

GeneratedScene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> count_dist(cfg.instances_min, cfg.instances_max);
  const std::size_t g_count = count_dist(rng);

  const double max_scale = 1.7;
  const double margin = 2.0 * cfg.sigma * max_scale;
  const double min_dist = cfg.separation * cfg.sigma;
  if (cfg.extent <= 2.0 * margin) {
    throw ConfigError("scene.extent: too small for clusters of sigma " + std::to_string(cfg.sigma));
  }

  // Rejection-sample centers on the floor plane.
  std::uniform_real_distribution<double> pos(margin, cfg.extent - margin);
  std::vector<std::array<double, 2>> centers;
  constexpr int kRestarts = 20;
  constexpr int kAttempts = 2000;
  for (int restart = 0; restart < kRestarts && centers.size() < g_count; ++restart) {
    centers.clear();
    for (int attempt = 0; attempt < kAttempts && centers.size() < g_count; ++attempt) {
      const std::array<double, 2> c{pos(rng), pos(rng)};
      bool ok = true;
      for (const auto& o : centers) {
        if (std::hypot(c[0] - o[0], c[1] - o[1]) < min_dist) {
          ok = false;
          break;
        }
      }
      if (ok) centers.push_back(c);
    }
  }
  if (centers.size() < g_count) {
    throw ConfigError("scene.extent: cannot place " + std::to_string(g_count) + " instances " +
                      std::to_string(min_dist) + " m apart");
  }

  std::uniform_int_distribution<std::size_t> class_dist(0, cfg.classes - 1);
  std::uniform_int_distribution<std::size_t> npts_dist(cfg.points_min, cfg.points_max);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> lift(0.0, 0.3);

  std::vector<double> data;
  std::vector<int> labels;
  std::vector<int> semantic(g_count);
  auto push_point = [&](double x, double y, double z, const std::array<double, 3>& rgb, int label) {
    data.insert(data.end(), {x, y, z});
    for (double ch : rgb) data.push_back(clamp01(ch + cfg.color_noise * normal(rng)));
    labels.push_back(label);
  };

  for (std::size_t g = 0; g < g_count; ++g) {
    const std::size_t cls = class_dist(rng);
    semantic[g] = static_cast<int>(cls);
    const auto& shape = kShapes[cls % kShapes.size()];
    const auto color = class_color(cls);
    const double cz = 3.0 * cfg.sigma * shape[2] + lift(rng);
    const std::size_t n = npts_dist(rng);
    for (std::size_t k = 0; k < n; ++k) {
      const double x = centers[g][0] + cfg.sigma * shape[0] * normal(rng);
      const double y = centers[g][1] + cfg.sigma * shape[1] * normal(rng);
      const double z = cz + cfg.sigma * shape[2] * normal(rng);
      push_point(x, y, z, color, static_cast<int>(g));
    }
  }
  std::uniform_real_distribution<double> floor_pos(0.0, cfg.extent);
  for (std::size_t k = 0; k < cfg.background_points; ++k) {
    const double x = floor_pos(rng), y = floor_pos(rng);
    push_point(x, y, 0.01 * normal(rng), {0.5, 0.5, 0.5}, -1);
  }

  const std::size_t n_points = labels.size();
  GeneratedScene out;
  out.scene.points = Tensor({n_points, 6}, std::move(data));
  const PoolingAssignment a = voxelize(out.scene.points, cfg.voxel_size);
  out.scene.superpoint_id = a.pool_of_point;
  out.scene.superpoint_count = a.pool_count;
  BinaryMasks masks = gt_masks_to_pools(labels, a, g_count);

  // An instance whose pools are all contested carries no supervision; drop it.
  std::vector<std::size_t> keep;
  for (std::size_t g = 0; g < g_count; ++g) {
    if (masks.count(g) > 0) keep.push_back(g);
  }
  BinaryMasks kept(keep.size(), a.pool_count);
  std::vector<int> remap(g_count, -1);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    remap[keep[i]] = static_cast<int>(i);
    out.scene.gt_semantic.push_back(semantic[keep[i]]);
    for (std::size_t p = 0; p < a.pool_count; ++p) kept.set(i, p, masks(keep[i], p));
  }
  for (int& l : labels) {
    if (l >= 0) l = remap[static_cast<std::size_t>(l)];
  }
  out.scene.gt_masks = std::move(kept);
  out.scene.seed = seed;
  out.point_instance = std::move(labels);
  return out;
}

void check_invariants(const Scene& s) {
  if (s.points.rank() != 2 || s.points.cols() != 6) throw ContractError("scene points must be [N x 6]");
  if (s.superpoint_id.size() != s.points.rows()) throw ContractError("one superpoint id per point required");
  std::vector<std::uint8_t> seen(s.superpoint_count, 0);
  for (auto id : s.superpoint_id) {
    if (id >= s.superpoint_count) throw ContractError("superpoint id out of range");
    seen[id] = 1;
  }
  for (std::size_t m = 0; m < s.superpoint_count; ++m) {
    if (!seen[m]) throw ContractError("superpoint " + std::to_string(m) + " has no points");
  }
  if (s.gt_masks.rows != s.gt_semantic.size() || s.gt_masks.cols != s.superpoint_count) {
    throw ContractError("ground-truth masks must be [G x M]");
  }
  for (std::size_t g = 0; g < s.gt_masks.rows; ++g) {
    const std::size_t c = s.gt_masks.count(g);
    if (c == 0) throw ContractError("ground-truth mask " + std::to_string(g) + " is empty");
    if (c == s.superpoint_count && s.gt_masks.rows > 1) {
      throw ContractError("ground-truth mask " + std::to_string(g) + " covers every superpoint");
    }
    if (s.gt_semantic[g] < 0) throw ContractError("negative semantic label");
  }
}

}  // namespace qcomp::scene

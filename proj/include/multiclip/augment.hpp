#pragma once

#include "multiclip/rng.hpp"
#include "multiclip/scene_data.hpp"

namespace multiclip {

struct AugmentConfig {
  bool enabled = true;
  bool rotate = true;
  bool translate = true;
  bool random_cuboid = true;
  double max_rotation_deg = 5.0;
  double max_translation = 0.5;
  double cuboid_min_ratio = 0.75;
  int cuboid_min_points = 1024;
  int cuboid_max_attempts = 100;
};

// R = Rz * Ry * Rx about the origin, angles drawn in x, y, z order from
// U[-max_deg, max_deg].
PointCloud augment_rotate(const PointCloud& cloud, Rng& rng, double max_deg = 5.0);

// One offset per axis from U[-max_offset, max_offset], added to every point.
PointCloud augment_translate(const PointCloud& cloud, Rng& rng, double max_offset = 0.5);

// Keeps the points of a random axis-aligned cuboid that holds at least
// min_ratio of the cloud. Each axis of the cuboid spans a fraction in
// [min_ratio, 1] of the cloud extent and is centered uniformly inside the
// bounding box. After max_attempts failures (or when the cloud has fewer than
// min_points points) the input is returned unchanged. Point order is kept.
PointCloud augment_random_cuboid(const PointCloud& cloud, Rng& rng, double min_ratio = 0.75,
                                 int min_points = 1024, int max_attempts = 100);

// Exactly target_n rows. Without replacement when N >= target_n; otherwise
// every input row once plus target_n - N rows drawn with replacement.
PointCloud subsample_points(const PointCloud& cloud, int target_n, Rng& rng);

// Applies the enabled augmentations in rotate, translate, cuboid order.
PointCloud augment(const PointCloud& cloud, const AugmentConfig& config, Rng& rng);

struct AugmentedScene {
  PointCloud cloud;
  std::vector<ObjectAnnotation> annotations;
  // Rigid motion applied to the input: p' = rotation * p + translation.
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();
};

// Same random draws as augment(), with boxes carried along: centers follow the
// rigid motion, sizes become the extents of the rotated box, and boxes whose
// center leaves the cuboid crop are dropped.
AugmentedScene augment_scene(const PointCloud& cloud, const std::vector<ObjectAnnotation>& annotations,
                             const AugmentConfig& config, Rng& rng);

PointCloud select_rows(const PointCloud& cloud, const std::vector<Eigen::Index>& rows);

}  // namespace multiclip

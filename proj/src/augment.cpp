#include "multiclip/augment.hpp"

#include "multiclip/error.hpp"

#include <cmath>
#include <numbers>

namespace multiclip {

PointCloud select_rows(const PointCloud& cloud, const std::vector<Eigen::Index>& rows) {
  PointCloud out;
  out.points.resize(static_cast<Eigen::Index>(rows.size()), 3);
  out.colors.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = cloud.points.row(rows[i]);
    out.colors.row(static_cast<Eigen::Index>(i)) = cloud.colors.row(rows[i]);
  }
  return out;
}

namespace {

Eigen::Matrix3d sample_rotation(Rng& rng, double max_deg) {
  const double to_rad = std::numbers::pi / 180.0;
  const double ax = rng.uniform(-max_deg, max_deg) * to_rad;
  const double ay = rng.uniform(-max_deg, max_deg) * to_rad;
  const double az = rng.uniform(-max_deg, max_deg) * to_rad;
  return (Eigen::AngleAxisd(az, Vec3::UnitZ()) * Eigen::AngleAxisd(ay, Vec3::UnitY()) *
          Eigen::AngleAxisd(ax, Vec3::UnitX()))
      .toRotationMatrix();
}

Eigen::RowVector3d sample_translation(Rng& rng, double max_offset) {
  Eigen::RowVector3d offset;
  for (int k = 0; k < 3; ++k) offset[k] = rng.uniform(-max_offset, max_offset);
  return offset;
}

struct CuboidResult {
  PointCloud cloud;
  bool cropped = false;
  Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d half = Eigen::RowVector3d::Zero();
};

CuboidResult random_cuboid(const PointCloud& cloud, Rng& rng, double min_ratio, int min_points, int max_attempts) {
  const Eigen::Index n = cloud.size();
  if (n < min_points || n == 0) return {cloud};
  const Eigen::RowVector3d lo = cloud.points.colwise().minCoeff();
  const Eigen::RowVector3d hi = cloud.points.colwise().maxCoeff();
  const Eigen::RowVector3d extent = hi - lo;
  const auto needed = static_cast<Eigen::Index>(std::ceil(min_ratio * static_cast<double>(n)));
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(n));
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Eigen::RowVector3d half, center;
    for (int k = 0; k < 3; ++k) {
      half[k] = 0.5 * extent[k] * rng.uniform(min_ratio, 1.0);
      center[k] = rng.uniform(lo[k], hi[k]);
    }
    keep.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto d = (cloud.points.row(i) - center).cwiseAbs();
      if ((d.array() <= half.array()).all()) keep.push_back(i);
    }
    if (static_cast<Eigen::Index>(keep.size()) >= needed && static_cast<Eigen::Index>(keep.size()) > 0) {
      if (static_cast<Eigen::Index>(keep.size()) == n) return {cloud};
      return {select_rows(cloud, keep), true, center, half};
    }
  }
  return {cloud};
}

}  // namespace

PointCloud augment_rotate(const PointCloud& cloud, Rng& rng, double max_deg) {
  const Eigen::Matrix3d r = sample_rotation(rng, max_deg);
  PointCloud out;
  out.points = cloud.points * r.transpose();
  out.colors = cloud.colors;
  return out;
}

PointCloud augment_translate(const PointCloud& cloud, Rng& rng, double max_offset) {
  const Eigen::RowVector3d offset = sample_translation(rng, max_offset);
  PointCloud out;
  out.points = cloud.points.rowwise() + offset;
  out.colors = cloud.colors;
  return out;
}

PointCloud augment_random_cuboid(const PointCloud& cloud, Rng& rng, double min_ratio, int min_points,
                                 int max_attempts) {
  return random_cuboid(cloud, rng, min_ratio, min_points, max_attempts).cloud;
}

PointCloud subsample_points(const PointCloud& cloud, int target_n, Rng& rng) {
  if (target_n < 1) throw Error(ErrorKind::Config, "subsample target must be >= 1");
  const auto n = static_cast<std::size_t>(cloud.size());
  std::vector<Eigen::Index> rows;
  rows.reserve(static_cast<std::size_t>(target_n));
  const auto perm = rng.permutation(n);
  if (n >= static_cast<std::size_t>(target_n)) {
    for (int i = 0; i < target_n; ++i) rows.push_back(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
  } else {
    for (std::size_t i = 0; i < n; ++i) rows.push_back(static_cast<Eigen::Index>(perm[i]));
    while (rows.size() < static_cast<std::size_t>(target_n)) {
      rows.push_back(static_cast<Eigen::Index>(rng.index(n)));
    }
  }
  return select_rows(cloud, rows);
}

PointCloud augment(const PointCloud& cloud, const AugmentConfig& config, Rng& rng) {
  if (!config.enabled) return cloud;
  PointCloud out = cloud;
  if (config.rotate) out = augment_rotate(out, rng, config.max_rotation_deg);
  if (config.translate) out = augment_translate(out, rng, config.max_translation);
  if (config.random_cuboid) {
    out = augment_random_cuboid(out, rng, config.cuboid_min_ratio, config.cuboid_min_points,
                                config.cuboid_max_attempts);
  }
  return out;
}

AugmentedScene augment_scene(const PointCloud& cloud, const std::vector<ObjectAnnotation>& annotations,
                             const AugmentConfig& config, Rng& rng) {
  AugmentedScene out{cloud, annotations, Eigen::Matrix3d::Identity(), Vec3::Zero()};
  if (!config.enabled) return out;
  if (config.rotate) {
    const Eigen::Matrix3d r = sample_rotation(rng, config.max_rotation_deg);
    out.cloud.points = out.cloud.points * r.transpose();
    out.rotation = r;
    const Eigen::Matrix3d abs_r = r.cwiseAbs();
    for (auto& a : out.annotations) {
      a.box.center = r * a.box.center;
      a.box.size = abs_r * a.box.size;
    }
  }
  if (config.translate) {
    const Eigen::RowVector3d offset = sample_translation(rng, config.max_translation);
    out.cloud.points = out.cloud.points.rowwise() + offset;
    out.translation = offset.transpose();
    for (auto& a : out.annotations) a.box.center += offset.transpose();
  }
  if (config.random_cuboid) {
    CuboidResult c = random_cuboid(out.cloud, rng, config.cuboid_min_ratio, config.cuboid_min_points,
                                   config.cuboid_max_attempts);
    out.cloud = std::move(c.cloud);
    if (c.cropped) {
      std::vector<ObjectAnnotation> kept;
      for (const auto& a : out.annotations) {
        const auto d = (a.box.center.transpose() - c.center).cwiseAbs();
        if ((d.array() <= c.half.array()).all()) kept.push_back(a);
      }
      out.annotations = std::move(kept);
    }
  }
  return out;
}

}  // namespace multiclip

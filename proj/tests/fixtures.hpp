#pragma once

// Small hand-built scenes shared by several test files.

#include "multiclip/rng.hpp"
#include "multiclip/scene_data.hpp"

namespace fixtures {

using multiclip::Vec3;

// Gray floor patch plus one red box resting on it.
inline multiclip::SceneSample single_object_scene(int floor_points = 900, int box_points = 400) {
  multiclip::Rng rng(99);
  multiclip::SceneSample s;
  s.scene_id = "fixture0";
  s.scene_type = "bedroom";
  const Vec3 center(0.3, -0.2, 0.25), size(0.4, 0.4, 0.5);
  s.cloud.points.resize(floor_points + box_points, 3);
  s.cloud.colors.resize(floor_points + box_points, 3);
  for (int i = 0; i < floor_points; ++i) {
    s.cloud.points.row(i) << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0;
    s.cloud.colors.row(i) << 0.6, 0.6, 0.6;
  }
  for (int i = 0; i < box_points; ++i) {
    Vec3 p;
    for (int k = 0; k < 3; ++k) p(k) = rng.uniform(-0.5, 0.5) * size(k);
    const int face = static_cast<int>(rng.index(3));
    p(face) = (rng.uniform(0.0, 1.0) < 0.5 ? -0.5 : 0.5) * size(face);
    s.cloud.points.row(floor_points + i) = (center + p).transpose();
    s.cloud.colors.row(floor_points + i) << 0.85, 0.15, 0.15;
  }
  multiclip::ObjectAnnotation a;
  a.box.center = center;
  a.box.size = size;
  a.class_id = 0;
  a.instance_id = 1;
  s.annotations.push_back(a);
  s.captions.push_back("a bedroom with a red box");
  return s;
}

inline multiclip::PointCloud permuted(const multiclip::PointCloud& c, std::uint64_t seed) {
  multiclip::Rng rng(seed);
  const auto perm = rng.permutation(static_cast<std::size_t>(c.size()));
  multiclip::PointCloud out = c;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = c.points.row(static_cast<Eigen::Index>(perm[i]));
    out.colors.row(static_cast<Eigen::Index>(i)) = c.colors.row(static_cast<Eigen::Index>(perm[i]));
  }
  return out;
}

}  // namespace fixtures

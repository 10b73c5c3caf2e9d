#pragma once

// Point-splatting renderer used to produce the multi-view images of a scene.

#include "multiclip/scene_data.hpp"

#include <filesystem>
#include <vector>

namespace multiclip {

struct CameraPose {
  double azimuth_deg = 0.0;
  double elevation_deg = 45.0;
  double distance = 1.0;  // meters from look_at
  Vec3 look_at = Vec3::Zero();
};

struct ViewImage {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // row-major H x W x 3, values in [0,1]
  CameraPose pose;

  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct RenderConfig {
  int width = 224;
  int height = 224;
  double fov_deg = 90.0;
  double splat_radius_px = 2.0;
  double elevation_deg = 45.0;
  double distance_scale = 1.5;  // times the bounding-sphere radius
  double min_radius = 0.5;      // floor for tiny clouds
  double near_plane = 1e-3;
};

// Azimuths k * 360 / num_views for k = 0..num_views-1; throws Config when
// num_views < 1.
std::vector<CameraPose> make_view_poses(int num_views, double elevation_deg, double distance);

// Perspective projection with fixed-radius disc splats and a z-buffer
// (nearest depth wins, lowest point index on exact ties); white background.
//
// Azimuth follows the turntable convention: rendering at azimuth a shows the
// scene rotated by +a about the z axis through look_at, seen from a camera on
// the +x side. Hence render(Rz(d) * cloud, a) == render(cloud, a + d).
ViewImage render_view(const PointCloud& cloud, const CameraPose& pose, const RenderConfig& config);

// Views centered on the cloud centroid at distance_scale times the bounding
// radius. A single view is the top-down one (elevation 90).
std::vector<ViewImage> render_multiview(const PointCloud& cloud, int num_views, const RenderConfig& config);

// Poses render_multiview would use for this cloud.
std::vector<CameraPose> multiview_poses(const PointCloud& cloud, int num_views, const RenderConfig& config);

void write_png(const ViewImage& image, const std::filesystem::path& path);

}  // namespace multiclip

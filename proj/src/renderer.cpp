#include "multiclip/renderer.hpp"

#include "multiclip/error.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numbers>

namespace multiclip {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

std::vector<CameraPose> make_view_poses(int num_views, double elevation_deg, double distance) {
  if (num_views < 1) throw Error(ErrorKind::Config, "num_views must be >= 1");
  if (!(distance > 0.0)) throw Error(ErrorKind::Config, "camera distance must be positive");
  std::vector<CameraPose> poses;
  for (int k = 0; k < num_views; ++k) {
    CameraPose p;
    p.azimuth_deg = 360.0 * k / num_views;
    p.elevation_deg = elevation_deg;
    p.distance = distance;
    poses.push_back(p);
  }
  return poses;
}

ViewImage render_view(const PointCloud& cloud, const CameraPose& pose, const RenderConfig& config) {
  if (config.width < 1 || config.height < 1) throw Error(ErrorKind::Config, "bad render resolution");
  if (!(pose.distance > 0.0)) throw Error(ErrorKind::Config, "camera distance must be positive");
  ViewImage img;
  img.height = config.height;
  img.width = config.width;
  img.pose = pose;
  img.pixels.assign(static_cast<std::size_t>(config.height) * config.width * 3, 1.0);
  std::vector<double> zbuf(static_cast<std::size_t>(config.height) * config.width,
                           std::numeric_limits<double>::infinity());

  // Turntable: rotate the scene by +azimuth about z, then view it from a
  // fixed camera on the +x side at the given elevation.
  const double az = pose.azimuth_deg * kDeg;
  const double el = pose.elevation_deg * kDeg;
  const double ca = std::cos(az), sa = std::sin(az);
  const double ce = std::cos(el), se = std::sin(el);
  const Vec3 eye(pose.distance * ce, 0.0, pose.distance * se);
  const Vec3 forward(-ce, 0.0, -se);
  const Vec3 right(0.0, -1.0, 0.0);
  const Vec3 up = forward.cross(right);

  const double focal = 0.5 * config.width / std::tan(0.5 * config.fov_deg * kDeg);
  const double cx = 0.5 * config.width;
  const double cy = 0.5 * config.height;
  const double r = config.splat_radius_px;
  const double r2 = r * r;

  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Vec3 rel = cloud.points.row(i).transpose() - pose.look_at;
    const Vec3 q(ca * rel.x() - sa * rel.y(), sa * rel.x() + ca * rel.y(), rel.z());
    const Vec3 d = q - eye;
    const double depth = d.dot(forward);
    if (depth <= config.near_plane) continue;
    const double u = cx + focal * d.dot(right) / depth;
    const double v = cy - focal * d.dot(up) / depth;
    const int x0 = std::max(0, static_cast<int>(std::floor(u - r - 0.5)));
    const int x1 = std::min(config.width - 1, static_cast<int>(std::ceil(u + r - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(v - r - 0.5)));
    const int y1 = std::min(config.height - 1, static_cast<int>(std::ceil(v + r - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      const double dy = (y + 0.5) - v;
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5) - u;
        if (dx * dx + dy * dy > r2) continue;
        const std::size_t pix = static_cast<std::size_t>(y) * config.width + x;
        if (depth < zbuf[pix]) {
          zbuf[pix] = depth;
          for (int c = 0; c < 3; ++c) img.pixels[pix * 3 + c] = cloud.colors(i, c);
        }
      }
    }
  }
  return img;
}

std::vector<CameraPose> multiview_poses(const PointCloud& cloud, int num_views, const RenderConfig& config) {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  if (cloud.size() > 0) {
    center = cloud.centroid();
    radius = (cloud.points.rowwise() - center.transpose()).rowwise().norm().maxCoeff();
  }
  const double distance = config.distance_scale * std::max(radius, config.min_radius);
  std::vector<CameraPose> poses =
      num_views == 1 ? make_view_poses(1, 90.0, distance) : make_view_poses(num_views, config.elevation_deg, distance);
  for (auto& p : poses) p.look_at = center;
  return poses;
}

std::vector<ViewImage> render_multiview(const PointCloud& cloud, int num_views, const RenderConfig& config) {
  std::vector<ViewImage> views;
  for (const auto& pose : multiview_poses(cloud, num_views, config)) views.push_back(render_view(cloud, pose, config));
  return views;
}

void write_png(const ViewImage& image, const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw Error(ErrorKind::Load, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Load, "libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Load, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<png_byte>(std::lround(std::clamp(image.at(y, x, c), 0.0, 1.0) * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace multiclip

#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace multiclip {

using Mat3X = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Vec3 = Eigen::Vector3d;

// N points with XYZ coordinates in meters and RGB colors in [0,1].
struct PointCloud {
  Mat3X points;
  Mat3X colors;

  Eigen::Index size() const { return points.rows(); }
  Vec3 centroid() const { return points.colwise().mean().transpose(); }
  // Throws Validation on shape mismatch, empty cloud, non-finite coordinates
  // or out-of-range colors.
  void validate() const;
};

struct AxisAlignedBox {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();

  Vec3 min_corner() const { return center - 0.5 * size; }
  Vec3 max_corner() const { return center + 0.5 * size; }
  double volume() const { return size.prod(); }
  bool contains(const Vec3& p) const;
};

struct ObjectAnnotation {
  AxisAlignedBox box;
  int class_id = 0;
  int instance_id = 0;
};

struct SceneSample {
  std::string scene_id;
  std::string scene_type;
  PointCloud cloud;
  std::vector<ObjectAnnotation> annotations;
  std::vector<std::string> captions;

  const ObjectAnnotation* find_instance(int instance_id) const;
};

struct QARecord {
  std::string question_id;
  std::string scene_id;
  std::string question;
  std::vector<std::string> answers;
  std::vector<int> referred_instance_ids;
  std::vector<int> referred_class_ids;
};

// Quaternion stored (x, y, z, w).
using Quaternion = std::array<double, 4>;

struct SituationRecord {
  std::string question_id;
  std::string scene_id;
  std::string situation_text;
  Vec3 position = Vec3::Zero();
  Quaternion rotation{0.0, 0.0, 0.0, 1.0};
  std::string question;
  std::vector<std::string> answers;
};

// Label set shared by every scene of a dataset split.
struct LabelSet {
  std::vector<std::string> class_names;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct Dataset {
  LabelSet labels;
  std::vector<SceneSample> scenes;  // sorted by scene_id
  std::vector<QARecord> qa;         // sorted by (scene_id, question_id)
  std::vector<SituationRecord> sqa; // sorted by (scene_id, question_id)

  const SceneSample* find_scene(const std::string& scene_id) const;
  std::size_t scene_index(const std::string& scene_id) const;
  // Resolves every cross-reference; throws Validation naming the record.
  void validate() const;
};

enum class Split { Train, Val, Test };
const char* to_string(Split split);
Split parse_split(const std::string& name);

// Reads <root>/<split>/ in the canonical layout (see docs/dataset_format.md).
Dataset load_dataset(const std::filesystem::path& root, Split split);
// Writes the canonical layout for one split; output is byte-deterministic.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root, Split split);

// PLY with x,y,z and r,g,b (or red,green,blue). Reads ascii and
// binary_little_endian with float/double/uchar properties; uchar colors are
// scaled by 1/255. Writes binary_little_endian doubles.
PointCloud read_ply(const std::filesystem::path& path);
void write_ply(const PointCloud& cloud, const std::filesystem::path& path);

// Lowercase, trim, collapse internal whitespace.
std::string normalize_answer(const std::string& text);

}  // namespace multiclip

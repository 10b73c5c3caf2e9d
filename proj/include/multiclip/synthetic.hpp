#pragma once

// Template-based synthetic rooms: a floor plane plus colored box/cylinder
// objects, with captions, QA and situated QA whose answers follow from the
// annotations alone.

#include "multiclip/scene_data.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace multiclip {

struct ColorSpec {
  std::string name;
  Vec3 rgb = Vec3::Zero();
};

// A scene type biases which colors/shapes appear and sets the floor color, so
// types are distinguishable both in the point cloud and in captions.
struct SceneTypeSpec {
  std::string name;
  Vec3 floor_rgb = Vec3::Constant(0.6);
  std::vector<double> color_weights;  // one per palette color
  std::vector<double> shape_weights;  // one per shape
};

struct GeneratorConfig {
  double room_x = 4.0;
  double room_y = 4.0;
  int min_objects = 2;
  int max_objects = 5;
  std::vector<std::string> shapes{"box", "cylinder"};
  std::vector<ColorSpec> colors{{"red", Vec3(0.85, 0.15, 0.15)},
                                {"green", Vec3(0.15, 0.75, 0.2)},
                                {"blue", Vec3(0.15, 0.25, 0.85)},
                                {"yellow", Vec3(0.9, 0.85, 0.15)}};
  std::vector<SceneTypeSpec> scene_types{
      {"bedroom", Vec3(0.75, 0.6, 0.45), {4.0, 1.0, 1.0, 3.0}, {3.0, 1.0}},
      {"office", Vec3(0.45, 0.45, 0.5), {1.0, 3.0, 4.0, 1.0}, {1.0, 3.0}}};
  int num_points = 4096;
  int points_per_object = 384;
  double color_noise = 0.03;
  double min_footprint = 0.3;
  double max_footprint = 0.8;
  double min_height = 0.3;
  double max_height = 1.0;
  double min_gap = 0.2;

  // Throws Config for degenerate settings (no objects, empty palette, ...).
  void validate() const;
  LabelSet labels() const;
  int class_id(int shape, int color) const { return shape * static_cast<int>(colors.size()) + color; }
  int shape_of(int class_id) const { return class_id / static_cast<int>(colors.size()); }
  int color_of(int class_id) const { return class_id % static_cast<int>(colors.size()); }
};

struct SyntheticScene {
  SceneSample scene;
  std::vector<QARecord> qa;
  std::vector<SituationRecord> sqa;
};

// Identical (seed, config, scene_id, scene_type) give bit-identical output.
// When scene_type is empty the type is drawn from the seed.
SyntheticScene generate_synthetic_scene(std::uint64_t seed, const GeneratorConfig& config,
                                        const std::string& scene_id = "scene0000",
                                        std::optional<int> scene_type = std::nullopt);

// num_scenes scenes with types assigned round-robin.
Dataset generate_dataset(std::uint64_t seed, int num_scenes, Split split,
                         const GeneratorConfig& config);

std::string number_word(int n);
std::string plural(const std::string& noun);

}  // namespace multiclip

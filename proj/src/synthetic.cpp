#include "multiclip/synthetic.hpp"

#include "multiclip/error.hpp"
#include "multiclip/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

namespace multiclip {

void GeneratorConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects) {
    throw Error(ErrorKind::Config, "object count range must satisfy 1 <= min_objects <= max_objects");
  }
  if (shapes.empty() || colors.empty()) throw Error(ErrorKind::Config, "empty class palette");
  if (scene_types.empty()) throw Error(ErrorKind::Config, "no scene types configured");
  for (const auto& t : scene_types) {
    if (t.color_weights.size() != colors.size() || t.shape_weights.size() != shapes.size()) {
      throw Error(ErrorKind::Config, "scene type " + t.name + ": weight count does not match palette");
    }
  }
  for (const auto& s : shapes) {
    if (s != "box" && s != "cylinder") throw Error(ErrorKind::Config, "unknown shape " + s);
  }
  if (room_x <= 2 * max_footprint || room_y <= 2 * max_footprint) {
    throw Error(ErrorKind::Config, "room extents too small for object footprint");
  }
  if (points_per_object < 1) throw Error(ErrorKind::Config, "points_per_object must be >= 1");
  if (num_points < max_objects * points_per_object + 1) {
    throw Error(ErrorKind::Config, "num_points must exceed max_objects * points_per_object");
  }
  if (min_footprint <= 0 || max_footprint < min_footprint || min_height <= 0 || max_height < min_height) {
    throw Error(ErrorKind::Config, "invalid object size range");
  }
}

LabelSet GeneratorConfig::labels() const {
  LabelSet l;
  for (const auto& s : shapes) {
    for (const auto& c : colors) l.class_names.push_back(c.name + " " + s);
  }
  return l;
}

std::string number_word(int n) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six",
                                "seven", "eight", "nine", "ten", "eleven", "twelve"};
  if (n >= 0 && n <= 12) return words[n];
  return std::to_string(n);
}

std::string plural(const std::string& noun) {
  if (!noun.empty() && (noun.back() == 'x' || noun.back() == 's')) return noun + "es";
  return noun + "s";
}

namespace {

std::size_t weighted_pick(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform(0.0, total);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

struct PlacedObject {
  int shape = 0;
  int color = 0;
  AxisAlignedBox box;
};

void sample_object_points(const PlacedObject& o, const std::string& shape, int count, Rng& rng,
                          Mat3X& out, Eigen::Index offset) {
  const Vec3 lo = o.box.min_corner();
  const Vec3 sz = o.box.size;
  for (int i = 0; i < count; ++i) {
    Vec3 p;
    if (shape == "box") {
      // Top and four sides, chosen proportional to area.
      const double a_top = sz.x() * sz.y();
      const double a_xz = sz.x() * sz.z();
      const double a_yz = sz.y() * sz.z();
      const double u = rng.uniform(0.0, a_top + 2 * a_xz + 2 * a_yz);
      const double s = rng.uniform(0.0, 1.0);
      const double t = rng.uniform(0.0, 1.0);
      if (u < a_top) {
        p = Vec3(lo.x() + s * sz.x(), lo.y() + t * sz.y(), lo.z() + sz.z());
      } else if (u < a_top + 2 * a_xz) {
        const double y = (u < a_top + a_xz) ? lo.y() : lo.y() + sz.y();
        p = Vec3(lo.x() + s * sz.x(), y, lo.z() + t * sz.z());
      } else {
        const double x = (u < a_top + 2 * a_xz + a_yz) ? lo.x() : lo.x() + sz.x();
        p = Vec3(x, lo.y() + s * sz.y(), lo.z() + t * sz.z());
      }
    } else {
      const double r = 0.5 * std::min(sz.x(), sz.y());
      const double a_side = 2 * std::numbers::pi * r * sz.z();
      const double a_top = std::numbers::pi * r * r;
      const double u = rng.uniform(0.0, a_side + a_top);
      const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
      if (u < a_side) {
        p = Vec3(o.box.center.x() + r * std::cos(theta), o.box.center.y() + r * std::sin(theta),
                 lo.z() + rng.uniform(0.0, sz.z()));
      } else {
        const double rr = r * std::sqrt(rng.uniform(0.0, 1.0));
        p = Vec3(o.box.center.x() + rr * std::cos(theta), o.box.center.y() + rr * std::sin(theta),
                 lo.z() + sz.z());
      }
    }
    out.row(offset + i) = p.transpose();
  }
}

Vec3 noisy_color(const Vec3& base, double noise, Rng& rng) {
  Vec3 c;
  for (int k = 0; k < 3; ++k) c[k] = std::clamp(base[k] + rng.normal(0.0, noise), 0.0, 1.0);
  return c;
}

std::string join_list(const std::vector<std::string>& items) {
  if (items.size() == 1) return items[0];
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? " and " : ", ";
    out += items[i];
  }
  return out;
}

std::string qid(const std::string& scene_id, const char* tag, int k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", k);
  return scene_id + "_" + tag + buf;
}

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const GeneratorConfig& config,
                                        const std::string& scene_id, std::optional<int> scene_type) {
  config.validate();
  Rng rng(seed);
  const int type_index = scene_type ? *scene_type
                                    : static_cast<int>(rng.index(config.scene_types.size()));
  if (type_index < 0 || type_index >= static_cast<int>(config.scene_types.size())) {
    throw Error(ErrorKind::Config, "scene type index out of range");
  }
  const SceneTypeSpec& type = config.scene_types[static_cast<std::size_t>(type_index)];

  const int wanted = config.min_objects +
                     static_cast<int>(rng.index(static_cast<std::uint64_t>(config.max_objects - config.min_objects + 1)));
  std::vector<PlacedObject> objects;
  for (int i = 0; i < wanted; ++i) {
    PlacedObject o;
    o.shape = static_cast<int>(weighted_pick(type.shape_weights, rng));
    o.color = static_cast<int>(weighted_pick(type.color_weights, rng));
    const double fx = rng.uniform(config.min_footprint, config.max_footprint);
    const double fy = config.shapes[static_cast<std::size_t>(o.shape)] == "cylinder"
                          ? fx
                          : rng.uniform(config.min_footprint, config.max_footprint);
    const double h = rng.uniform(config.min_height, config.max_height);
    o.box.size = Vec3(fx, fy, h);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double hx = 0.5 * config.room_x - 0.5 * fx - 0.1;
      const double hy = 0.5 * config.room_y - 0.5 * fy - 0.1;
      o.box.center = Vec3(rng.uniform(-hx, hx), rng.uniform(-hy, hy), 0.5 * h);
      placed = std::all_of(objects.begin(), objects.end(), [&](const PlacedObject& other) {
        const Vec3 d = (o.box.center - other.box.center).cwiseAbs();
        const Vec3 half = 0.5 * (o.box.size + other.box.size);
        return d.x() >= half.x() + config.min_gap || d.y() >= half.y() + config.min_gap;
      });
    }
    if (!placed) break;
    objects.push_back(o);
  }

  SyntheticScene out;
  SceneSample& scene = out.scene;
  scene.scene_id = scene_id;
  scene.scene_type = type.name;

  const int object_points = static_cast<int>(objects.size()) * config.points_per_object;
  const int floor_points = config.num_points - object_points;
  scene.cloud.points.resize(config.num_points, 3);
  scene.cloud.colors.resize(config.num_points, 3);
  for (int i = 0; i < floor_points; ++i) {
    scene.cloud.points.row(i) << rng.uniform(-0.5 * config.room_x, 0.5 * config.room_x),
        rng.uniform(-0.5 * config.room_y, 0.5 * config.room_y), 0.0;
    scene.cloud.colors.row(i) = noisy_color(type.floor_rgb, config.color_noise, rng).transpose();
  }
  Eigen::Index offset = floor_points;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& o = objects[k];
    sample_object_points(o, config.shapes[static_cast<std::size_t>(o.shape)], config.points_per_object, rng,
                         scene.cloud.points, offset);
    for (int i = 0; i < config.points_per_object; ++i) {
      scene.cloud.colors.row(offset + i) =
          noisy_color(config.colors[static_cast<std::size_t>(o.color)].rgb, config.color_noise, rng).transpose();
    }
    offset += config.points_per_object;
    ObjectAnnotation a;
    a.box = o.box;
    a.class_id = config.class_id(o.shape, o.color);
    a.instance_id = static_cast<int>(k);
    scene.annotations.push_back(a);
  }

  auto name_of = [&](const PlacedObject& o) {
    return config.colors[static_cast<std::size_t>(o.color)].name + " " +
           config.shapes[static_cast<std::size_t>(o.shape)];
  };
  auto color_name = [&](const PlacedObject& o) { return config.colors[static_cast<std::size_t>(o.color)].name; };
  auto shape_name = [&](const PlacedObject& o) { return config.shapes[static_cast<std::size_t>(o.shape)]; };

  // Captions.
  {
    std::vector<std::size_t> order(objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return objects[a].box.center.x() < objects[b].box.center.x();
    });
    std::vector<std::string> items;
    for (std::size_t i : order) items.push_back("a " + name_of(objects[i]));
    scene.captions.push_back("a " + type.name + " with " + join_list(items));
    if (objects.size() >= 2) {
      std::size_t best_a = 0, best_b = 1;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < objects.size(); ++a) {
        for (std::size_t b = a + 1; b < objects.size(); ++b) {
          const double d = (objects[a].box.center - objects[b].box.center).head<2>().norm();
          if (d < best) {
            best = d;
            best_a = a;
            best_b = b;
          }
        }
      }
      scene.captions.push_back("in this " + type.name + " a " + name_of(objects[best_a]) + " stands near a " +
                               name_of(objects[best_b]));
    } else {
      scene.captions.push_back("in this " + type.name + " there is a " + name_of(objects[0]));
    }
    scene.captions.push_back("a " + type.name + " containing " + number_word(static_cast<int>(objects.size())) +
                             (objects.size() == 1 ? " object" : " objects"));
  }

  // QA.
  std::map<int, std::vector<int>> instances_by_class;
  std::map<int, int> shape_counts, color_counts;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    instances_by_class[scene.annotations[k].class_id].push_back(static_cast<int>(k));
    ++shape_counts[objects[k].shape];
    ++color_counts[objects[k].color];
  }
  int qcount = 0;
  auto add_qa = [&](std::string question, std::vector<std::string> answers, std::vector<int> instances,
                    std::vector<int> classes) {
    QARecord r;
    r.question_id = qid(scene_id, "q", qcount++);
    r.scene_id = scene_id;
    r.question = std::move(question);
    r.answers = std::move(answers);
    r.referred_instance_ids = std::move(instances);
    r.referred_class_ids = std::move(classes);
    out.qa.push_back(std::move(r));
  };
  for (const auto& [cls, inst] : instances_by_class) {
    const PlacedObject& o = objects[static_cast<std::size_t>(inst.front())];
    const int n = static_cast<int>(inst.size());
    add_qa("how many " + color_name(o) + " " + plural(shape_name(o)) + " are there",
           {number_word(n), std::to_string(n)}, inst, {cls});
  }
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& o = objects[k];
    const int cls = scene.annotations[k].class_id;
    if (shape_counts[o.shape] == 1) {
      add_qa("what color is the " + shape_name(o), {color_name(o)}, {static_cast<int>(k)}, {cls});
    }
    if (color_counts[o.color] == 1) {
      add_qa("what shape is the " + color_name(o) + " object", {shape_name(o)}, {static_cast<int>(k)}, {cls});
    }
    if (instances_by_class[cls].size() == 1 && objects.size() >= 2) {
      std::size_t nearest = k;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < objects.size(); ++j) {
        if (j == k) continue;
        const double d = (objects[j].box.center - o.box.center).head<2>().norm();
        if (d < best) {
          best = d;
          nearest = j;
        }
      }
      add_qa("what color is the object closest to the " + name_of(o), {color_name(objects[nearest])},
             {static_cast<int>(nearest)}, {scene.annotations[nearest].class_id, cls});
    }
  }

  // Situated QA: stand beside a uniquely named anchor, facing another object.
  int scount = 0;
  for (std::size_t k = 0; k < objects.size() && objects.size() >= 2; ++k) {
    const auto& anchor = objects[k];
    if (instances_by_class[scene.annotations[k].class_id].size() != 1) continue;
    std::size_t target = static_cast<std::size_t>(rng.index(objects.size() - 1));
    if (target >= k) ++target;
    const auto& tgt = objects[target];
    const Eigen::Vector2d dir = (tgt.box.center - anchor.box.center).head<2>().normalized();
    const double standoff = 0.5 * anchor.box.size.head<2>().norm() + 0.3;
    const Eigen::Vector2d pos2 = anchor.box.center.head<2>() + standoff * dir;
    const Eigen::Vector2d facing_vec = tgt.box.center.head<2>() - pos2;
    if (facing_vec.norm() < 1e-6) continue;
    const Eigen::Vector2d facing = facing_vec.normalized();
    const double yaw = std::atan2(facing.y(), facing.x());

    SituationRecord base;
    base.scene_id = scene_id;
    base.situation_text = "i am standing next to the " + name_of(anchor) + " facing the " + shape_name(tgt);
    base.position = Vec3(pos2.x(), pos2.y(), 0.0);
    base.rotation = {0.0, 0.0, std::sin(0.5 * yaw), std::cos(0.5 * yaw)};

    // The target must be the best-aligned object of its shape.
    bool unique_front = true;
    for (std::size_t j = 0; j < objects.size(); ++j) {
      if (j == target || objects[j].shape != tgt.shape) continue;
      const Eigen::Vector2d d = (objects[j].box.center.head<2>() - pos2).normalized();
      if (d.dot(facing) >= 1.0 - 1e-9) unique_front = false;
    }
    if (unique_front) {
      SituationRecord r = base;
      r.question_id = qid(scene_id, "s", scount++);
      r.question = "what color is the " + shape_name(tgt) + " in front of me";
      r.answers = {color_name(tgt)};
      out.sqa.push_back(std::move(r));
    }
    int behind = 0;
    for (const auto& other : objects) {
      if ((other.box.center.head<2>() - pos2).dot(facing) < 0.0) ++behind;
    }
    SituationRecord r = base;
    r.question_id = qid(scene_id, "s", scount++);
    r.question = "how many objects are behind me";
    r.answers = {number_word(behind), std::to_string(behind)};
    out.sqa.push_back(std::move(r));
  }
  return out;
}

Dataset generate_dataset(std::uint64_t seed, int num_scenes, Split split, const GeneratorConfig& config) {
  if (num_scenes < 1) throw Error(ErrorKind::Config, "num_scenes must be >= 1");
  Dataset ds;
  ds.labels = config.labels();
  const std::uint64_t split_seed = Rng::derive(seed, static_cast<std::uint64_t>(split) + 1);
  for (int i = 0; i < num_scenes; ++i) {
    char id[48];
    std::snprintf(id, sizeof(id), "%s%04d", to_string(split), i);
    const int type = i % static_cast<int>(config.scene_types.size());
    auto s = generate_synthetic_scene(Rng::derive(split_seed, static_cast<std::uint64_t>(i)), config, id, type);
    ds.scenes.push_back(std::move(s.scene));
    for (auto& q : s.qa) ds.qa.push_back(std::move(q));
    for (auto& q : s.sqa) ds.sqa.push_back(std::move(q));
  }
  ds.validate();
  return ds;
}

}  // namespace multiclip

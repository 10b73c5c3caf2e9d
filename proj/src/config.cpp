#include "multiclip/config.hpp"

#include "multiclip/error.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace multiclip {

using nlohmann::json;

namespace {

template <class T>
void check_type(const json& v, const std::string& where) {
  bool ok;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_unsigned_v<T>) {
    ok = v.is_number_unsigned();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  } else {
    ok = true;
  }
  if (!ok) throw Error(ErrorKind::Config, where + ": wrong type");
}

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw Error(ErrorKind::Config, where_ + ": expected an object");
  }

  template <class T>
  void field(const char* key, T& value) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    const std::string at = where_ + "." + key;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, Vec3>) {
      if (!v.is_array() || v.size() != 3) throw Error(ErrorKind::Config, at + ": expected 3 numbers");
      for (int i = 0; i < 3; ++i) {
        check_type<double>(v[static_cast<std::size_t>(i)], at);
        value(i) = v[static_cast<std::size_t>(i)].get<double>();
      }
    } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>> ||
                         std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array()) throw Error(ErrorKind::Config, at + ": expected an array");
      T out;
      for (const auto& e : v) {
        check_type<typename T::value_type>(e, at);
        out.push_back(e.template get<typename T::value_type>());
      }
      value = std::move(out);
    } else {
      check_type<T>(v, at);
      value = v.get<T>();
    }
  }

  template <class T>
  void nested(const char* key, T& value) {
    known_.insert(key);
    if (j_.contains(key)) from_json_at(j_.at(key), value, where_ + "." + key);
  }

  template <class T>
  void list(const char* key, std::vector<T>& values) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    const std::string at = where_ + "." + key;
    const json& v = j_.at(key);
    if (!v.is_array()) throw Error(ErrorKind::Config, at + ": expected an array");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      T item;
      from_json_at(v[i], item, at + "[" + std::to_string(i) + "]");
      out.push_back(std::move(item));
    }
    values = std::move(out);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!known_.count(item.key())) throw Error(ErrorKind::Config, where_ + ": unknown key '" + item.key() + "'");
    }
  }

  template <class T>
  static void from_json_at(const json& j, T& value, const std::string& where);

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

class Writer {
 public:
  template <class T>
  void field(const char* key, const T& value) {
    if constexpr (std::is_same_v<T, Vec3>) {
      out[key] = {value.x(), value.y(), value.z()};
    } else {
      out[key] = value;
    }
  }
  template <class T>
  void nested(const char* key, const T& value);
  template <class T>
  void list(const char* key, const std::vector<T>& values);

  json out = json::object();
};

// One field list per type drives both directions.
template <class V, class C>
void visit_fields(V& v, C& c) {
  using T = std::remove_const_t<C>;
  if constexpr (std::is_same_v<T, ColorSpec>) {
    v.field("name", c.name);
    v.field("rgb", c.rgb);
  } else if constexpr (std::is_same_v<T, SceneTypeSpec>) {
    v.field("name", c.name);
    v.field("floor_rgb", c.floor_rgb);
    v.field("color_weights", c.color_weights);
    v.field("shape_weights", c.shape_weights);
  } else if constexpr (std::is_same_v<T, GeneratorConfig>) {
    v.field("room_x", c.room_x);
    v.field("room_y", c.room_y);
    v.field("min_objects", c.min_objects);
    v.field("max_objects", c.max_objects);
    v.field("shapes", c.shapes);
    v.list("colors", c.colors);
    v.list("scene_types", c.scene_types);
    v.field("num_points", c.num_points);
    v.field("points_per_object", c.points_per_object);
    v.field("color_noise", c.color_noise);
    v.field("min_footprint", c.min_footprint);
    v.field("max_footprint", c.max_footprint);
    v.field("min_height", c.min_height);
    v.field("max_height", c.max_height);
    v.field("min_gap", c.min_gap);
  } else if constexpr (std::is_same_v<T, RenderConfig>) {
    v.field("width", c.width);
    v.field("height", c.height);
    v.field("fov_deg", c.fov_deg);
    v.field("splat_radius_px", c.splat_radius_px);
    v.field("elevation_deg", c.elevation_deg);
    v.field("distance_scale", c.distance_scale);
    v.field("min_radius", c.min_radius);
    v.field("near_plane", c.near_plane);
  } else if constexpr (std::is_same_v<T, EncoderConfig>) {
    v.field("width", c.width);
    v.field("layers", c.layers);
    v.field("heads", c.heads);
    v.field("ffn_hidden", c.ffn_hidden);
    v.field("max_len", c.max_len);
    v.field("word_dim", c.word_dim);
    v.field("embed_dim", c.embed_dim);
    v.field("image_height", c.image_height);
    v.field("image_width", c.image_width);
    v.field("patch", c.patch);
    v.field("trainable", c.trainable);
    v.field("init_seed", c.init_seed);
  } else if constexpr (std::is_same_v<T, SceneEncoderConfig>) {
    v.field("num_proposals", c.num_proposals);
    v.field("num_classes", c.num_classes);
    v.field("point_hidden", c.point_hidden);
    v.field("point_feature", c.point_feature);
    v.field("neighborhood_cell", c.neighborhood_cell);
    v.field("group_radius", c.group_radius);
    v.field("group_samples", c.group_samples);
    v.field("refine_layers", c.refine_layers);
    v.field("heads", c.heads);
    v.field("ffn_hidden", c.ffn_hidden);
    v.field("embed_dim", c.embed_dim);
    v.field("projection_bias", c.projection_bias);
    v.field("init_seed", c.init_seed);
  } else if constexpr (std::is_same_v<T, AugmentConfig>) {
    v.field("enabled", c.enabled);
    v.field("rotate", c.rotate);
    v.field("translate", c.translate);
    v.field("random_cuboid", c.random_cuboid);
    v.field("max_rotation_deg", c.max_rotation_deg);
    v.field("max_translation", c.max_translation);
    v.field("cuboid_min_ratio", c.cuboid_min_ratio);
    v.field("cuboid_min_points", c.cuboid_min_points);
    v.field("cuboid_max_attempts", c.cuboid_max_attempts);
  } else if constexpr (std::is_same_v<T, PretrainConfig>) {
    v.field("tau", c.tau);
    v.field("learnable_tau", c.learnable_tau);
    v.field("alpha", c.alpha);
    v.field("beta", c.beta);
    v.field("num_views", c.num_views);
    v.field("use_text_loss", c.use_text_loss);
    v.field("use_image_loss", c.use_image_loss);
    v.field("use_cosine_variant", c.use_cosine_variant);
    v.field("use_det_loss", c.use_det_loss);
    v.field("iterations", c.iterations);
    v.field("batch_size", c.batch_size);
    v.field("learning_rate", c.learning_rate);
    v.field("weight_decay", c.weight_decay);
    v.field("grad_clip_norm", c.grad_clip_norm);
    v.field("num_points", c.num_points);
    v.field("checkpoint_every", c.checkpoint_every);
    v.nested("augment", c.augment);
  } else if constexpr (std::is_same_v<T, VqaConfig>) {
    v.field("hidden", c.hidden);
    v.field("layers", c.layers);
    v.field("heads", c.heads);
    v.field("ffn_hidden", c.ffn_hidden);
    v.field("iou_floor", c.iou_floor);
    v.field("use_det_loss", c.use_det_loss);
    v.field("answer_min_count", c.answer_min_count);
    v.field("init_seed", c.init_seed);
    v.field("epochs", c.epochs);
    v.field("max_steps", c.max_steps);
    v.field("batch_size", c.batch_size);
    v.field("learning_rate", c.learning_rate);
    v.field("weight_decay", c.weight_decay);
    v.field("lr_milestones", c.lr_milestones);
    v.field("lr_factor", c.lr_factor);
    v.field("grad_clip_norm", c.grad_clip_norm);
    v.field("num_points", c.num_points);
    v.nested("augment", c.augment);
  } else if constexpr (std::is_same_v<T, SqaConfig>) {
    v.field("hidden", c.hidden);
    v.field("heads", c.heads);
    v.field("ffn_hidden", c.ffn_hidden);
    v.field("situation_layers", c.situation_layers);
    v.field("question_layers", c.question_layers);
    v.field("mlp_hidden", c.mlp_hidden);
    v.field("sign_invariant_rotation", c.sign_invariant_rotation);
    v.field("use_det_loss", c.use_det_loss);
    v.field("answer_min_count", c.answer_min_count);
    v.field("init_seed", c.init_seed);
    v.field("epochs", c.epochs);
    v.field("max_steps", c.max_steps);
    v.field("batch_size", c.batch_size);
    v.field("learning_rate", c.learning_rate);
    v.field("weight_decay", c.weight_decay);
    v.field("lr_milestones", c.lr_milestones);
    v.field("lr_factor", c.lr_factor);
    v.field("grad_clip_norm", c.grad_clip_norm);
    v.field("num_points", c.num_points);
    v.nested("augment", c.augment);
  } else if constexpr (std::is_same_v<T, ExperimentConfig>) {
    v.field("seed", c.seed);
    v.field("train_scenes", c.train_scenes);
    v.field("val_scenes", c.val_scenes);
    v.nested("generator", c.generator);
    v.nested("render", c.render);
    v.nested("encoder", c.encoder);
    v.nested("scene_encoder", c.scene_encoder);
    v.nested("pretrain", c.pretrain);
    v.nested("vqa", c.vqa);
    v.nested("sqa", c.sqa);
  } else {
    static_assert(sizeof(T) == 0, "no field list");
  }
}

template <class T>
void Reader::from_json_at(const json& j, T& value, const std::string& where) {
  Reader r(j, where);
  visit_fields(r, value);
  r.finish();
}

template <class T>
json write(const T& value) {
  Writer w;
  visit_fields(w, value);
  return w.out;
}

template <class T>
void Writer::nested(const char* key, const T& value) {
  out[key] = write(value);
}

template <class T>
void Writer::list(const char* key, const std::vector<T>& values) {
  json arr = json::array();
  for (const auto& v : values) arr.push_back(write(v));
  out[key] = arr;
}

template <class T>
void read(const json& j, T& value, const char* where) {
  try {
    Reader::from_json_at(j, value, where);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string(where) + ": " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (train_scenes < 1 || val_scenes < 0) throw Error(ErrorKind::Config, "train_scenes must be >= 1, val_scenes >= 0");
  generator.validate();
  pretrain.validate();
  vqa.validate();
  sqa.validate();
  if (scene_encoder.embed_dim != encoder.embed_dim) {
    throw Error(ErrorKind::Config, "scene_encoder.embed_dim must equal encoder.embed_dim");
  }
  if (scene_encoder.num_classes != generator.labels().num_classes()) {
    throw Error(ErrorKind::Config, "scene_encoder.num_classes must equal shapes x colors of the generator");
  }
}

json to_json(const GeneratorConfig& c) { return write(c); }
json to_json(const RenderConfig& c) { return write(c); }
json to_json(const EncoderConfig& c) { return write(c); }
json to_json(const SceneEncoderConfig& c) { return write(c); }
json to_json(const AugmentConfig& c) { return write(c); }
json to_json(const PretrainConfig& c) { return write(c); }
json to_json(const VqaConfig& c) { return write(c); }
json to_json(const SqaConfig& c) { return write(c); }
json to_json(const ExperimentConfig& c) { return write(c); }

void from_json(const json& j, GeneratorConfig& c) { read(j, c, "generator"); }
void from_json(const json& j, RenderConfig& c) { read(j, c, "render"); }
void from_json(const json& j, EncoderConfig& c) { read(j, c, "encoder"); }
void from_json(const json& j, SceneEncoderConfig& c) { read(j, c, "scene_encoder"); }
void from_json(const json& j, AugmentConfig& c) { read(j, c, "augment"); }
void from_json(const json& j, PretrainConfig& c) { read(j, c, "pretrain"); }
void from_json(const json& j, VqaConfig& c) { read(j, c, "vqa"); }
void from_json(const json& j, SqaConfig& c) { read(j, c, "sqa"); }
void from_json(const json& j, ExperimentConfig& c) { read(j, c, "config"); }

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  from_json(j, c);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Config, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str());
}

}  // namespace multiclip

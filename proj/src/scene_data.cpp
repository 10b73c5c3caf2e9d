#include "multiclip/scene_data.hpp"

#include "multiclip/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace multiclip {

namespace fs = std::filesystem;
using nlohmann::json;

void PointCloud::validate() const {
  if (points.rows() < 1) throw Error(ErrorKind::Validation, "point cloud is empty");
  if (points.rows() != colors.rows()) {
    throw Error(ErrorKind::Validation, "point cloud points/colors row count differ");
  }
  if (!points.allFinite()) throw Error(ErrorKind::Validation, "non-finite point coordinate");
  if (!colors.allFinite() || colors.minCoeff() < 0.0 || colors.maxCoeff() > 1.0) {
    throw Error(ErrorKind::Validation, "color component outside [0,1]");
  }
}

bool AxisAlignedBox::contains(const Vec3& p) const {
  const Vec3 lo = min_corner();
  const Vec3 hi = max_corner();
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

const ObjectAnnotation* SceneSample::find_instance(int instance_id) const {
  for (const auto& a : annotations) {
    if (a.instance_id == instance_id) return &a;
  }
  return nullptr;
}

const SceneSample* Dataset::find_scene(const std::string& scene_id) const {
  auto it = std::lower_bound(scenes.begin(), scenes.end(), scene_id,
                             [](const SceneSample& s, const std::string& id) { return s.scene_id < id; });
  if (it != scenes.end() && it->scene_id == scene_id) return &*it;
  return nullptr;
}

std::size_t Dataset::scene_index(const std::string& scene_id) const {
  const SceneSample* s = find_scene(scene_id);
  if (!s) throw Error(ErrorKind::Validation, "unknown scene_id " + scene_id);
  return static_cast<std::size_t>(s - scenes.data());
}

void Dataset::validate() const {
  const int num_classes = labels.num_classes();
  std::set<std::string> seen;
  for (const auto& s : scenes) {
    if (!seen.insert(s.scene_id).second) {
      throw Error(ErrorKind::Validation, "duplicate scene_id " + s.scene_id);
    }
    s.cloud.validate();
    std::set<int> instances;
    for (const auto& a : s.annotations) {
      if (a.class_id < 0 || a.class_id >= num_classes) {
        throw Error(ErrorKind::Validation,
                    "scene " + s.scene_id + ": class_id " + std::to_string(a.class_id) + " out of range");
      }
      if ((a.box.size.array() <= 0.0).any()) {
        throw Error(ErrorKind::Validation, "scene " + s.scene_id + ": non-positive box size");
      }
      if (!instances.insert(a.instance_id).second) {
        throw Error(ErrorKind::Validation,
                    "scene " + s.scene_id + ": duplicate instance_id " + std::to_string(a.instance_id));
      }
    }
  }
  for (const auto& q : qa) {
    const SceneSample* s = find_scene(q.scene_id);
    if (!s) {
      throw Error(ErrorKind::Validation,
                  "qa record " + q.question_id + " names unknown scene_id " + q.scene_id);
    }
    if (q.answers.empty()) throw Error(ErrorKind::Validation, "qa record " + q.question_id + " has no answers");
    for (int id : q.referred_instance_ids) {
      if (!s->find_instance(id)) {
        throw Error(ErrorKind::Validation, "qa record " + q.question_id + " refers to unknown instance " +
                                               std::to_string(id));
      }
    }
    for (int c : q.referred_class_ids) {
      if (c < 0 || c >= num_classes) {
        throw Error(ErrorKind::Validation, "qa record " + q.question_id + " refers to unknown class " +
                                               std::to_string(c));
      }
    }
  }
  for (const auto& r : sqa) {
    if (!find_scene(r.scene_id)) {
      throw Error(ErrorKind::Validation,
                  "sqa record " + r.question_id + " names unknown scene_id " + r.scene_id);
    }
    if (r.answers.empty()) throw Error(ErrorKind::Validation, "sqa record " + r.question_id + " has no answers");
    double n2 = 0.0;
    for (double v : r.rotation) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw Error(ErrorKind::Validation, "sqa record " + r.question_id + " quaternion is not unit norm");
    }
    if (!r.position.allFinite()) {
      throw Error(ErrorKind::Validation, "sqa record " + r.question_id + " position not finite");
    }
  }
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorKind::Config, "unknown split '" + name + "'");
}

std::string normalize_answer(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

// ---------------------------------------------------------------- JSON ----

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Load, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Load, "cannot write " + path.string());
  out << text;
}

Vec3 vec3_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::Load, what + ": expected 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorKind::Load, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

Dataset load_dataset(const fs::path& root, Split split) {
  const fs::path dir = root / to_string(split);
  const fs::path scene_dir = dir / "scenes";
  if (!fs::is_directory(scene_dir)) {
    throw Error(ErrorKind::Load, "missing directory " + scene_dir.string());
  }
  Dataset ds;
  {
    const json classes = read_json(dir / "classes.json");
    ds.labels.class_names = field<std::vector<std::string>>(classes, "class_names", "classes.json");
  }

  std::vector<fs::path> annotation_files;
  for (const auto& entry : fs::directory_iterator(scene_dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".annotations.json";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      annotation_files.push_back(entry.path());
    }
  }
  std::sort(annotation_files.begin(), annotation_files.end());
  if (annotation_files.empty()) throw Error(ErrorKind::Load, "no scenes under " + scene_dir.string());

  for (const auto& path : annotation_files) {
    const json j = read_json(path);
    const std::string where = path.filename().string();
    SceneSample s;
    s.scene_id = field<std::string>(j, "scene_id", where);
    s.scene_type = field<std::string>(j, "scene_type", where);
    s.captions = field<std::vector<std::string>>(j, "captions", where);
    for (const auto& o : field<json>(j, "objects", where)) {
      ObjectAnnotation a;
      a.instance_id = field<int>(o, "instance_id", where);
      a.class_id = field<int>(o, "class_id", where);
      a.box.center = vec3_from(field<json>(o, "center", where), where + " center");
      a.box.size = vec3_from(field<json>(o, "size", where), where + " size");
      s.annotations.push_back(a);
    }
    s.cloud = read_ply(scene_dir / (s.scene_id + ".ply"));
    ds.scenes.push_back(std::move(s));
  }
  std::sort(ds.scenes.begin(), ds.scenes.end(),
            [](const SceneSample& a, const SceneSample& b) { return a.scene_id < b.scene_id; });

  for (const auto& q : read_json(dir / "qa.json")) {
    QARecord r;
    const std::string where = "qa.json";
    r.question_id = field<std::string>(q, "question_id", where);
    r.scene_id = field<std::string>(q, "scene_id", where);
    r.question = field<std::string>(q, "question", where);
    r.answers = field<std::vector<std::string>>(q, "answers", where);
    r.referred_instance_ids = field<std::vector<int>>(q, "referred_instance_ids", where);
    r.referred_class_ids = field<std::vector<int>>(q, "referred_class_ids", where);
    ds.qa.push_back(std::move(r));
  }
  for (const auto& q : read_json(dir / "sqa.json")) {
    SituationRecord r;
    const std::string where = "sqa.json";
    r.question_id = field<std::string>(q, "question_id", where);
    r.scene_id = field<std::string>(q, "scene_id", where);
    r.situation_text = field<std::string>(q, "situation", where);
    r.position = vec3_from(field<json>(q, "position", where), where + " position");
    const auto rot = field<std::vector<double>>(q, "rotation", where);
    if (rot.size() != 4) throw Error(ErrorKind::Load, "sqa.json: rotation must have 4 components");
    std::copy(rot.begin(), rot.end(), r.rotation.begin());
    r.question = field<std::string>(q, "question", where);
    r.answers = field<std::vector<std::string>>(q, "answers", where);
    ds.sqa.push_back(std::move(r));
  }
  auto by_id = [](const auto& a, const auto& b) {
    return std::tie(a.scene_id, a.question_id) < std::tie(b.scene_id, b.question_id);
  };
  std::sort(ds.qa.begin(), ds.qa.end(), by_id);
  std::sort(ds.sqa.begin(), ds.sqa.end(), by_id);
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& root, Split split) {
  const fs::path dir = root / to_string(split);
  fs::create_directories(dir / "scenes");
  write_text(dir / "classes.json", json{{"class_names", dataset.labels.class_names}}.dump(2) + "\n");
  for (const auto& s : dataset.scenes) {
    json objects = json::array();
    for (const auto& a : s.annotations) {
      objects.push_back(json{{"instance_id", a.instance_id},
                             {"class_id", a.class_id},
                             {"center", vec3_to(a.box.center)},
                             {"size", vec3_to(a.box.size)}});
    }
    json j{{"scene_id", s.scene_id},
           {"scene_type", s.scene_type},
           {"captions", s.captions},
           {"objects", objects}};
    write_text(dir / "scenes" / (s.scene_id + ".annotations.json"), j.dump(2) + "\n");
    write_ply(s.cloud, dir / "scenes" / (s.scene_id + ".ply"));
  }
  json qa = json::array();
  for (const auto& r : dataset.qa) {
    qa.push_back(json{{"question_id", r.question_id},
                      {"scene_id", r.scene_id},
                      {"question", r.question},
                      {"answers", r.answers},
                      {"referred_instance_ids", r.referred_instance_ids},
                      {"referred_class_ids", r.referred_class_ids}});
  }
  write_text(dir / "qa.json", qa.dump(2) + "\n");
  json sqa = json::array();
  for (const auto& r : dataset.sqa) {
    sqa.push_back(json{{"question_id", r.question_id},
                       {"scene_id", r.scene_id},
                       {"situation", r.situation_text},
                       {"position", vec3_to(r.position)},
                       {"rotation", std::vector<double>(r.rotation.begin(), r.rotation.end())},
                       {"question", r.question},
                       {"answers", r.answers}});
  }
  write_text(dir / "sqa.json", sqa.dump(2) + "\n");
}

// ----------------------------------------------------------------- PLY ----

namespace {

enum class PlyType { Float, Double, UChar, Int, UInt, Short, UShort, Char };

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Double: return 8;
    case PlyType::Float:
    case PlyType::Int:
    case PlyType::UInt: return 4;
    case PlyType::Short:
    case PlyType::UShort: return 2;
    case PlyType::UChar:
    case PlyType::Char: return 1;
  }
  return 0;
}

PlyType parse_ply_type(const std::string& t) {
  if (t == "float" || t == "float32") return PlyType::Float;
  if (t == "double" || t == "float64") return PlyType::Double;
  if (t == "uchar" || t == "uint8") return PlyType::UChar;
  if (t == "char" || t == "int8") return PlyType::Char;
  if (t == "int" || t == "int32") return PlyType::Int;
  if (t == "uint" || t == "uint32") return PlyType::UInt;
  if (t == "short" || t == "int16") return PlyType::Short;
  if (t == "ushort" || t == "uint16") return PlyType::UShort;
  throw Error(ErrorKind::Load, "unsupported PLY property type " + t);
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  return v;
}

double decode(PlyType t, const char* p) {
  switch (t) {
    case PlyType::Float: return read_le<float>(p);
    case PlyType::Double: return read_le<double>(p);
    case PlyType::UChar: return read_le<std::uint8_t>(p);
    case PlyType::Char: return read_le<std::int8_t>(p);
    case PlyType::Int: return read_le<std::int32_t>(p);
    case PlyType::UInt: return read_le<std::uint32_t>(p);
    case PlyType::Short: return read_le<std::int16_t>(p);
    case PlyType::UShort: return read_le<std::uint16_t>(p);
  }
  return 0.0;
}

}  // namespace

PointCloud read_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Load, "missing file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw Error(ErrorKind::Load, path.string() + ": not a PLY file");

  bool binary = false;
  long vertex_count = -1;
  bool in_vertex = false;
  std::vector<std::pair<std::string, PlyType>> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw Error(ErrorKind::Load, path.string() + ": unsupported format " + fmt);
    } else if (tok == "element") {
      std::string name;
      long count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = count;
      else if (vertex_count < 0) throw Error(ErrorKind::Load, path.string() + ": vertex element must come first");
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw Error(ErrorKind::Load, path.string() + ": list vertex properties unsupported");
      ls >> name;
      props.emplace_back(name, parse_ply_type(type));
    } else if (tok == "end_header") {
      break;
    }
  }
  if (vertex_count < 1) throw Error(ErrorKind::Load, path.string() + ": no vertices");

  auto find_prop = [&](std::initializer_list<const char*> names) -> int {
    for (const char* n : names) {
      for (std::size_t i = 0; i < props.size(); ++i) {
        if (props[i].first == n) return static_cast<int>(i);
      }
    }
    throw Error(ErrorKind::Load, path.string() + ": missing property " + *names.begin());
  };
  const int ix = find_prop({"x"}), iy = find_prop({"y"}), iz = find_prop({"z"});
  const int ir = find_prop({"r", "red"}), ig = find_prop({"g", "green"}), ib = find_prop({"b", "blue"});

  PointCloud cloud;
  cloud.points.resize(vertex_count, 3);
  cloud.colors.resize(vertex_count, 3);
  std::vector<double> row(props.size());
  std::vector<std::size_t> offsets(props.size());
  std::size_t stride = 0;
  for (std::size_t i = 0; i < props.size(); ++i) {
    offsets[i] = stride;
    stride += ply_size(props[i].second);
  }
  std::vector<char> buf(stride);
  for (long v = 0; v < vertex_count; ++v) {
    if (binary) {
      if (!in.read(buf.data(), static_cast<std::streamsize>(stride))) {
        throw Error(ErrorKind::Load, path.string() + ": truncated vertex data");
      }
      for (std::size_t i = 0; i < props.size(); ++i) row[i] = decode(props[i].second, buf.data() + offsets[i]);
    } else {
      for (std::size_t i = 0; i < props.size(); ++i) {
        if (!(in >> row[i])) throw Error(ErrorKind::Load, path.string() + ": truncated vertex data");
      }
    }
    auto color = [&](int idx) {
      return props[static_cast<std::size_t>(idx)].second == PlyType::UChar ? row[static_cast<std::size_t>(idx)] / 255.0
                                                                         : row[static_cast<std::size_t>(idx)];
    };
    cloud.points.row(v) << row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
        row[static_cast<std::size_t>(iz)];
    cloud.colors.row(v) << color(ir), color(ig), color(ib);
  }
  cloud.validate();
  return cloud;
}

void write_ply(const PointCloud& cloud, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Load, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property double r\nproperty double g\nproperty double b\nend_header\n";
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const double row[6] = {cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2),
                           cloud.colors(i, 0), cloud.colors(i, 1), cloud.colors(i, 2)};
    out.write(reinterpret_cast<const char*>(row), sizeof(row));
  }
}

}  // namespace multiclip

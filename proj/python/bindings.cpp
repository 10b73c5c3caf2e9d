#include "multiclip/config.hpp"
#include "multiclip/error.hpp"
#include "multiclip/metrics.hpp"
#include "multiclip/renderer.hpp"
#include "multiclip/synthetic.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace multiclip;

namespace {

PointCloud make_cloud(const Mat3X& points, const Mat3X& colors) {
  PointCloud c{points, colors};
  c.validate();
  return c;
}

AxisAlignedBox make_box(const Vec3& center, const Vec3& size) {
  AxisAlignedBox b;
  b.center = center;
  b.size = size;
  return b;
}

py::dict scene_dict(const SceneSample& s) {
  py::dict d;
  d["scene_id"] = s.scene_id;
  d["scene_type"] = s.scene_type;
  d["points"] = s.cloud.points;
  d["colors"] = s.cloud.colors;
  d["captions"] = s.captions;
  py::list objects;
  for (const auto& a : s.annotations) {
    py::dict o;
    o["instance_id"] = a.instance_id;
    o["class_id"] = a.class_id;
    o["center"] = a.box.center;
    o["size"] = a.box.size;
    objects.append(o);
  }
  d["objects"] = objects;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Scene-text-image pre-training and 3-D question answering.";
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("contrastive_loss",
        [](const Mat& anchors, const Mat& positives, double tau) { return contrastive_loss(anchors, positives, tau).value; },
        py::arg("anchors"), py::arg("positives"), py::arg("tau") = kDefaultTemperature);
  m.def("cosine_alignment_loss",
        [](const Mat& anchors, const Mat& positives) { return cosine_alignment_loss(anchors, positives).value; });

  m.def("box_iou",
        [](const Vec3& ca, const Vec3& sa, const Vec3& cb, const Vec3& sb) {
          return box_iou(make_box(ca, sa), make_box(cb, sb));
        },
        py::arg("center_a"), py::arg("size_a"), py::arg("center_b"), py::arg("size_b"));
  m.def("em_at_1", &em_at_1, py::arg("predicted"), py::arg("ground_truths"));
  m.def("bleu", &bleu_n, py::arg("candidate"), py::arg("references"), py::arg("n") = 4);
  m.def("rouge_l", &rouge_l, py::arg("candidate"), py::arg("references"), py::arg("beta") = 1.2);
  m.def("cider",
        [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) {
          const CiderResult res = cider(c, r);
          return py::make_tuple(res.score, res.per_item);
        },
        py::arg("candidates"), py::arg("references"));

  m.def("generate_dataset",
        [](std::uint64_t seed, int scenes, const std::filesystem::path& out, const std::string& split) {
          const Split sp = parse_split(split);
          save_dataset(generate_dataset(seed, scenes, sp, GeneratorConfig{}), out, sp);
        },
        py::arg("seed"), py::arg("scenes"), py::arg("out"), py::arg("split") = "train");
  m.def("load_scenes",
        [](const std::filesystem::path& root, const std::string& split) {
          const Dataset d = load_dataset(root, parse_split(split));
          py::list out;
          for (const auto& s : d.scenes) out.append(scene_dict(s));
          return out;
        },
        py::arg("root"), py::arg("split") = "train");

  m.def("render_views",
        [](const Mat3X& points, const Mat3X& colors, int num_views, int size) {
          RenderConfig cfg;
          cfg.width = cfg.height = size;
          py::list out;
          for (const auto& v : render_multiview(make_cloud(points, colors), num_views, cfg)) {
            py::array_t<double> img({v.height, v.width, 3});
            std::copy(v.pixels.begin(), v.pixels.end(), img.mutable_data());
            out.append(img);
          }
          return out;
        },
        py::arg("points"), py::arg("colors"), py::arg("num_views") = 5, py::arg("size") = 224);

  m.def("embed_scene",
        [](const Mat3X& points, const Mat3X& colors, int num_points) {
          const SceneEncoder enc{SceneEncoderConfig{}};
          return Vec(enc.embed(evaluation_points(make_cloud(points, colors), num_points)));
        },
        py::arg("points"), py::arg("colors"), py::arg("num_points") = 1024,
        "Embedding from a freshly initialized scene encoder (fixed init seed).");

  m.def("normalize_config", [](const std::string& text) { return to_json(parse_experiment_config(text)).dump(2); },
        py::arg("text"), "Validates a JSON experiment config and returns it with all defaults filled in.");
}

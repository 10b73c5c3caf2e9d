// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include "multiclip/config.hpp"
#include "multiclip/error.hpp"
#include "multiclip/losses.hpp"
#include "multiclip/metrics.hpp"
#include "multiclip/renderer.hpp"
#include "multiclip/synthetic.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <Eigen/Geometry>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace multiclip;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Mat permute_rows(const Mat& m, const std::vector<std::size_t>& perm) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

Dataset shuffle_points(Dataset d, std::uint64_t seed) {
  for (std::size_t i = 0; i < d.scenes.size(); ++i) d.scenes[i].cloud = fixtures::permuted(d.scenes[i].cloud, seed + i);
  return d;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ------------------------------------------------------------ criterion 1 --

void contrastive_values(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(1);
  o.expect(contrastive_loss(testing::random_unit_rows(1, 16, rng), testing::random_unit_rows(1, 16, rng), 0.07).value ==
               0.0,
           "B=1 gives 0");
  const Mat uniform = Mat::Constant(4, 8, 1.0 / std::sqrt(8.0));
  o.expect(std::abs(contrastive_loss(uniform, uniform, 0.07).value - std::log(4.0)) < 1e-9, "uniform B=4 gives ln 4");
  const Mat id = Mat::Identity(2, 2);
  const double two = contrastive_loss(id, id, 1.0).value;
  o.expect(std::abs(two - 0.31326168751822286) < 1e-9, "B=2 identity at tau=1 gives 0.31326");
  double lowest = 1e300;
  for (int t = 0; t < 1000; ++t) {
    const int b = 1 + static_cast<int>(rng.index(16));
    const double tau = rng.uniform(0.01, 1.0);
    lowest = std::min(lowest, contrastive_loss(testing::random_unit_rows(b, 32, rng), testing::random_unit_rows(b, 32, rng),
                                               tau)
                                  .value);
  }
  o.expect(lowest >= 0.0, "loss >= 0 on 1000 random batches");
  const double secs = seconds_since(t0);
  o.expect(secs < 1.0, "runtime under 1 s");
  o.note("B=2 value " + fmt(two, 12) + ", min over random batches " + fmt(lowest));
}

// ------------------------------------------------------------ criterion 2 --

void gradient_checks(Outcome& o) {
  using testing::grad_check;
  using testing::kGradTol;
  using testing::random_mat;
  Rng rng(2);
  double worst = 0.0;
  auto check = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    o.expect(err < kGradTol, name + " relative error " + fmt(err));
  };

  const Mat a = testing::random_unit_rows(6, 8, rng), p = testing::random_unit_rows(6, 8, rng);
  const Var ca = ad::constant(a), cp = ad::constant(p);
  check("contrastive", grad_check([&](const Var& x) { return contrastive_loss(x, cp, 0.2); }, a));
  check("contrastive (positives)", grad_check([&](const Var& x) { return contrastive_loss(ca, x, 0.2); }, p));
  check("cosine", grad_check([&](const Var& x) { return cosine_alignment_loss(x, cp); }, a));

  ObjectAnnotation b1, b2;
  b1.box.center = Vec3(0, 0, 0.5);
  b1.box.size = Vec3(0.5, 0.5, 1.0);
  b1.class_id = 2;
  b2.box.center = Vec3(2, 2, 0.3);
  b2.box.size = Vec3(0.4, 0.6, 0.6);
  b2.class_id = 5;
  const std::vector<ObjectAnnotation> ann{b1, b2};
  Mat ctr(4, 3), siz(4, 3);
  ctr << 0.1, -0.05, 0.45, 1.9, 2.1, 0.35, -3, -3, 0, 0.3, 0.2, 0.4;
  siz << 0.6, 0.5, 0.9, 0.5, 0.5, 0.7, 1, 1, 1, 0.4, 0.8, 0.6;
  const Mat obj = random_mat(4, 1, rng), lg = random_mat(4, 8, rng);
  const auto det = detection_loss(obj, ctr, siz, lg, ann);
  auto det_value = [&](const Mat& o2, const Mat& c, const Mat& s, const Mat& l) {
    return detection_loss(o2, c, s, l, ann).total;
  };
  double det_err = 0.0;
  det_err = std::max(det_err, testing::relative_error(det.grad_objectness, testing::numeric_grad(
                                                                              [&](const Mat& m) { return det_value(m, ctr, siz, lg); }, obj)));
  det_err = std::max(det_err, testing::relative_error(det.grad_centers, testing::numeric_grad(
                                                                            [&](const Mat& m) { return det_value(obj, m, siz, lg); }, ctr)));
  det_err = std::max(det_err, testing::relative_error(det.grad_sizes, testing::numeric_grad(
                                                                          [&](const Mat& m) { return det_value(obj, ctr, m, lg); }, siz)));
  det_err = std::max(det_err, testing::relative_error(det.grad_class_logits, testing::numeric_grad(
                                                                                 [&](const Mat& m) { return det_value(obj, ctr, siz, m); }, lg)));
  check("L_det", det_err);

  Mat answer_targets = Mat::Zero(1, 6);
  answer_targets(0, 1) = answer_targets(0, 4) = 1.0;
  VqaTargets vt{answer_targets, Mat::Zero(1, 8), 2};
  vt.object_classes(0, 3) = 1.0;
  const Mat ans = random_mat(1, 6, rng), cls = random_mat(1, 8, rng), loc = random_mat(1, 5, rng);
  const Var c_ans = ad::constant(ans), c_cls = ad::constant(cls), c_loc = ad::constant(loc);
  check("L_ans", grad_check([&](const Var& x) { return vqa_loss({c_loc, x, c_cls}, vt).total; }, ans));
  check("L_obj", grad_check([&](const Var& x) { return vqa_loss({c_loc, c_ans, x}, vt).total; }, cls));
  check("L_loc", grad_check([&](const Var& x) { return vqa_loss({x, c_ans, c_cls}, vt).total; }, loc));

  SqaTargets st{Mat::Zero(1, 2), Vec3(0.5, -1, 0.2), normalize_quaternion(Quaternion{0.1, 0.7, -0.2, 0.5})};
  const Mat pos = random_mat(1, 3, rng), raw = random_mat(1, 4, rng);
  const Var c_pos = ad::constant(pos), c_rot = ad::constant(raw.rowwise().normalized());
  const Var c_sans = ad::constant(Mat::Zero(1, 2));
  check("L_pos", grad_check([&](const Var& x) { return sqa_loss({c_sans, x, c_rot}, st).total; }, pos));
  check("L_rot", grad_check([&](const Var& x) { return sqa_loss({c_sans, c_pos, normalize_quaternion(x)}, st).total; }, raw));
  o.note("worst relative error " + fmt(worst, 3));
}

// ------------------------------------------------------------ criterion 3 --

void loss_composition(Outcome& o) {
  const Dataset d = generate_dataset(31, 4, Split::Train, GeneratorConfig{});
  PretrainModel model(dataset_vocabulary(d), EncoderConfig{}, SceneEncoderConfig{});
  FeatureProvider five(model.dual(), RenderConfig{}, 5), one(model.dual(), RenderConfig{}, 1);
  const int n = static_cast<int>(d.scenes.size());
  const int dim = model.scene().config().embed_dim;
  AlignmentBatch multi{Mat(n, dim), Mat(n, dim), Mat(n, dim)};
  Mat single_image(n, dim);
  for (int i = 0; i < n; ++i) {
    const auto& s = d.scenes[static_cast<std::size_t>(i)];
    multi.z_scene.row(i) = model.scene().embed(evaluation_points(s.cloud, 512)).transpose();
    multi.z_text.row(i) = five.text(s.captions.front()).pooled.value();
    multi.z_image.row(i) = five.scene_image(s.scene_id, s.cloud).value();
    single_image.row(i) = one.scene_image(s.scene_id, s.cloud).value();
  }
  const double det = 0.8;
  const PretrainConfig full;
  o.expect(full.alpha == 0.5 && full.beta == 0.5, "default alpha = beta = 0.5");
  const PretrainLoss base = pretrain_loss(multi, det, full);
  const double text = static_cast<double>(oracle::contrastive(multi.z_scene, multi.z_text, full.tau));
  const double image = static_cast<double>(oracle::contrastive(multi.z_scene, multi.z_image, full.tau));
  o.expect(std::abs(base.total - (det + 0.5 * text + 0.5 * image)) < 1e-9, "L_pre = L_det + 0.5 L_text + 0.5 L_image");

  AlignmentBatch sv = multi;
  sv.z_image = single_image;
  const PretrainLoss s = pretrain_loss(sv, det, full);
  o.expect(s.image != base.image && s.text == base.text && s.det == base.det, "single-view changes only the image term");

  PretrainConfig cos = full;
  cos.use_cosine_variant = true;
  const PretrainLoss c = pretrain_loss(multi, det, cos);
  o.expect(c.det == base.det && std::abs(c.text - cosine_alignment_loss(multi.z_scene, multi.z_text).value) < 1e-12 &&
               std::abs(c.image - cosine_alignment_loss(multi.z_scene, multi.z_image).value) < 1e-12,
           "cosine replaces only the alignment terms");

  PretrainConfig nt = full;
  nt.use_text_loss = false;
  const PretrainLoss t = pretrain_loss(multi, det, nt);
  o.expect(t.text == 0.0 && t.image == base.image && t.det == base.det, "w/o L_text removes only the text term");

  PretrainConfig ni = full;
  ni.use_image_loss = false;
  const PretrainLoss im = pretrain_loss(multi, det, ni);
  o.expect(im.image == 0.0 && im.text == base.text && im.det == base.det, "w/o L_image removes only the image term");
  o.note("L_pre " + fmt(base.total) + " (text " + fmt(text) + ", image " + fmt(image) + ")");
}

// ------------------------------------------------------- criteria 4 and 5 --

constexpr int kAlignScenes = 16;

const Dataset& align_train() {
  static const Dataset d = generate_dataset(1, kAlignScenes, Split::Train, GeneratorConfig{});
  return d;
}

const Dataset& held_out() {
  static const Dataset d = generate_dataset(2, kAlignScenes, Split::Val, GeneratorConfig{});
  return d;
}

PretrainConfig align_config() {
  PretrainConfig c;
  c.iterations = 500;
  c.batch_size = 16;
  c.learning_rate = 1e-3;
  c.num_points = 512;
  return c;
}

struct Pretrained {
  std::optional<Checkpoint> checkpoint;
  double seconds = 0.0;
};

Pretrained& pretrained() {
  static Pretrained p;
  return p;
}

void alignment(Outcome& o) {
  const auto t0 = Clock::now();
  const Dataset& d = align_train();
  PretrainModel model(dataset_vocabulary(d), EncoderConfig{}, SceneEncoderConfig{});
  const PretrainConfig cfg = align_config();
  o.expect(cfg.iterations <= 1000, "at most 1000 iterations");
  auto result = run_pretraining(d, model, RenderConfig{}, cfg, 3);
  pretrained().seconds = seconds_since(t0);
  pretrained().checkpoint = std::move(result.checkpoint);

  const EmbeddingTable table = export_embeddings(d, model.scene(), cfg.num_points);
  FeatureProvider features(model.dual(), RenderConfig{}, cfg.num_views);
  const double top1 = scene_to_text_top1(d, table, features);
  const TypeCohesion cohesion = type_cohesion(table);
  o.expect(top1 >= 0.9, "scene->text top-1 >= 90%");
  o.expect(cohesion.intra > cohesion.inter, "intra-type cosine > inter-type cosine");
  const double secs = seconds_since(t0);
  o.expect(secs < 300.0, "runtime under 5 min");
  o.note("top-1 " + fmt(100.0 * top1) + "%, intra " + fmt(cohesion.intra) + ", inter " + fmt(cohesion.inter) + ", " +
         fmt(secs, 3) + " s");
}

VqaConfig vqa_config(int seed) {
  VqaConfig c;
  c.hidden = 64;
  c.ffn_hidden = 128;
  c.layers = 1;
  c.num_points = 512;
  c.batch_size = 8;
  c.epochs = 8;
  c.learning_rate = 1e-3;
  c.lr_milestones = {6};
  c.init_seed = 11 + static_cast<std::uint64_t>(seed);
  c.augment.cuboid_min_points = 512;
  return c;
}

SqaConfig sqa_config(int seed) {
  SqaConfig c;
  c.hidden = 64;
  c.ffn_hidden = 128;
  c.mlp_hidden = 64;
  c.num_points = 512;
  c.batch_size = 8;
  c.epochs = 20;
  c.learning_rate = 1e-3;
  c.lr_milestones = {15};
  c.init_seed = 13 + static_cast<std::uint64_t>(seed);
  c.augment.cuboid_min_points = 512;
  return c;
}

void transfer(Outcome& o) {
  const auto t0 = Clock::now();
  double budget = 0.0;
  if (!pretrained().checkpoint) {
    PretrainModel model(dataset_vocabulary(align_train()), EncoderConfig{}, SceneEncoderConfig{});
    pretrained().checkpoint = run_pretraining(align_train(), model, RenderConfig{}, align_config(), 3).checkpoint;
  } else {
    budget = pretrained().seconds;
  }
  const Checkpoint& pre = *pretrained().checkpoint;
  const Dataset& train = align_train();
  const Dataset& val = held_out();
  const Vocabulary vocab = dataset_vocabulary(train);
  std::vector<double> vqa_pre, vqa_scratch, sqa_pre, sqa_scratch;
  for (int seed = 0; seed < 3; ++seed) {
    for (bool warm : {false, true}) {
      VqaModel m(vocab, build_answer_vocab(train.qa, 1), EncoderConfig{}, SceneEncoderConfig{}, vqa_config(seed));
      if (warm) m.load_pretrained(pre);
      finetune_vqa(train, m, 100 + static_cast<std::uint64_t>(seed));
      (warm ? vqa_pre : vqa_scratch).push_back(evaluate_vqa(val, predict_vqa(val, m)).em_at_1);

      SqaModel s(vocab, build_answer_vocab(train.sqa, 1), EncoderConfig{}, SceneEncoderConfig{}, sqa_config(seed));
      if (warm) s.load_pretrained(pre);
      finetune_sqa(train, s, 100 + static_cast<std::uint64_t>(seed));
      (warm ? sqa_pre : sqa_scratch).push_back(evaluate_sqa(val, predict_sqa(val, s)).em_at_1);
    }
  }
  const double vp = median3(vqa_pre), vs = median3(vqa_scratch), sp = median3(sqa_pre), ss = median3(sqa_scratch);
  o.expect(vp >= vs, "VQA median EM@1 pre-trained >= scratch");
  o.expect(sp >= ss, "SQA median EM@1 pre-trained >= scratch");
  const double secs = seconds_since(t0) + budget;
  o.expect(secs < 900.0, "runtime under 15 min");
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : "/") + fmt(100 * x);
    return s;
  };
  o.note("per seed VQA " + list(vqa_pre) + " vs " + list(vqa_scratch) + ", SQA " + list(sqa_pre) + " vs " +
         list(sqa_scratch));
  o.note("VQA EM@1 " + fmt(100 * vp) + " vs " + fmt(100 * vs) + ", SQA EM@1 " + fmt(100 * sp) + " vs " + fmt(100 * ss) +
         ", " + fmt(secs, 3) + " s including pre-training");
}

// ------------------------------------------------------------ criterion 6 --

std::string random_sentence(Rng& rng) {
  static const std::vector<std::string> words{"the", "a", "red", "box", "chair", "on", "near", "table", "blue", "cat"};
  const int n = 1 + static_cast<int>(rng.index(8));
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + words[rng.index(words.size())];
  return s;
}

void metric_checks(Outcome& o) {
  AxisAlignedBox unit;
  unit.center = Vec3::Zero();
  unit.size = Vec3::Ones();
  AxisAlignedBox far = unit, half = unit;
  far.center = Vec3(5, 0, 0);
  half.center = Vec3(0.5, 0, 0);
  o.expect(std::abs(box_iou(unit, unit) - 1.0) < 1e-12, "IoU of identical boxes is 1");
  o.expect(box_iou(unit, far) == 0.0, "IoU of disjoint boxes is 0");
  o.expect(std::abs(box_iou(unit, half) - 1.0 / 3.0) < 1e-12, "IoU of half-shifted unit boxes is 1/3");

  Rng rng(6);
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (int i = 0; i < 200; ++i) {
    cands.push_back(random_sentence(rng));
    std::vector<std::string> set;
    for (int k = 0, n = 1 + static_cast<int>(rng.index(3)); k < n; ++k) set.push_back(random_sentence(rng));
    refs.push_back(set);
  }
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(bleu_n(cands[i], refs[i], n) - oracle::bleu(cands[i], refs[i], n)));
    worst = std::max(worst, std::abs(rouge_l(cands[i], refs[i]) - oracle::rouge_l(cands[i], refs[i])));
  }
  const auto lib = cider(cands, refs);
  const auto ref = oracle::cider(cands, refs);
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(lib.per_item[i] - ref[i]));
  o.expect(worst < 1e-9, "BLEU/ROUGE-L/CIDEr match brute force within 1e-9");

  o.expect(em_at_1("  Brown ", {"brown"}) == 1, "EM@1 ignores case and surrounding space");
  o.expect(em_at_1("Two  Chairs", {"one", "two chairs"}) == 1, "EM@1 collapses inner space and accepts any reference");
  o.expect(em_at_1("brown", {"browns"}) == 0, "EM@1 is exact after normalization");
  o.note("max deviation from brute force " + fmt(worst, 3));
}

// ------------------------------------------------------------ criterion 7 --

void structure(Outcome& o) {
  SceneEncoderConfig sc;
  sc.num_proposals = 16;
  const SceneEncoder enc(sc);
  const auto scene = fixtures::single_object_scene();
  const double scene_dev = (enc.embed(scene.cloud) - enc.embed(fixtures::permuted(scene.cloud, 3))).cwiseAbs().maxCoeff();
  o.expect(scene_dev < 1e-5, "scene encoder embedding is point-order invariant");

  Rng rng(7);
  const Mat feats = testing::random_mat(16, 128, rng);
  const auto perm = rng.permutation(16);
  const SceneTokens ta = enc.refine_with_transformer(feats);
  const SceneTokens tb = enc.refine_with_transformer(permute_rows(feats, perm));
  const double token_dev = std::max((permute_rows(ta.object_tokens, perm) - tb.object_tokens).cwiseAbs().maxCoeff(),
                                    (ta.global_token - tb.global_token).cwiseAbs().maxCoeff());
  o.expect(token_dev < 1e-5, "object tokens are permutation equivariant");

  const Dataset d = generate_dataset(4, 4, Split::Train, GeneratorConfig{});
  const Dataset shuffled = shuffle_points(d, 40);
  const Vocabulary vocab = dataset_vocabulary(d);
  VqaConfig vc = vqa_config(0);
  VqaModel vqa(vocab, build_answer_vocab(d.qa, 1), EncoderConfig{}, sc, vc);
  const auto va = predict_vqa(d, vqa), vb = predict_vqa(shuffled, vqa);
  double vqa_dev = 0.0;
  bool vqa_same = true;
  for (std::size_t i = 0; i < va.size(); ++i) {
    vqa_same = vqa_same && va[i].answer == vb[i].answer;
    vqa_dev = std::max(vqa_dev, (va[i].box.center - vb[i].box.center).norm());
  }
  o.expect(vqa_same && vqa_dev < 1e-5, "VQA outputs are point-order invariant");

  nn::ParameterStore store;
  const VqaHead head(store, vc, 512, 5, 8, rng);
  const Mat tokens = testing::random_mat(16, 128, rng);
  const Var words = ad::constant(testing::random_mat(6, 512, rng));
  const FusionOutput fa = head.fuse(words, 5, ad::constant(tokens));
  const FusionOutput fb = head.fuse(words, 5, ad::constant(permute_rows(tokens, perm)));
  const double fusion_dev = std::max((permute_rows(fa.scene_tokens_out.value(), perm) - fb.scene_tokens_out.value()).cwiseAbs().maxCoeff(),
                                     (fa.pooled_question.value() - fb.pooled_question.value()).cwiseAbs().maxCoeff());
  o.expect(fusion_dev < 1e-5, "VQA fusion is equivariant to scene token order");

  SqaModel sqa(vocab, build_answer_vocab(d.sqa, 1), EncoderConfig{}, sc, sqa_config(0));
  const auto sa = predict_sqa(d, sqa), sb = predict_sqa(shuffled, sqa);
  double sqa_dev = 0.0;
  bool sqa_same = true;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    sqa_same = sqa_same && sa[i].answer == sb[i].answer;
    sqa_dev = std::max(sqa_dev, (sa[i].position - sb[i].position).norm());
  }
  o.expect(sqa_same && sqa_dev < 1e-5, "SQA outputs are point-order invariant");

  Vec e = Vec::Zero(4), f = Vec::Zero(4), g = Vec::Zero(4);
  e(0) = 1.0;
  f(1) = 1.0;
  g(2) = 1.0;
  const double fuse_dev =
      (fuse_multiview({{e}, {f}, {g}}).embedding - fuse_multiview({{g}, {e}, {f}}).embedding).cwiseAbs().maxCoeff();
  o.expect(fuse_dev < 1e-12, "multi-view fusion is order invariant");

  PointCloud cloud = generate_synthetic_scene(5, GeneratorConfig{}).scene.cloud;
  const Vec3 mid = cloud.centroid();
  cloud.points.rowwise() -= Eigen::RowVector3d(mid.x(), mid.y(), 0.0);
  PointCloud turned = cloud;
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(72.0 * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
  turned.points = (cloud.points * rz.transpose()).eval();
  RenderConfig rc;
  rc.width = rc.height = 96;
  const auto base = render_multiview(cloud, 5, rc);
  const auto rot = render_multiview(turned, 5, rc);
  double pixel_dev = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < base[k].pixels.size(); ++i) {
      pixel_dev = std::max(pixel_dev, static_cast<double>(std::abs(rot[k].pixels[i] - base[k + 1].pixels[i])));
    }
  }
  o.expect(pixel_dev <= 2.0 / 255.0, "renderer is 72-degree equivariant within 2/255");
  o.note("max deviations: scene " + fmt(scene_dev, 3) + ", tokens " + fmt(token_dev, 3) + ", vqa " + fmt(vqa_dev, 3) +
         ", fusion " + fmt(fusion_dev, 3) + ", sqa " + fmt(sqa_dev, 3) + ", pixels " + fmt(pixel_dev * 255.0, 3) + "/255");
}

// ------------------------------------------------------------ criterion 8 --

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MULTICLIP_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return files;
}

bool pipeline(const fs::path& root, int jobs) {
  const std::string c = " --seed 5 --jobs " + std::to_string(jobs) + " --config " + std::string(MULTICLIP_SOURCE_DIR) +
                        "/configs/tiny.json";
  const std::string data = " --data " + (root / "data").string();
  auto out = [&](const char* d) { return " --out " + (root / d).string(); };
  const std::string pre = (root / "pre" / "pretrain.ckpt").string();
  return run_cli("gen-data" + c + out("data")) == 0 && run_cli("pretrain" + c + data + out("pre")) == 0 &&
         run_cli("finetune-vqa --pretrained " + pre + c + data + out("vqa")) == 0 &&
         run_cli("finetune-sqa --pretrained " + pre + c + data + out("sqa")) == 0 &&
         run_cli("eval-vqa --checkpoint " + (root / "vqa" / "vqa.ckpt").string() + c + data + out("evqa")) == 0 &&
         run_cli("eval-sqa --checkpoint " + (root / "sqa" / "sqa.ckpt").string() + c + data + out("esqa")) == 0 &&
         run_cli("embed --checkpoint " + pre + c + data + out("emb")) == 0 &&
         run_cli("ablation" + c + data + out("abl")) == 0;
}

void determinism(Outcome& o) {
  const fs::path a = fs::temp_directory_path() / "mc_accept_run_a";
  const fs::path b = fs::temp_directory_path() / "mc_accept_run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  o.expect(pipeline(a, 1), "first pipeline run succeeds");
  o.expect(pipeline(b, 2), "second pipeline run succeeds");
  if (!o.pass) return;
  const auto ta = tree(a), tb = tree(b);
  o.expect(ta.size() == tb.size(), "both runs write the same files");
  int checkpoints = 0, reports = 0;
  for (const auto& [name, bytes] : ta) {
    const auto it = tb.find(name);
    o.expect(it != tb.end() && it->second == bytes, name + " is byte-identical");
    checkpoints += name.ends_with(".ckpt");
    reports += name.ends_with("report.json") || name.ends_with("ablation.json");
  }
  o.expect(checkpoints == 3 && reports == 3, "checkpoints and reports were compared");
  o.note(std::to_string(ta.size()) + " files identical across runs with --jobs 1 and 2");
  fs::remove_all(a);
  fs::remove_all(b);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"contrastive loss values", contrastive_values},
      {"gradient checks", gradient_checks},
      {"L_pre composition and ablation toggles", loss_composition},
      {"synthetic alignment", alignment},
      {"pre-trained vs scratch fine-tuning", transfer},
      {"captioning and grounding metrics", metric_checks},
      {"structural invariants", structure},
      {"pipeline determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("threw: ") + e.what());
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " ("
              << fmt(seconds_since(t0), 3) << " s)";
    for (const auto& n : o.notes) std::cout << "; " << n;
    std::cout << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

#include "multiclip/pretrain.hpp"

#include "multiclip/config.hpp"
#include "multiclip/optim.hpp"
#include "multiclip/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace multiclip {

void AlignmentBatch::validate() const {
  const Eigen::Index b = z_scene.rows();
  const Eigen::Index d = z_scene.cols();
  if (b < 1 || z_image.rows() != b || z_text.rows() != b || z_image.cols() != d || z_text.cols() != d) {
    throw Error(ErrorKind::Input, "alignment batch: modalities must share shape B x d with B >= 1");
  }
  for (const Mat* m : {&z_scene, &z_image, &z_text}) {
    if (((m->rowwise().norm().array() - 1.0).abs() > 1e-5).any()) {
      throw Error(ErrorKind::Input, "alignment batch: rows must be unit norm");
    }
  }
}

void PretrainConfig::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorKind::Config, "pretrain.tau must be > 0");
  if (alpha < 0.0 || beta < 0.0) throw Error(ErrorKind::Config, "pretrain.alpha and pretrain.beta must be >= 0");
  if (num_views < 1) throw Error(ErrorKind::Config, "pretrain.num_views must be >= 1");
  if (iterations < 0 || batch_size < 1 || num_points < 1 || checkpoint_every < 0) {
    throw Error(ErrorKind::Config, "pretrain: iterations, batch_size, num_points, checkpoint_every out of range");
  }
  if (!(learning_rate > 0.0) || weight_decay < 0.0) throw Error(ErrorKind::Config, "pretrain: bad optimizer settings");
}

PretrainLoss pretrain_loss(const AlignmentBatch& batch, double det_loss, const PretrainConfig& config) {
  batch.validate();
  PretrainObjective o = pretrain_objective(ad::constant(batch.z_scene), ad::constant(batch.z_image),
                                           ad::constant(batch.z_text), ad::constant(Mat::Constant(1, 1, det_loss)),
                                           config);
  return o.breakdown;
}

PretrainObjective pretrain_objective(const Var& z_scene, const Var& z_image, const Var& z_text, const Var& det_loss,
                                     const PretrainConfig& config, const Var* log_tau) {
  auto term = [&](const Var& positives) {
    if (config.use_cosine_variant) return cosine_alignment_loss(z_scene, positives);
    if (log_tau) return contrastive_loss_log_tau(z_scene, positives, *log_tau);
    return contrastive_loss(z_scene, positives, config.tau);
  };
  PretrainObjective out;
  Var total = config.use_det_loss ? det_loss : ad::constant(Mat::Zero(1, 1));
  out.breakdown.det = config.use_det_loss ? det_loss.scalar() : 0.0;
  if (config.use_text_loss) {
    const Var t = term(z_text);
    out.breakdown.text = t.scalar();
    total = ad::add(total, ad::scale(t, config.alpha));
  }
  if (config.use_image_loss) {
    const Var i = term(z_image);
    out.breakdown.image = i.scalar();
    total = ad::add(total, ad::scale(i, config.beta));
  }
  out.total = total;
  out.breakdown.total = total.scalar();
  return out;
}

std::string model_config_json(const EncoderConfig& encoder, const SceneEncoderConfig& scene) {
  nlohmann::json j;
  j["encoder"] = to_json(encoder);
  j["scene_encoder"] = to_json(scene);
  return j.dump();
}

std::string model_fingerprint(const EncoderConfig& encoder, const SceneEncoderConfig& scene) {
  return fingerprint(model_config_json(encoder, scene));
}

Vocabulary dataset_vocabulary(const Dataset& dataset) {
  std::vector<std::string> corpus;
  for (const auto& s : dataset.scenes) corpus.insert(corpus.end(), s.captions.begin(), s.captions.end());
  for (const auto& q : dataset.qa) corpus.push_back(q.question);
  for (const auto& q : dataset.sqa) {
    corpus.push_back(q.situation_text);
    corpus.push_back(q.question);
  }
  return Vocabulary::build(corpus);
}

// ----------------------------------------------------------------- model --

PretrainModel::PretrainModel(Vocabulary vocab, const EncoderConfig& encoder, const SceneEncoderConfig& scene,
                             double init_tau)
    : dual_(std::move(vocab), encoder), scene_(scene) {
  if (!(init_tau > 0.0)) throw Error(ErrorKind::Config, "initial temperature must be > 0");
  log_tau_ = extra_.add("pretrain.log_tau", Mat::Constant(1, 1, std::log(init_tau)));
}

std::string PretrainModel::fingerprint() const { return model_fingerprint(dual_.config(), scene_.config()); }

Checkpoint PretrainModel::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "pretrain";
  ck.config_json = model_config_json(dual_.config(), scene_.config());
  ck.fingerprint = multiclip::fingerprint(ck.config_json);
  ck.metadata["vocabulary"] = dual_.vocab().to_json();
  for (const nn::ParameterStore* s : {&scene_.parameters(), &dual_.parameters(), &extra_}) {
    auto snap = s->snapshot();
    ck.tensors.insert(ck.tensors.end(), snap.begin(), snap.end());
  }
  return ck;
}

void PretrainModel::load(const Checkpoint& ck) {
  if (ck.fingerprint != fingerprint()) {
    throw Error(ErrorKind::Load, "checkpoint fingerprint " + ck.fingerprint + " does not match model " + fingerprint());
  }
  auto vocab = ck.metadata.find("vocabulary");
  if (vocab == ck.metadata.end() || Vocabulary::from_json(vocab->second).tokens() != dual_.vocab().tokens()) {
    throw Error(ErrorKind::Load, "checkpoint vocabulary does not match the model vocabulary");
  }
  scene_.parameters().load(ck.tensors, "scene.");
  dual_.parameters().load(ck.tensors, "text.");
  dual_.parameters().load(ck.tensors, "image.");
  extra_.load(ck.tensors, "pretrain.");
}

// ------------------------------------------------------------------ loop --

PretrainResult run_pretraining(const Dataset& dataset, PretrainModel& model, const RenderConfig& render,
                               const PretrainConfig& config, std::uint64_t seed, const PretrainHooks& hooks) {
  config.validate();
  if (dataset.scenes.empty()) throw Error(ErrorKind::Input, "pre-training needs at least one scene");
  for (const auto& s : dataset.scenes) {
    if (s.captions.empty()) throw Error(ErrorKind::Input, "scene " + s.scene_id + " has no caption");
  }
  FeatureProvider features(model.dual(), render, config.num_views);
  if (hooks.on_render) features.set_render_observer(hooks.on_render);
  if (hooks.precomputed) features.set_precomputed(*hooks.precomputed);
  {
    std::vector<std::string> texts;
    std::vector<std::pair<std::string, const PointCloud*>> scenes;
    for (const auto& s : dataset.scenes) {
      texts.insert(texts.end(), s.captions.begin(), s.captions.end());
      scenes.emplace_back(s.scene_id, &s.cloud);
    }
    features.prefetch(texts, scenes, hooks.jobs);
  }

  std::vector<nn::Parameter*> params = model.scene().parameters().trainable();
  const auto dual_params = model.dual().parameters().trainable();
  params.insert(params.end(), dual_params.begin(), dual_params.end());
  model.log_tau()->set_trainable(config.learnable_tau && !config.use_cosine_variant);
  if (model.log_tau()->trainable()) params.push_back(model.log_tau());
  nn::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.weight_decay = config.weight_decay;
  adam.grad_clip_norm = config.grad_clip_norm;
  nn::Adam opt(params, adam);

  Rng rng(Rng::derive(seed, 0x50524554));
  const std::size_t n = dataset.scenes.size();
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n);
  std::vector<std::size_t> order = rng.permutation(n);
  std::size_t cursor = 0;

  PretrainResult result;
  PretrainLoss last_finite;
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<Var> zs, zi, zt;
    Var det_sum = ad::constant(Mat::Zero(1, 1));
    for (std::size_t k = 0; k < b; ++k) {
      if (cursor == n) {
        order = rng.permutation(n);
        cursor = 0;
      }
      const SceneSample& scene = dataset.scenes[order[cursor++]];
      const std::string& caption = scene.captions[rng.index(scene.captions.size())];
      AugmentedScene aug = augment_scene(scene.cloud, scene.annotations, config.augment, rng);
      const PointCloud cloud = subsample_points(aug.cloud, config.num_points, rng);
      const SceneForward f = model.scene().forward(cloud);
      zs.push_back(f.embedding);
      if (config.use_det_loss) det_sum = ad::add(det_sum, detection_loss(f.proposals, aug.annotations));
      if (config.use_image_loss) zi.push_back(features.scene_image(scene.scene_id, scene.cloud));
      if (config.use_text_loss) {
        auto pre = features.precomputed_text(scene.scene_id);
        zt.push_back(pre ? *pre : features.text(caption).pooled);
      }
    }
    const Var z_scene = ad::concat_rows(zs);
    const Var z_image = config.use_image_loss ? ad::concat_rows(zi) : z_scene;
    const Var z_text = config.use_text_loss ? ad::concat_rows(zt) : z_scene;
    const Var det = ad::scale(det_sum, 1.0 / static_cast<double>(b));
    const Var log_tau = model.log_tau()->var();
    PretrainObjective obj = pretrain_objective(z_scene, z_image, z_text, det, config,
                                               config.learnable_tau ? &log_tau : nullptr);
    if (!std::isfinite(obj.breakdown.total)) {
      std::ostringstream msg;
      msg << "non-finite L_pre at iteration " << it << "; last finite breakdown: L_pre=" << last_finite.total
          << " L_det=" << last_finite.det << " L_text=" << last_finite.text << " L_image=" << last_finite.image;
      throw Error(ErrorKind::Numeric, msg.str());
    }
    last_finite = obj.breakdown;
    ad::backward(obj.total);
    opt.step();
    opt.zero_grad();

    PretrainLogRecord rec{it, obj.breakdown, std::exp(model.log_tau()->value()(0, 0))};
    if (!config.learnable_tau) rec.tau = config.tau;
    result.log.push_back(rec);
    if (hooks.on_log) hooks.on_log(rec);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
      hooks.on_checkpoint(it + 1, model.to_checkpoint());
    }
  }
  result.checkpoint = model.to_checkpoint();
  return result;
}

void write_pretrain_log(const std::vector<PretrainLogRecord>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  f << "iteration\tL_pre\tL_det\tL_text\tL_image\ttau\n" << std::setprecision(17);
  for (const auto& r : log) {
    f << r.iteration << '\t' << r.loss.total << '\t' << r.loss.det << '\t' << r.loss.text << '\t' << r.loss.image
      << '\t' << r.tau << '\n';
  }
}

// ------------------------------------------------------------ embeddings --

PointCloud evaluation_points(const PointCloud& cloud, int num_points) {
  if (cloud.size() <= num_points) return cloud;
  // Canonical (xyz, rgb) order first, so the subsample ignores input order.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(cloud.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto key = [&](Eigen::Index i) {
    return std::array<double, 6>{cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2),
                                 cloud.colors(i, 0), cloud.colors(i, 1), cloud.colors(i, 2)};
  };
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return key(a) < key(b); });
  PointCloud sorted;
  sorted.points.resize(cloud.size(), 3);
  sorted.colors.resize(cloud.size(), 3);
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted.points.row(static_cast<Eigen::Index>(k)) = cloud.points.row(order[k]);
    sorted.colors.row(static_cast<Eigen::Index>(k)) = cloud.colors.row(order[k]);
  }
  Rng rng(0x45564131);
  return subsample_points(sorted, num_points, rng);
}

EmbeddingTable export_embeddings(const Dataset& dataset, const SceneEncoder& scene, int num_points) {
  EmbeddingTable table;
  for (const auto& s : dataset.scenes) {
    table.push_back({s.scene_id, s.scene_type, scene.embed(evaluation_points(s.cloud, num_points))});
  }
  return table;
}

EmbeddingTable export_embeddings(const Dataset& dataset, const Checkpoint& checkpoint, const EncoderConfig& encoder,
                                 const SceneEncoderConfig& scene_config, int num_points) {
  const std::string expected = model_fingerprint(encoder, scene_config);
  if (checkpoint.fingerprint != expected) {
    throw Error(ErrorKind::Load, "checkpoint fingerprint " + checkpoint.fingerprint + " does not match config " + expected);
  }
  SceneEncoder scene(scene_config);
  scene.parameters().load(checkpoint.tensors, "scene.");
  return export_embeddings(dataset, scene, num_points);
}

void write_embedding_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  f << std::setprecision(17);
  for (const auto& r : table) {
    f << r.scene_id << '\t' << r.scene_type;
    for (Eigen::Index i = 0; i < r.z.size(); ++i) f << '\t' << r.z(i);
    f << '\n';
  }
}

EmbeddingTable read_embedding_table(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot open " + path.string());
  EmbeddingTable table;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    EmbeddingRow r;
    if (!std::getline(ss, r.scene_id, '\t') || !std::getline(ss, r.scene_type, '\t')) {
      throw Error(ErrorKind::Load, "malformed embedding row in " + path.string());
    }
    std::vector<double> v;
    std::string cell;
    while (std::getline(ss, cell, '\t')) v.push_back(std::stod(cell));
    if (v.empty() || (!table.empty() && static_cast<Eigen::Index>(v.size()) != table.front().z.size())) {
      throw Error(ErrorKind::Load, "inconsistent embedding width in " + path.string());
    }
    r.z = Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    table.push_back(std::move(r));
  }
  return table;
}

Eigen::MatrixX2d project_2d(const Mat& rows) {
  if (rows.rows() < 2) throw Error(ErrorKind::Projection, "projection needs at least 2 rows");
  const Mat centered = rows.rowwise() - rows.colwise().mean();
  const double scale = std::max(1.0, rows.cwiseAbs().maxCoeff());
  Eigen::JacobiSVD<Mat> svd(centered, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 1e-12 * scale) throw Error(ErrorKind::Projection, "rank-0 data cannot be projected");
  Mat dirs = Mat::Zero(rows.cols(), 2);
  for (int k = 0; k < 2 && k < svd.matrixV().cols(); ++k) {
    Vec v = svd.matrixV().col(k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    dirs.col(k) = v;
  }
  return centered * dirs;
}

Eigen::MatrixX2d project_2d(const EmbeddingTable& table) {
  if (table.empty()) throw Error(ErrorKind::Projection, "projection needs at least 2 rows");
  Mat m(static_cast<Eigen::Index>(table.size()), table.front().z.size());
  for (std::size_t i = 0; i < table.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = table[i].z.transpose();
  return project_2d(m);
}

TypeCohesion type_cohesion(const EmbeddingTable& table) {
  double intra = 0, inter = 0;
  long n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = i + 1; j < table.size(); ++j) {
      const double c = table[i].z.dot(table[j].z) / (table[i].z.norm() * table[j].z.norm());
      if (table[i].scene_type == table[j].scene_type) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  }
  return {n_intra ? intra / static_cast<double>(n_intra) : 0.0, n_inter ? inter / static_cast<double>(n_inter) : 0.0};
}

double scene_to_text_top1(const Dataset& dataset, const EmbeddingTable& table, FeatureProvider& features) {
  std::vector<std::pair<std::string, Vec>> captions;
  for (const auto& s : dataset.scenes) {
    for (const auto& c : s.captions) captions.emplace_back(s.scene_id, features.text(c).pooled.value().row(0).transpose());
  }
  if (table.empty() || captions.empty()) return 0.0;
  int hits = 0;
  for (const auto& row : table) {
    double best = -2.0;
    const std::string* best_id = nullptr;
    for (const auto& [id, t] : captions) {
      const double s = row.z.dot(t);
      if (s > best) {
        best = s;
        best_id = &id;
      }
    }
    if (best_id && *best_id == row.scene_id) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(table.size());
}

}  // namespace multiclip

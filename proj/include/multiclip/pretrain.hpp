#pragma once

// Pre-training objective L_pre = L_det + alpha L_text + beta L_image, the
// training loop, and embedding export / 2-D projection.

#include "multiclip/augment.hpp"
#include "multiclip/checkpoint.hpp"
#include "multiclip/contrastive.hpp"
#include "multiclip/dual_encoder.hpp"
#include "multiclip/scene_encoder.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace multiclip {

struct AlignmentBatch {
  Mat z_scene;  // B x d
  Mat z_image;  // B x d
  Mat z_text;   // B x d
  // Throws Input unless all three are B x d with B >= 1 and unit-norm rows.
  void validate() const;
};

struct PretrainConfig {
  double tau = kDefaultTemperature;
  bool learnable_tau = false;
  double alpha = 0.5;
  double beta = 0.5;
  int num_views = 5;
  bool use_text_loss = true;
  bool use_image_loss = true;
  bool use_cosine_variant = false;
  bool use_det_loss = true;
  int iterations = 15000;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double grad_clip_norm = 0.0;
  int num_points = 1024;  // per-scene subsample size during training
  int checkpoint_every = 0;
  AugmentConfig augment;

  void validate() const;  // throws Config
};

struct PretrainLoss {
  double total = 0.0;
  double det = 0.0;
  double text = 0.0;
  double image = 0.0;
};

// Value-only L_pre. Disabled terms are reported as 0.
PretrainLoss pretrain_loss(const AlignmentBatch& batch, double det_loss, const PretrainConfig& config);

struct PretrainObjective {
  Var total;
  PretrainLoss breakdown;
};

// Differentiable L_pre. log_tau (1x1) replaces config.tau when non-null.
PretrainObjective pretrain_objective(const Var& z_scene, const Var& z_image, const Var& z_text, const Var& det_loss,
                                     const PretrainConfig& config, const Var* log_tau = nullptr);

// Fingerprint of everything that fixes the shapes and meaning of the shared
// scene/text/image parameters.
std::string model_config_json(const EncoderConfig& encoder, const SceneEncoderConfig& scene);
std::string model_fingerprint(const EncoderConfig& encoder, const SceneEncoderConfig& scene);

// Word vocabulary over captions, questions and situation texts.
Vocabulary dataset_vocabulary(const Dataset& dataset);

// Scene encoder + CLIP-role pair + optional learnable temperature.
class PretrainModel {
 public:
  PretrainModel(Vocabulary vocab, const EncoderConfig& encoder, const SceneEncoderConfig& scene,
                double init_tau = kDefaultTemperature);

  DualEncoder& dual() { return dual_; }
  const DualEncoder& dual() const { return dual_; }
  SceneEncoder& scene() { return scene_; }
  const SceneEncoder& scene() const { return scene_; }
  nn::Parameter* log_tau() const { return log_tau_; }
  std::string fingerprint() const;

  Checkpoint to_checkpoint() const;
  // Throws Load on fingerprint or vocabulary mismatch.
  void load(const Checkpoint& checkpoint);

 private:
  DualEncoder dual_;
  SceneEncoder scene_;
  nn::ParameterStore extra_;
  nn::Parameter* log_tau_;
};

struct PretrainLogRecord {
  int iteration = 0;
  PretrainLoss loss;
  double tau = 0.0;
};

struct PretrainHooks {
  FeatureProvider::RenderObserver on_render;
  std::function<void(int iteration, const Checkpoint&)> on_checkpoint;
  std::function<void(const PretrainLogRecord&)> on_log;
  const std::map<std::string, PrecomputedEmbedding>* precomputed = nullptr;
  int jobs = 1;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<PretrainLogRecord> log;
};

// Deterministic given (dataset, configs, seed). Throws Numeric on a
// non-finite loss, naming the last finite breakdown.
PretrainResult run_pretraining(const Dataset& dataset, PretrainModel& model, const RenderConfig& render,
                               const PretrainConfig& config, std::uint64_t seed, const PretrainHooks& hooks = {});

void write_pretrain_log(const std::vector<PretrainLogRecord>& log, const std::filesystem::path& path);

// ------------------------------------------------------------ embeddings --

struct EmbeddingRow {
  std::string scene_id;
  std::string scene_type;
  Vec z;
};
using EmbeddingTable = std::vector<EmbeddingRow>;

// Fixed-seed subsample of the points in canonical order, used wherever a
// scene is embedded for evaluation: equal point sets give equal vectors
// regardless of scene id or point order.
PointCloud evaluation_points(const PointCloud& cloud, int num_points);

EmbeddingTable export_embeddings(const Dataset& dataset, const SceneEncoder& scene, int num_points);
// Builds the scene encoder from `scene_config` and loads the checkpoint;
// throws Load when its fingerprint differs from that of the configs.
EmbeddingTable export_embeddings(const Dataset& dataset, const Checkpoint& checkpoint, const EncoderConfig& encoder,
                                 const SceneEncoderConfig& scene_config, int num_points);

// Text columns: scene_id, scene_type, then d values.
void write_embedding_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embedding_table(const std::filesystem::path& path);

// Mean-centered projection onto the top two principal directions; each
// direction's largest-magnitude component is made positive. Throws
// Projection for fewer than 2 rows or rank-0 data.
Eigen::MatrixX2d project_2d(const Mat& rows);
Eigen::MatrixX2d project_2d(const EmbeddingTable& table);

struct TypeCohesion {
  double intra = 0.0;  // mean cosine over same-type pairs
  double inter = 0.0;  // mean cosine over different-type pairs
};
TypeCohesion type_cohesion(const EmbeddingTable& table);

// Fraction of scenes whose most similar caption (over all captions of all
// scenes) is one of their own.
double scene_to_text_top1(const Dataset& dataset, const EmbeddingTable& table, FeatureProvider& features);

}  // namespace multiclip

#pragma once

// Situated QA: situation-guided decoding over scene tokens, question
// decoding, answer and location heads, L_sqa, fine-tuning and evaluation.

#include "multiclip/vqa_model.hpp"

namespace multiclip {

struct SqaConfig {
  int hidden = 256;  // h
  int heads = 4;
  int ffn_hidden = 512;
  int situation_layers = 1;
  int question_layers = 1;
  int mlp_hidden = 256;
  bool sign_invariant_rotation = true;
  bool use_det_loss = true;
  int answer_min_count = 1;
  std::uint64_t init_seed = 13;
  // fine-tuning
  int epochs = 50;
  int max_steps = 0;
  int batch_size = 16;
  double learning_rate = 5e-4;
  double weight_decay = 1e-5;
  std::vector<int> lr_milestones{15};
  double lr_factor = 0.2;
  double grad_clip_norm = 0.0;
  int num_points = 1024;
  AugmentConfig augment;

  void validate() const;
};

struct SqaPrediction {
  Var answer_logits;  // 1 x N_a
  Var position;       // 1 x 3
  Var rotation;       // 1 x 4 (x, y, z, w), unit norm, w >= 0
};

struct SqaTargets {
  Mat answers;   // 1 x N_a multi-hot
  Vec3 position = Vec3::Zero();
  Quaternion rotation{0.0, 0.0, 0.0, 1.0};
};

struct SqaLoss {
  double total = 0.0;
  double det = 0.0;
  double ans = 0.0;
  double pos = 0.0;
  double rot = 0.0;
};

struct SqaObjective {
  Var total;
  SqaLoss breakdown;
};

// Normalizes a raw (x, y, z, w) quaternion and flips it so that w >= 0.
// Throws DegenerateRotation for a zero vector.
Var normalize_quaternion(const Var& raw);
Quaternion normalize_quaternion(const Quaternion& raw);

SqaObjective sqa_loss(const SqaPrediction& prediction, const SqaTargets& targets, bool sign_invariant_rotation = true,
                      const std::optional<Var>& det_loss = std::nullopt);

class SqaHead {
 public:
  SqaHead(nn::ParameterStore& store, const SqaConfig& config, int word_dim, int num_answers, Rng& rng);

  // N_s x h situation-guided object tokens.
  Var situation_decode(const Var& situation_words, const Var& scene_tokens) const;
  // 1 x h, mean over the decoded tokens.
  Var question_decode(const Var& situation_tokens, const Var& question_words) const;
  SqaPrediction heads(const Var& pooled) const;

 private:
  nn::Linear situation_proj_, scene_proj_, question_proj_;
  std::vector<nn::DecoderLayer> situation_layers_, question_layers_;
  nn::Linear answer1_, answer2_, loc1_, loc2_;
};

class SqaModel {
 public:
  SqaModel(Vocabulary vocab, AnswerVocabulary answers, const EncoderConfig& encoder, const SceneEncoderConfig& scene,
           const SqaConfig& config);

  PretrainModel& base() { return base_; }
  const PretrainModel& base() const { return base_; }
  const SqaHead& head() const { return head_; }
  const AnswerVocabulary& answers() const { return answers_; }
  const SqaConfig& config() const { return config_; }
  nn::ParameterStore& head_parameters() { return store_; }

  void load_pretrained(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& checkpoint);
  std::string config_json() const;
  std::string fingerprint() const;

 private:
  PretrainModel base_;
  AnswerVocabulary answers_;
  SqaConfig config_;
  nn::ParameterStore store_;
  Rng init_rng_;
  SqaHead head_;
};

AnswerVocabulary build_answer_vocab(const std::vector<SituationRecord>& records, int min_count);

struct SqaPredictionRecord {
  std::string question_id;
  std::string answer;
  Vec3 position = Vec3::Zero();
  Quaternion rotation{0.0, 0.0, 0.0, 1.0};
};

FinetuneResult finetune_sqa(const Dataset& train, SqaModel& model, std::uint64_t seed, int jobs = 1);
std::vector<SqaPredictionRecord> predict_sqa(const Dataset& data, const SqaModel& model, int jobs = 1);

EvalReport evaluate_sqa(const Dataset& data, const std::vector<SqaPredictionRecord>& predictions);

void write_sqa_predictions(const std::vector<SqaPredictionRecord>& predictions, const std::filesystem::path& path);
std::vector<SqaPredictionRecord> read_sqa_predictions(const std::filesystem::path& path);

}  // namespace multiclip

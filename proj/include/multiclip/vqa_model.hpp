#pragma once

// Question/scene fusion with a transformer encoder, answer / object-class /
// localization heads, L_vqa, fine-tuning and evaluation.

#include "multiclip/checkpoint.hpp"
#include "multiclip/metrics.hpp"
#include "multiclip/pretrain.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace multiclip {

class AnswerVocabulary {
 public:
  AnswerVocabulary() = default;
  explicit AnswerVocabulary(std::vector<std::string> answers);

  int size() const { return static_cast<int>(answers_.size()); }
  const std::string& answer(int index) const { return answers_.at(static_cast<std::size_t>(index)); }
  // Index of the normalized answer, or -1.
  int index(const std::string& answer) const;
  const std::vector<std::string>& answers() const { return answers_; }

  std::string to_json() const;
  static AnswerVocabulary from_json(const std::string& text);

 private:
  std::vector<std::string> answers_;
  std::map<std::string, int> index_;
};

// Normalized answers with count >= min_count, sorted by (-count, text).
// Throws Config when nothing survives.
AnswerVocabulary build_answer_vocab(const std::vector<std::vector<std::string>>& answer_sets, int min_count);
AnswerVocabulary build_answer_vocab(const std::vector<QARecord>& records, int min_count);

struct VqaConfig {
  int hidden = 256;  // h
  int layers = 2;
  int heads = 4;
  int ffn_hidden = 512;
  double iou_floor = 0.05;
  bool use_det_loss = true;
  int answer_min_count = 1;
  std::uint64_t init_seed = 11;
  // fine-tuning
  int epochs = 40;
  int max_steps = 0;  // 0: run all epochs
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

struct FusionOutput {
  Var scene_tokens_out;     // M x h
  Var question_tokens_out;  // N_q x h
  Var pooled_question;      // 1 x h
};

struct VqaPrediction {
  Var localization_logits;  // 1 x M
  Var answer_logits;        // 1 x N_a
  Var object_class_logits;  // 1 x num_classes
};

struct VqaTargets {
  Mat answers;                 // 1 x N_a multi-hot
  Mat object_classes;          // 1 x num_classes multi-hot
  std::optional<int> loc_index;
};

struct VqaLoss {
  double total = 0.0;
  double det = 0.0;
  double obj = 0.0;
  double ans = 0.0;
  double loc = 0.0;
};

struct VqaObjective {
  Var total;
  VqaLoss breakdown;
};

// Index of the proposal with the highest IoU against any referred box (lowest
// index on ties), or nothing when the best IoU is below iou_floor.
std::optional<int> localization_targets(const std::vector<AxisAlignedBox>& proposals,
                                        const std::vector<AxisAlignedBox>& referred, double iou_floor = 0.05);

// L_ans + L_obj + L_loc (+ det_loss when given). L_ans and L_obj are mean
// BCE; L_loc is softmax CE over proposals, 0 without a target.
VqaObjective vqa_loss(const VqaPrediction& prediction, const VqaTargets& targets,
                      const std::optional<Var>& det_loss = std::nullopt);

// Fusion transformer and heads over h-dimensional tokens.
class VqaHead {
 public:
  VqaHead(nn::ParameterStore& store, const VqaConfig& config, int word_dim, int num_answers, int num_classes, Rng& rng);

  FusionOutput fuse(const Var& question_words, int eot_index, const Var& scene_tokens) const;
  VqaPrediction predict(const FusionOutput& fusion) const;

 private:
  nn::Linear question_proj_, scene_proj_;
  std::vector<nn::EncoderLayer> layers_;
  nn::Linear loc_head_, answer_head_, class_head_;
};

class VqaModel {
 public:
  VqaModel(Vocabulary vocab, AnswerVocabulary answers, const EncoderConfig& encoder, const SceneEncoderConfig& scene,
           const VqaConfig& config);

  PretrainModel& base() { return base_; }
  const PretrainModel& base() const { return base_; }
  const VqaHead& head() const { return head_; }
  const AnswerVocabulary& answers() const { return answers_; }
  const VqaConfig& config() const { return config_; }
  nn::ParameterStore& head_parameters() { return store_; }

  // Copies scene/text/image weights from a pre-training checkpoint.
  void load_pretrained(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& checkpoint);
  std::string config_json() const;
  std::string fingerprint() const;

 private:
  PretrainModel base_;
  AnswerVocabulary answers_;
  VqaConfig config_;
  nn::ParameterStore store_;
  Rng init_rng_;
  VqaHead head_;
};

struct VqaPredictionRecord {
  std::string question_id;
  std::string answer;
  std::vector<std::string> top10;
  AxisAlignedBox box;
  int loc_index = 0;
};

struct TrainLogRecord {
  int step = 0;
  int epoch = 0;
  double learning_rate = 0.0;
  std::map<std::string, double> terms;  // "total" plus each loss term
};

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRecord> log;
};

FinetuneResult finetune_vqa(const Dataset& train, VqaModel& model, std::uint64_t seed, int jobs = 1);
std::vector<VqaPredictionRecord> predict_vqa(const Dataset& data, const VqaModel& model, int jobs = 1);

// EM@1 and language metrics over all questions; Acc@0.25/0.5 over questions
// that refer to at least one object (first referred instance as ground truth).
EvalReport evaluate_vqa(const Dataset& data, const std::vector<VqaPredictionRecord>& predictions);

void write_train_log(const std::vector<TrainLogRecord>& log, const std::filesystem::path& path);
void write_vqa_predictions(const std::vector<VqaPredictionRecord>& predictions, const std::filesystem::path& path);
std::vector<VqaPredictionRecord> read_vqa_predictions(const std::filesystem::path& path);

}  // namespace multiclip

#include "multiclip/sqa_model.hpp"

#include "finetune_common.hpp"
#include "multiclip/error.hpp"
#include "multiclip/losses.hpp"
#include "multiclip/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace multiclip {

using nlohmann::json;

void SqaConfig::validate() const {
  if (hidden < 1 || heads < 1 || hidden % heads != 0 || ffn_hidden < 1 || mlp_hidden < 1 || situation_layers < 0 ||
      question_layers < 0) {
    throw Error(ErrorKind::Config, "sqa: hidden must be a positive multiple of heads; layer counts >= 0");
  }
  if (epochs < 0 || max_steps < 0 || batch_size < 1 || num_points < 1 || answer_min_count < 1) {
    throw Error(ErrorKind::Config, "sqa: epochs, max_steps, batch_size, num_points, answer_min_count out of range");
  }
  if (!(learning_rate > 0.0) || weight_decay < 0.0 || !(lr_factor > 0.0)) {
    throw Error(ErrorKind::Config, "sqa: bad optimizer settings");
  }
}

AnswerVocabulary build_answer_vocab(const std::vector<SituationRecord>& records, int min_count) {
  std::vector<std::vector<std::string>> sets;
  for (const auto& r : records) sets.push_back(r.answers);
  return build_answer_vocab(sets, min_count);
}

Var normalize_quaternion(const Var& raw) {
  if (raw.rows() != 1 || raw.cols() != 4) throw Error(ErrorKind::Input, "quaternion must be 1 x 4");
  if (!(raw.value().norm() > 1e-12)) throw Error(ErrorKind::DegenerateRotation, "raw quaternion has zero norm");
  const Var q = ad::l2_normalize_rows(raw);
  return q.value()(0, 3) < 0.0 ? ad::scale(q, -1.0) : q;
}

Quaternion normalize_quaternion(const Quaternion& raw) {
  const Mat m = normalize_quaternion(ad::constant(Eigen::Map<const Eigen::RowVector4d>(raw.data()))).value();
  return {m(0, 0), m(0, 1), m(0, 2), m(0, 3)};
}

SqaObjective sqa_loss(const SqaPrediction& p, const SqaTargets& t, bool sign_invariant_rotation,
                      const std::optional<Var>& det_loss) {
  SqaObjective out;
  const Var ans = loss::bce_with_logits_mean(p.answer_logits, t.answers);
  const Var pos = loss::mse_mean(p.position, t.position.transpose());
  const Var rot = loss::quaternion_mse(p.rotation, Eigen::Map<const Eigen::RowVector4d>(t.rotation.data()),
                                       sign_invariant_rotation);
  Var total = det_loss ? ad::add(*det_loss, ans) : ans;
  total = ad::add(ad::add(total, pos), rot);
  out.breakdown.det = det_loss ? det_loss->scalar() : 0.0;
  out.breakdown.ans = ans.scalar();
  out.breakdown.pos = pos.scalar();
  out.breakdown.rot = rot.scalar();
  out.breakdown.total = total.scalar();
  out.total = total;
  return out;
}

SqaHead::SqaHead(nn::ParameterStore& store, const SqaConfig& config, int word_dim, int num_answers, Rng& rng)
    : situation_proj_(store, "sqa.situation_proj", word_dim, config.hidden, rng),
      scene_proj_(store, "sqa.scene_proj", kProposalFeatureDim, config.hidden, rng),
      question_proj_(store, "sqa.question_proj", word_dim, config.hidden, rng) {
  for (int l = 0; l < config.situation_layers; ++l) {
    situation_layers_.emplace_back(store, "sqa.situation.layer" + std::to_string(l), config.hidden, config.heads,
                                   config.ffn_hidden, rng);
  }
  for (int l = 0; l < config.question_layers; ++l) {
    question_layers_.emplace_back(store, "sqa.question.layer" + std::to_string(l), config.hidden, config.heads,
                                  config.ffn_hidden, rng);
  }
  answer1_ = nn::Linear(store, "sqa.answer1", config.hidden, config.mlp_hidden, rng);
  answer2_ = nn::Linear(store, "sqa.answer2", config.mlp_hidden, num_answers, rng);
  loc1_ = nn::Linear(store, "sqa.loc1", config.hidden, config.mlp_hidden, rng);
  loc2_ = nn::Linear(store, "sqa.loc2", config.mlp_hidden, 7, rng);
}

Var SqaHead::situation_decode(const Var& situation_words, const Var& scene_tokens) const {
  Var q = situation_proj_.forward(situation_words);
  const Var memory = scene_proj_.forward(scene_tokens);
  for (const auto& layer : situation_layers_) q = layer.forward(q, memory);
  return q;
}

Var SqaHead::question_decode(const Var& situation_tokens, const Var& question_words) const {
  Var q = situation_tokens;
  const Var memory = question_proj_.forward(question_words);
  for (const auto& layer : question_layers_) q = layer.forward(q, memory);
  return ad::mean_rows(q);
}

SqaPrediction SqaHead::heads(const Var& pooled) const {
  const Var loc = loc2_.forward(ad::relu(loc1_.forward(pooled)));
  return {answer2_.forward(ad::relu(answer1_.forward(pooled))), ad::slice_cols(loc, 0, 3),
          normalize_quaternion(ad::slice_cols(loc, 3, 4))};
}

SqaModel::SqaModel(Vocabulary vocab, AnswerVocabulary answers, const EncoderConfig& encoder,
                   const SceneEncoderConfig& scene, const SqaConfig& config)
    : base_(std::move(vocab), encoder, scene),
      answers_(std::move(answers)),
      config_(config),
      init_rng_(config.init_seed),
      head_(store_, config, encoder.word_dim, answers_.size(), init_rng_) {
  config.validate();
}

std::string SqaModel::config_json() const {
  json j = json::parse(model_config_json(base_.dual().config(), base_.scene().config()));
  j["sqa"] = {{"hidden", config_.hidden},
              {"heads", config_.heads},
              {"ffn_hidden", config_.ffn_hidden},
              {"situation_layers", config_.situation_layers},
              {"question_layers", config_.question_layers},
              {"mlp_hidden", config_.mlp_hidden},
              {"init_seed", config_.init_seed}};
  return j.dump();
}

std::string SqaModel::fingerprint() const { return multiclip::fingerprint(config_json()); }

void SqaModel::load_pretrained(const Checkpoint& ck) {
  if (ck.kind != "pretrain") throw Error(ErrorKind::Load, "expected a pre-training checkpoint, got '" + ck.kind + "'");
  base_.load(ck);
}

Checkpoint SqaModel::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "sqa";
  ck.config_json = config_json();
  ck.fingerprint = multiclip::fingerprint(ck.config_json);
  ck.metadata["vocabulary"] = base_.dual().vocab().to_json();
  ck.metadata["answers"] = answers_.to_json();
  for (const nn::ParameterStore* s : {&base_.scene().parameters(), &base_.dual().parameters(), &store_}) {
    auto snap = s->snapshot();
    ck.tensors.insert(ck.tensors.end(), snap.begin(), snap.end());
  }
  return ck;
}

void SqaModel::load(const Checkpoint& ck) {
  if (ck.kind != "sqa") throw Error(ErrorKind::Load, "expected an sqa checkpoint, got '" + ck.kind + "'");
  if (ck.fingerprint != fingerprint()) throw Error(ErrorKind::Load, "sqa checkpoint config mismatch");
  auto v = ck.metadata.find("vocabulary");
  auto a = ck.metadata.find("answers");
  if (v == ck.metadata.end() || Vocabulary::from_json(v->second).tokens() != base_.dual().vocab().tokens()) {
    throw Error(ErrorKind::Load, "sqa checkpoint vocabulary mismatch");
  }
  if (a == ck.metadata.end() || AnswerVocabulary::from_json(a->second).answers() != answers_.answers()) {
    throw Error(ErrorKind::Load, "sqa checkpoint answer vocabulary mismatch");
  }
  base_.scene().parameters().load(ck.tensors, "scene.");
  base_.dual().parameters().load(ck.tensors, "text.");
  base_.dual().parameters().load(ck.tensors, "image.");
  store_.load(ck.tensors, "sqa.");
}

FinetuneResult finetune_sqa(const Dataset& train, SqaModel& model, std::uint64_t seed, int jobs) {
  const SqaConfig& cfg = model.config();
  cfg.validate();
  if (train.sqa.empty()) throw Error(ErrorKind::Input, "sqa fine-tuning needs at least one situation");
  PretrainModel& base = model.base();
  FeatureProvider features(base.dual(), RenderConfig{}, 1);
  {
    std::vector<std::string> texts;
    for (const auto& q : train.sqa) {
      texts.push_back(q.situation_text);
      texts.push_back(q.question);
    }
    features.prefetch(texts, {}, jobs);
  }
  std::vector<std::size_t> scene_of(train.sqa.size());
  for (std::size_t i = 0; i < train.sqa.size(); ++i) scene_of[i] = train.scene_index(train.sqa[i].scene_id);

  std::vector<nn::Parameter*> params = base.scene().parameters().trainable();
  for (auto* p : base.dual().parameters().trainable()) params.push_back(p);
  for (auto* p : model.head_parameters().trainable()) params.push_back(p);
  nn::AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.weight_decay = cfg.weight_decay;
  adam.grad_clip_norm = cfg.grad_clip_norm;
  nn::Adam opt(params, adam);

  Rng rng(Rng::derive(seed, 0x53514131));
  const std::size_t n = train.sqa.size();
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  FinetuneResult result;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
    const auto perm = rng.permutation(n);
    const double lr = nn::step_schedule(cfg.learning_rate, epoch, cfg.lr_milestones, cfg.lr_factor);
    opt.set_learning_rate(lr);
    for (std::size_t start = 0; start < n; start += b) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      const std::vector<std::size_t> batch(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                           perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
      const auto groups = detail::group_by_scene(batch, scene_of);
      Var q_sum = ad::constant(Mat::Zero(1, 1));
      Var det_sum = ad::constant(Mat::Zero(1, 1));
      SqaLoss sums;
      for (const auto& g : groups) {
        const SceneSample& scene = train.scenes[g.scene];
        AugmentedScene aug = augment_scene(scene.cloud, scene.annotations, cfg.augment, rng);
        const PointCloud cloud = subsample_points(aug.cloud, cfg.num_points, rng);
        const ProposalOutputs props = base.scene().propose(cloud);
        const SceneTokensVar tokens = base.scene().refine(props.features);
        if (cfg.use_det_loss) {
          DetectionLossResult parts;
          det_sum = ad::add(det_sum, detection_loss(props, aug.annotations, {}, &parts));
          sums.det += parts.total;
        }
        const Eigen::Quaterniond q_aug(aug.rotation);
        for (std::size_t r : g.records) {
          const SituationRecord& rec = train.sqa[r];
          const Var sit = model.head().situation_decode(features.text(rec.situation_text).words, tokens.object_tokens);
          const Var pooled = model.head().question_decode(sit, features.text(rec.question).words);
          SqaTargets t;
          t.answers = detail::multi_hot(rec.answers, model.answers());
          t.position = aug.rotation * rec.position + aug.translation;
          const Eigen::Quaterniond q = q_aug * Eigen::Quaterniond(rec.rotation[3], rec.rotation[0], rec.rotation[1],
                                                                  rec.rotation[2]);
          t.rotation = normalize_quaternion(Quaternion{q.x(), q.y(), q.z(), q.w()});
          const SqaObjective o = sqa_loss(model.head().heads(pooled), t, cfg.sign_invariant_rotation);
          q_sum = ad::add(q_sum, o.total);
          sums.ans += o.breakdown.ans;
          sums.pos += o.breakdown.pos;
          sums.rot += o.breakdown.rot;
        }
      }
      const double nq = static_cast<double>(batch.size());
      const double ns = static_cast<double>(groups.size());
      const Var total = ad::add(ad::scale(det_sum, 1.0 / ns), ad::scale(q_sum, 1.0 / nq));
      if (!std::isfinite(total.scalar())) {
        throw Error(ErrorKind::Numeric, "non-finite L_sqa at step " + std::to_string(step));
      }
      ad::backward(total);
      opt.step();
      opt.zero_grad();
      TrainLogRecord log;
      log.step = step;
      log.epoch = epoch;
      log.learning_rate = lr;
      log.terms = {{"total", total.scalar()},
                   {"L_det", sums.det / ns},
                   {"L_ans", sums.ans / nq},
                   {"L_pos", sums.pos / nq},
                   {"L_rot", sums.rot / nq}};
      result.log.push_back(std::move(log));
      ++step;
    }
  }
  result.checkpoint = model.to_checkpoint();
  return result;
}

std::vector<SqaPredictionRecord> predict_sqa(const Dataset& data, const SqaModel& model, int jobs) {
  const PretrainModel& base = model.base();
  std::vector<std::vector<std::size_t>> by_scene(data.scenes.size());
  for (std::size_t i = 0; i < data.sqa.size(); ++i) by_scene[data.scene_index(data.sqa[i].scene_id)].push_back(i);
  std::vector<SqaPredictionRecord> out(data.sqa.size());
  auto words = [&](const std::string& text) {
    return base.dual().text().forward(tokenize(text, base.dual().vocab(), base.dual().config().max_len)).words;
  };
  detail::parallel_for(data.scenes.size(), jobs, [&](std::size_t s) {
    if (by_scene[s].empty()) return;
    const PointCloud cloud = evaluation_points(data.scenes[s].cloud, model.config().num_points);
    const SceneTokensVar tokens = base.scene().refine(base.scene().propose(cloud).features);
    for (std::size_t r : by_scene[s]) {
      const SituationRecord& rec = data.sqa[r];
      const Var sit = model.head().situation_decode(words(rec.situation_text), tokens.object_tokens);
      const SqaPrediction p = model.head().heads(model.head().question_decode(sit, words(rec.question)));
      Eigen::Index best = 0;
      p.answer_logits.value().row(0).maxCoeff(&best);
      SqaPredictionRecord o;
      o.question_id = rec.question_id;
      o.answer = model.answers().answer(static_cast<int>(best));
      o.position = p.position.value().row(0).transpose();
      for (int k = 0; k < 4; ++k) o.rotation[static_cast<std::size_t>(k)] = p.rotation.value()(0, k);
      out[r] = std::move(o);
    }
  });
  return out;
}

EvalReport evaluate_sqa(const Dataset& data, const std::vector<SqaPredictionRecord>& predictions) {
  std::map<std::string, const SqaPredictionRecord*> by_id;
  for (const auto& p : predictions) by_id[p.question_id] = &p;
  std::vector<std::string> predicted;
  std::vector<std::vector<std::string>> truth;
  for (const auto& q : data.sqa) {
    auto it = by_id.find(q.question_id);
    if (it == by_id.end()) throw Error(ErrorKind::Input, "no prediction for question " + q.question_id);
    predicted.push_back(it->second->answer);
    truth.push_back(q.answers);
  }
  EvalReport r = evaluate_answers(predicted, truth);
  r.has_language = false;
  return r;
}

void write_sqa_predictions(const std::vector<SqaPredictionRecord>& predictions, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& p : predictions) {
    arr.push_back({{"question_id", p.question_id},
                   {"answer", p.answer},
                   {"position", {p.position.x(), p.position.y(), p.position.z()}},
                   {"rotation", p.rotation}});
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  f << arr.dump(2) << '\n';
}

std::vector<SqaPredictionRecord> read_sqa_predictions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot open " + path.string());
  try {
    const json arr = json::parse(f);
    std::vector<SqaPredictionRecord> out;
    for (const auto& j : arr) {
      SqaPredictionRecord p;
      p.question_id = j.at("question_id").get<std::string>();
      p.answer = j.at("answer").get<std::string>();
      const auto pos = j.at("position").get<std::vector<double>>();
      if (pos.size() != 3) throw Error(ErrorKind::Load, "position must have 3 entries");
      p.position = Vec3(pos[0], pos[1], pos[2]);
      p.rotation = j.at("rotation").get<Quaternion>();
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, path.string() + ": " + e.what());
  }
}

}  // namespace multiclip

#include "multiclip/vqa_model.hpp"

#include "finetune_common.hpp"
#include "multiclip/error.hpp"
#include "multiclip/losses.hpp"
#include "multiclip/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

namespace multiclip {

using nlohmann::json;

// ------------------------------------------------------ answer vocabulary --

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> answers) : answers_(std::move(answers)) {
  for (std::size_t i = 0; i < answers_.size(); ++i) {
    if (!index_.emplace(answers_[i], static_cast<int>(i)).second) {
      throw Error(ErrorKind::Config, "duplicate answer '" + answers_[i] + "'");
    }
  }
}

int AnswerVocabulary::index(const std::string& answer) const {
  auto it = index_.find(normalize_answer(answer));
  return it == index_.end() ? -1 : it->second;
}

std::string AnswerVocabulary::to_json() const { return json{{"answers", answers_}}.dump(); }

AnswerVocabulary AnswerVocabulary::from_json(const std::string& text) {
  try {
    return AnswerVocabulary(json::parse(text).at("answers").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, std::string("answer vocabulary: ") + e.what());
  }
}

AnswerVocabulary build_answer_vocab(const std::vector<std::vector<std::string>>& answer_sets, int min_count) {
  if (answer_sets.empty()) throw Error(ErrorKind::Config, "answer vocabulary needs at least one record");
  std::map<std::string, int> counts;
  for (const auto& set : answer_sets) {
    std::set<std::string> seen;
    for (const auto& a : set) {
      const std::string n = normalize_answer(a);
      if (!n.empty() && seen.insert(n).second) ++counts[n];
    }
  }
  std::vector<std::pair<int, std::string>> kept;
  for (const auto& [a, c] : counts) {
    if (c >= min_count) kept.emplace_back(-c, a);
  }
  if (kept.empty()) throw Error(ErrorKind::Config, "answer vocabulary is empty after min_count filtering");
  std::sort(kept.begin(), kept.end());
  std::vector<std::string> answers;
  for (auto& k : kept) answers.push_back(std::move(k.second));
  return AnswerVocabulary(std::move(answers));
}

AnswerVocabulary build_answer_vocab(const std::vector<QARecord>& records, int min_count) {
  std::vector<std::vector<std::string>> sets;
  for (const auto& r : records) sets.push_back(r.answers);
  return build_answer_vocab(sets, min_count);
}

// ----------------------------------------------------------------- config --

void VqaConfig::validate() const {
  if (hidden < 1 || layers < 0 || heads < 1 || hidden % heads != 0 || ffn_hidden < 1) {
    throw Error(ErrorKind::Config, "vqa: hidden must be a positive multiple of heads");
  }
  if (epochs < 0 || max_steps < 0 || batch_size < 1 || num_points < 1 || answer_min_count < 1) {
    throw Error(ErrorKind::Config, "vqa: epochs, max_steps, batch_size, num_points, answer_min_count out of range");
  }
  if (!(learning_rate > 0.0) || weight_decay < 0.0 || !(lr_factor > 0.0) || iou_floor < 0.0) {
    throw Error(ErrorKind::Config, "vqa: bad optimizer or IoU settings");
  }
}

// ------------------------------------------------------------- losses --

std::optional<int> localization_targets(const std::vector<AxisAlignedBox>& proposals,
                                        const std::vector<AxisAlignedBox>& referred, double iou_floor) {
  int best_index = -1;
  double best = -1.0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (const auto& r : referred) {
      const double iou = box_iou(proposals[i], r);
      if (iou > best) {
        best = iou;
        best_index = static_cast<int>(i);
      }
    }
  }
  if (best_index < 0 || best < iou_floor) return std::nullopt;
  return best_index;
}

VqaObjective vqa_loss(const VqaPrediction& p, const VqaTargets& t, const std::optional<Var>& det_loss) {
  VqaObjective out;
  const Var obj = loss::bce_with_logits_mean(p.object_class_logits, t.object_classes);
  const Var ans = loss::bce_with_logits_mean(p.answer_logits, t.answers);
  Var total = det_loss ? ad::add(*det_loss, obj) : obj;
  total = ad::add(total, ans);
  out.breakdown.det = det_loss ? det_loss->scalar() : 0.0;
  out.breakdown.obj = obj.scalar();
  out.breakdown.ans = ans.scalar();
  if (t.loc_index) {
    const Var loc = loss::softmax_cross_entropy(p.localization_logits, *t.loc_index);
    out.breakdown.loc = loc.scalar();
    total = ad::add(total, loc);
  }
  out.total = total;
  out.breakdown.total = total.scalar();
  return out;
}

// ------------------------------------------------------------------ head --

VqaHead::VqaHead(nn::ParameterStore& store, const VqaConfig& config, int word_dim, int num_answers, int num_classes,
                 Rng& rng)
    : question_proj_(store, "vqa.question_proj", word_dim, config.hidden, rng),
      scene_proj_(store, "vqa.scene_proj", kProposalFeatureDim, config.hidden, rng) {
  for (int l = 0; l < config.layers; ++l) {
    layers_.emplace_back(store, "vqa.fusion.layer" + std::to_string(l), config.hidden, config.heads,
                         config.ffn_hidden, rng);
  }
  loc_head_ = nn::Linear(store, "vqa.loc_head", config.hidden, 1, rng);
  answer_head_ = nn::Linear(store, "vqa.answer_head", config.hidden, num_answers, rng);
  class_head_ = nn::Linear(store, "vqa.class_head", config.hidden, num_classes, rng);
}

FusionOutput VqaHead::fuse(const Var& question_words, int eot_index, const Var& scene_tokens) const {
  if (eot_index < 0 || eot_index >= question_words.rows()) throw Error(ErrorKind::Input, "fuse: eot index out of range");
  const Eigen::Index m = scene_tokens.rows();
  const std::array<Var, 2> parts{scene_proj_.forward(scene_tokens), question_proj_.forward(question_words)};
  Var h = ad::concat_rows(parts);
  for (const auto& layer : layers_) h = layer.forward(h);
  FusionOutput out;
  out.scene_tokens_out = ad::slice_rows(h, 0, m);
  out.question_tokens_out = ad::slice_rows(h, m, question_words.rows());
  out.pooled_question = ad::slice_rows(out.question_tokens_out, eot_index, 1);
  return out;
}

VqaPrediction VqaHead::predict(const FusionOutput& f) const {
  return {ad::transpose(loc_head_.forward(f.scene_tokens_out)), answer_head_.forward(f.pooled_question),
          class_head_.forward(f.pooled_question)};
}

// ----------------------------------------------------------------- model --

VqaModel::VqaModel(Vocabulary vocab, AnswerVocabulary answers, const EncoderConfig& encoder,
                   const SceneEncoderConfig& scene, const VqaConfig& config)
    : base_(std::move(vocab), encoder, scene),
      answers_(std::move(answers)),
      config_(config),
      init_rng_(config.init_seed),
      head_(store_, config, encoder.word_dim, answers_.size(), scene.num_classes, init_rng_) {
  config.validate();
  if (answers_.size() < 1) throw Error(ErrorKind::Config, "vqa: empty answer vocabulary");
}

std::string VqaModel::config_json() const {
  json j = json::parse(model_config_json(base_.dual().config(), base_.scene().config()));
  j["vqa"] = {{"hidden", config_.hidden}, {"layers", config_.layers}, {"heads", config_.heads},
              {"ffn_hidden", config_.ffn_hidden}, {"init_seed", config_.init_seed}};
  return j.dump();
}

std::string VqaModel::fingerprint() const { return multiclip::fingerprint(config_json()); }

void VqaModel::load_pretrained(const Checkpoint& ck) {
  if (ck.kind != "pretrain") throw Error(ErrorKind::Load, "expected a pre-training checkpoint, got '" + ck.kind + "'");
  base_.load(ck);
}

Checkpoint VqaModel::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "vqa";
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

void VqaModel::load(const Checkpoint& ck) {
  if (ck.kind != "vqa") throw Error(ErrorKind::Load, "expected a vqa checkpoint, got '" + ck.kind + "'");
  if (ck.fingerprint != fingerprint()) throw Error(ErrorKind::Load, "vqa checkpoint config mismatch");
  auto v = ck.metadata.find("vocabulary");
  auto a = ck.metadata.find("answers");
  if (v == ck.metadata.end() || Vocabulary::from_json(v->second).tokens() != base_.dual().vocab().tokens()) {
    throw Error(ErrorKind::Load, "vqa checkpoint vocabulary mismatch");
  }
  if (a == ck.metadata.end() || AnswerVocabulary::from_json(a->second).answers() != answers_.answers()) {
    throw Error(ErrorKind::Load, "vqa checkpoint answer vocabulary mismatch");
  }
  base_.scene().parameters().load(ck.tensors, "scene.");
  base_.dual().parameters().load(ck.tensors, "text.");
  base_.dual().parameters().load(ck.tensors, "image.");
  store_.load(ck.tensors, "vqa.");
}

// -------------------------------------------------------------- training --

FinetuneResult finetune_vqa(const Dataset& train, VqaModel& model, std::uint64_t seed, int jobs) {
  const VqaConfig& cfg = model.config();
  cfg.validate();
  if (train.qa.empty()) throw Error(ErrorKind::Input, "vqa fine-tuning needs at least one question");
  PretrainModel& base = model.base();
  FeatureProvider features(base.dual(), RenderConfig{}, 1);
  {
    std::vector<std::string> texts;
    for (const auto& q : train.qa) texts.push_back(q.question);
    features.prefetch(texts, {}, jobs);
  }
  std::vector<std::size_t> scene_of(train.qa.size());
  for (std::size_t i = 0; i < train.qa.size(); ++i) scene_of[i] = train.scene_index(train.qa[i].scene_id);

  std::vector<nn::Parameter*> params = base.scene().parameters().trainable();
  for (auto* p : base.dual().parameters().trainable()) params.push_back(p);
  for (auto* p : model.head_parameters().trainable()) params.push_back(p);
  nn::AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.weight_decay = cfg.weight_decay;
  adam.grad_clip_norm = cfg.grad_clip_norm;
  nn::Adam opt(params, adam);

  Rng rng(Rng::derive(seed, 0x56514131));
  const std::size_t n = train.qa.size();
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
      VqaLoss sums;
      for (const auto& g : groups) {
        const SceneSample& scene = train.scenes[g.scene];
        AugmentedScene aug = augment_scene(scene.cloud, scene.annotations, cfg.augment, rng);
        const PointCloud cloud = subsample_points(aug.cloud, cfg.num_points, rng);
        const ProposalOutputs props = base.scene().propose(cloud);
        const SceneTokensVar tokens = base.scene().refine(props.features);
        const auto boxes = detail::proposal_boxes(props);
        if (cfg.use_det_loss) {
          DetectionLossResult parts;
          det_sum = ad::add(det_sum, detection_loss(props, aug.annotations, {}, &parts));
          sums.det += parts.total;
        }
        for (std::size_t r : g.records) {
          const QARecord& q = train.qa[r];
          const TextForward text = features.text(q.question);
          const FusionOutput f = model.head().fuse(text.words, static_cast<int>(text.words.rows()) - 1,
                                                   tokens.object_tokens);
          VqaTargets t;
          t.answers = detail::multi_hot(q.answers, model.answers());
          t.object_classes = Mat::Zero(1, base.scene().config().num_classes);
          for (int c : q.referred_class_ids) {
            if (c >= 0 && c < t.object_classes.cols()) t.object_classes(0, c) = 1.0;
          }
          std::vector<AxisAlignedBox> referred;
          for (int id : q.referred_instance_ids) {
            for (const auto& a : aug.annotations) {
              if (a.instance_id == id) referred.push_back(a.box);
            }
          }
          if (!referred.empty()) t.loc_index = localization_targets(boxes, referred, cfg.iou_floor);
          const VqaObjective o = vqa_loss(model.head().predict(f), t);
          q_sum = ad::add(q_sum, o.total);
          sums.obj += o.breakdown.obj;
          sums.ans += o.breakdown.ans;
          sums.loc += o.breakdown.loc;
        }
      }
      const double nq = static_cast<double>(batch.size());
      const double ns = static_cast<double>(groups.size());
      const Var total = ad::add(ad::scale(det_sum, 1.0 / ns), ad::scale(q_sum, 1.0 / nq));
      if (!std::isfinite(total.scalar())) {
        throw Error(ErrorKind::Numeric, "non-finite L_vqa at step " + std::to_string(step));
      }
      ad::backward(total);
      opt.step();
      opt.zero_grad();
      TrainLogRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.learning_rate = lr;
      rec.terms = {{"total", total.scalar()},
                   {"L_det", sums.det / ns},
                   {"L_obj", sums.obj / nq},
                   {"L_ans", sums.ans / nq},
                   {"L_loc", sums.loc / nq}};
      result.log.push_back(std::move(rec));
      ++step;
    }
  }
  result.checkpoint = model.to_checkpoint();
  return result;
}

std::vector<VqaPredictionRecord> predict_vqa(const Dataset& data, const VqaModel& model, int jobs) {
  const PretrainModel& base = model.base();
  std::vector<std::vector<std::size_t>> by_scene(data.scenes.size());
  for (std::size_t i = 0; i < data.qa.size(); ++i) by_scene[data.scene_index(data.qa[i].scene_id)].push_back(i);
  std::vector<VqaPredictionRecord> out(data.qa.size());
  detail::parallel_for(data.scenes.size(), jobs, [&](std::size_t s) {
    if (by_scene[s].empty()) return;
    const PointCloud cloud = evaluation_points(data.scenes[s].cloud, model.config().num_points);
    const ProposalOutputs props = base.scene().propose(cloud);
    const SceneTokensVar tokens = base.scene().refine(props.features);
    const auto boxes = detail::proposal_boxes(props);
    for (std::size_t r : by_scene[s]) {
      const QARecord& q = data.qa[r];
      const TokenSequence seq = tokenize(q.question, base.dual().vocab(), base.dual().config().max_len);
      const TextForward text = base.dual().text().forward(seq);
      const VqaPrediction p = model.head().predict(model.head().fuse(text.words, seq.eot_index, tokens.object_tokens));
      const Mat& logits = p.answer_logits.value();
      std::vector<int> order(static_cast<std::size_t>(logits.cols()));
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b2) { return logits(0, a) > logits(0, b2); });
      VqaPredictionRecord rec;
      rec.question_id = q.question_id;
      rec.answer = model.answers().answer(order[0]);
      for (std::size_t k = 0; k < std::min<std::size_t>(10, order.size()); ++k) {
        rec.top10.push_back(model.answers().answer(order[k]));
      }
      Eigen::Index loc = 0;
      p.localization_logits.value().row(0).maxCoeff(&loc);
      rec.loc_index = static_cast<int>(loc);
      rec.box = boxes[static_cast<std::size_t>(loc)];
      out[r] = std::move(rec);
    }
  });
  return out;
}

EvalReport evaluate_vqa(const Dataset& data, const std::vector<VqaPredictionRecord>& predictions) {
  std::map<std::string, const VqaPredictionRecord*> by_id;
  for (const auto& p : predictions) by_id[p.question_id] = &p;
  std::vector<std::string> predicted;
  std::vector<std::vector<std::string>> truth;
  std::vector<AxisAlignedBox> pred_boxes, gt_boxes;
  for (const auto& q : data.qa) {
    auto it = by_id.find(q.question_id);
    if (it == by_id.end()) throw Error(ErrorKind::Input, "no prediction for question " + q.question_id);
    predicted.push_back(it->second->answer);
    truth.push_back(q.answers);
    if (!q.referred_instance_ids.empty()) {
      const SceneSample* scene = data.find_scene(q.scene_id);
      const ObjectAnnotation* a = scene ? scene->find_instance(q.referred_instance_ids.front()) : nullptr;
      if (a) {
        pred_boxes.push_back(it->second->box);
        gt_boxes.push_back(a->box);
      }
    }
  }
  EvalReport r = evaluate_answers(predicted, truth);
  r.has_localization = true;
  r.num_localized = static_cast<int>(gt_boxes.size());
  r.acc_at_025 = acc_at_iou(pred_boxes, gt_boxes, 0.25);
  r.acc_at_05 = acc_at_iou(pred_boxes, gt_boxes, 0.5);
  return r;
}

// -------------------------------------------------------------------- I/O --

void write_train_log(const std::vector<TrainLogRecord>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  f << std::setprecision(17);
  bool header = false;
  for (const auto& r : log) {
    if (!header) {
      f << "step\tepoch\tlr";
      for (const auto& kv : r.terms) f << '\t' << kv.first;
      f << '\n';
      header = true;
    }
    f << r.step << '\t' << r.epoch << '\t' << r.learning_rate;
    for (const auto& kv : r.terms) f << '\t' << kv.second;
    f << '\n';
  }
}

namespace {
json box_json(const AxisAlignedBox& b) {
  return {{"center", {b.center.x(), b.center.y(), b.center.z()}}, {"size", {b.size.x(), b.size.y(), b.size.z()}}};
}
AxisAlignedBox box_from(const json& j) {
  AxisAlignedBox b;
  for (int k = 0; k < 3; ++k) {
    b.center[k] = j.at("center").at(static_cast<std::size_t>(k)).get<double>();
    b.size[k] = j.at("size").at(static_cast<std::size_t>(k)).get<double>();
  }
  return b;
}
}  // namespace

void write_vqa_predictions(const std::vector<VqaPredictionRecord>& predictions, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& p : predictions) {
    arr.push_back({{"question_id", p.question_id},
                   {"answer", p.answer},
                   {"top10", p.top10},
                   {"box", box_json(p.box)},
                   {"loc_index", p.loc_index}});
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  f << arr.dump(2) << '\n';
}

std::vector<VqaPredictionRecord> read_vqa_predictions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Load, "cannot open " + path.string());
  try {
    const json arr = json::parse(f);
    std::vector<VqaPredictionRecord> out;
    for (const auto& j : arr) {
      VqaPredictionRecord p;
      p.question_id = j.at("question_id").get<std::string>();
      p.answer = j.at("answer").get<std::string>();
      p.top10 = j.at("top10").get<std::vector<std::string>>();
      p.box = box_from(j.at("box"));
      p.loc_index = j.at("loc_index").get<int>();
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, path.string() + ": " + e.what());
  }
}

}  // namespace multiclip

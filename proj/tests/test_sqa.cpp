#include "multiclip/error.hpp"
#include "multiclip/sqa_model.hpp"
#include "multiclip/synthetic.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

using namespace multiclip;

namespace {

SqaConfig small_sqa() {
  SqaConfig c;
  c.hidden = 32;
  c.ffn_hidden = 64;
  c.mlp_hidden = 32;
  c.num_points = 256;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.augment.cuboid_min_points = 256;
  return c;
}

SceneEncoderConfig small_scene() {
  SceneEncoderConfig c;
  c.num_proposals = 16;
  return c;
}

const Dataset& data() {
  static const Dataset d = generate_dataset(8, 4, Split::Train, GeneratorConfig{});
  return d;
}

Mat permute_rows(const Mat& m, const std::vector<std::size_t>& perm) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

SqaPrediction prediction(const Mat& pos, const Mat& rot) {
  return {ad::constant(Mat::Zero(1, 2)), ad::constant(pos), ad::constant(rot)};
}

}  // namespace

TEST_CASE("quaternions are normalized with non-negative w") {
  const Quaternion q = normalize_quaternion(Quaternion{0, 0, 0, -2});
  CHECK(q[0] == 0.0);
  CHECK(q[3] == doctest::Approx(1.0));
  const Quaternion r = normalize_quaternion(Quaternion{3, 0, 0, -4});
  CHECK(r[0] == doctest::Approx(-0.6));
  CHECK(r[3] == doctest::Approx(0.8));
  try {
    normalize_quaternion(Quaternion{0, 0, 0, 0});
    FAIL("expected a degenerate rotation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateRotation);
  }
}

TEST_CASE("position and rotation losses") {
  SqaTargets t{Mat::Zero(1, 2), Vec3(1, 2, 3), Quaternion{0.6, 0, 0, 0.8}};
  Mat pos(1, 3);
  pos << 2, 2, 3;
  Mat rot(1, 4);
  rot << -0.6, 0, 0, -0.8;
  const SqaObjective o = sqa_loss(prediction(pos, rot), t);
  CHECK(o.breakdown.pos == doctest::Approx(1.0 / 3.0));
  CHECK(o.breakdown.rot == doctest::Approx(0.0));
  CHECK(o.breakdown.ans == doctest::Approx(std::log(2.0)));
  CHECK(o.breakdown.total == doctest::Approx(o.breakdown.ans + o.breakdown.pos + o.breakdown.rot));
  CHECK(sqa_loss(prediction(pos, rot), t, false).breakdown.rot == doctest::Approx((1.2 * 1.2 + 1.6 * 1.6) / 4.0));
}

TEST_CASE("SQA loss terms pass gradient checks") {
  Rng rng(2);
  SqaTargets t{Mat::Zero(1, 2), Vec3(0.5, -1, 0.2), normalize_quaternion(Quaternion{0.1, 0.7, -0.2, 0.5})};
  const Mat pos = testing::random_mat(1, 3, rng);
  const Mat raw = testing::random_mat(1, 4, rng);
  const Var c_rot = ad::constant(raw.rowwise().normalized());
  const Var c_pos = ad::constant(pos);
  const Var c_ans = ad::constant(Mat::Zero(1, 2));
  CHECK(testing::grad_check([&](const Var& x) { return sqa_loss({c_ans, x, c_rot}, t).total; }, pos) <
        testing::kGradTol);
  CHECK(testing::grad_check([&](const Var& x) { return sqa_loss({c_ans, c_pos, normalize_quaternion(x)}, t).total; },
                            raw) < testing::kGradTol);
}

TEST_CASE("zero residual branches pool the situation tokens") {
  nn::ParameterStore store;
  Rng rng(3);
  const SqaHead head(store, small_sqa(), 512, 4, rng);
  for (const auto& p : store.all()) {
    const std::string& n = p->name;
    if (n.rfind("sqa.question.layer", 0) == 0 &&
        (n.find(".out.") != std::string::npos || n.find(".fc2.") != std::string::npos)) {
      p->value().setZero();
    }
  }
  const Mat tokens = testing::random_mat(5, 32, rng);
  const Var pooled = head.question_decode(ad::constant(tokens), ad::constant(testing::random_mat(7, 512, rng)));
  CHECK((pooled.value() - tokens.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("SQA decoding is invariant to token order") {
  nn::ParameterStore store;
  Rng rng(4);
  const SqaHead head(store, small_sqa(), 512, 4, rng);
  const Var situation = ad::constant(testing::random_mat(6, 512, rng));
  const Var question = ad::constant(testing::random_mat(5, 512, rng));
  const Mat scene = testing::random_mat(16, 128, rng);
  const auto perm = rng.permutation(16);
  const Var s1 = head.situation_decode(situation, ad::constant(scene));
  const Var s2 = head.situation_decode(situation, ad::constant(permute_rows(scene, perm)));
  CHECK((s1.value() - s2.value()).cwiseAbs().maxCoeff() < 1e-9);
  const auto sperm = rng.permutation(6);
  const Var p1 = head.question_decode(s1, question);
  const Var p2 = head.question_decode(ad::constant(permute_rows(s1.value(), sperm)), question);
  CHECK((p1.value() - p2.value()).cwiseAbs().maxCoeff() < 1e-9);
  const SqaPrediction a = head.heads(p1), b = head.heads(p2);
  CHECK((a.answer_logits.value() - b.answer_logits.value()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(a.rotation.value().norm() == doctest::Approx(1.0));
  CHECK(a.rotation.value()(0, 3) >= 0.0);
}

TEST_CASE("SQA fine-tuning lowers the loss and checkpoints round-trip") {
  const Vocabulary vocab = dataset_vocabulary(data());
  const AnswerVocabulary answers = build_answer_vocab(data().sqa, 1);
  SqaConfig cfg = small_sqa();
  cfg.max_steps = 100;
  cfg.epochs = 1000;
  SqaModel model(vocab, answers, EncoderConfig{}, small_scene(), cfg);
  const FinetuneResult r = finetune_sqa(data(), model, 3);
  REQUIRE(r.log.size() == 100);
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 10; ++k) {
    first += r.log[static_cast<std::size_t>(k)].terms.at("total");
    last += r.log[r.log.size() - 1 - static_cast<std::size_t>(k)].terms.at("total");
  }
  CHECK(last < first);

  SqaModel reloaded(vocab, answers, EncoderConfig{}, small_scene(), cfg);
  reloaded.load(r.checkpoint);
  const auto p1 = predict_sqa(data(), model);
  const auto p2 = predict_sqa(data(), reloaded, 2);
  REQUIRE(p1.size() == data().sqa.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].answer == p2[i].answer);
    CHECK((p1[i].position - p2[i].position).norm() < 1e-12);
  }
  CHECK(evaluate_sqa(data(), p1).num_questions == static_cast<int>(p1.size()));

  const auto path = std::filesystem::temp_directory_path() / "mc_sqa_preds.json";
  write_sqa_predictions(p1, path);
  const auto back = read_sqa_predictions(path);
  REQUIRE(back.size() == p1.size());
  CHECK(back[0].rotation == p1[0].rotation);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(reloaded.load_pretrained(r.checkpoint), Error);
}

TEST_CASE("SQA answers do not depend on point order") {
  const Vocabulary vocab = dataset_vocabulary(data());
  SqaModel model(vocab, build_answer_vocab(data().sqa, 1), EncoderConfig{}, small_scene(), small_sqa());
  Dataset shuffled = data();
  Rng rng(6);
  for (auto& s : shuffled.scenes) {
    const auto perm = rng.permutation(static_cast<std::size_t>(s.cloud.size()));
    s.cloud.points = permute_rows(s.cloud.points, perm);
    s.cloud.colors = permute_rows(s.cloud.colors, perm);
  }
  const auto a = predict_sqa(data(), model);
  const auto b = predict_sqa(shuffled, model);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].answer == b[i].answer);
    CHECK((a[i].position - b[i].position).norm() < 1e-5);
  }
}

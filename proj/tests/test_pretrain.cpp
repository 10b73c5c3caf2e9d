#include "multiclip/error.hpp"
#include "multiclip/pretrain.hpp"
#include "multiclip/synthetic.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace multiclip;

namespace {

AlignmentBatch random_batch(int b, Rng& rng) {
  return {testing::random_unit_rows(b, 16, rng), testing::random_unit_rows(b, 16, rng),
          testing::random_unit_rows(b, 16, rng)};
}

SceneEncoderConfig fast_scene() {
  SceneEncoderConfig c;
  c.num_proposals = 16;
  return c;
}

PretrainConfig fast_pretrain() {
  PretrainConfig c;
  c.iterations = 3;
  c.batch_size = 4;
  c.num_points = 256;
  c.learning_rate = 1e-3;
  c.augment.cuboid_min_points = 256;
  return c;
}

RenderConfig small_render() {
  RenderConfig r;
  return r;
}

const Dataset& train_set() {
  static const Dataset d = generate_dataset(3, 8, Split::Train, GeneratorConfig{});
  return d;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

}  // namespace

TEST_CASE("L_pre composes the weighted terms") {
  Rng rng(1);
  const AlignmentBatch b = random_batch(5, rng);
  const PretrainConfig cfg;
  const PretrainLoss l = pretrain_loss(b, 0.2, cfg);
  const double text = static_cast<double>(oracle::contrastive(b.z_scene, b.z_text, cfg.tau));
  const double image = static_cast<double>(oracle::contrastive(b.z_scene, b.z_image, cfg.tau));
  CHECK(l.det == doctest::Approx(0.2));
  CHECK(std::abs(l.text - text) < 1e-9);
  CHECK(std::abs(l.image - image) < 1e-9);
  CHECK(std::abs(l.total - (0.2 + 0.5 * text + 0.5 * image)) < 1e-9);
  CHECK(0.2 + 0.5 * 0.4 + 0.5 * 0.6 == doctest::Approx(0.7));
}

TEST_CASE("L_pre of a single scene is L_det") {
  Rng rng(2);
  const PretrainLoss l = pretrain_loss(random_batch(1, rng), 0.37, PretrainConfig{});
  CHECK(l.total == doctest::Approx(0.37));
  CHECK(l.text == 0.0);
  CHECK(l.image == 0.0);
}

TEST_CASE("each toggle changes only its own term") {
  Rng rng(3);
  const AlignmentBatch b = random_batch(6, rng);
  const PretrainConfig full;
  const PretrainLoss base = pretrain_loss(b, 0.5, full);

  PretrainConfig no_text = full;
  no_text.use_text_loss = false;
  const PretrainLoss a = pretrain_loss(b, 0.5, no_text);
  CHECK(a.text == 0.0);
  CHECK(a.image == base.image);
  CHECK(a.det == base.det);

  PretrainConfig no_image = full;
  no_image.use_image_loss = false;
  const PretrainLoss c = pretrain_loss(b, 0.5, no_image);
  CHECK(c.image == 0.0);
  CHECK(c.text == base.text);

  PretrainConfig cosine = full;
  cosine.use_cosine_variant = true;
  const PretrainLoss d = pretrain_loss(b, 0.5, cosine);
  CHECK(d.det == base.det);
  CHECK(d.text == doctest::Approx(cosine_alignment_loss(b.z_scene, b.z_text).value));

  AlignmentBatch single = b;
  single.z_image = testing::random_unit_rows(6, 16, rng);
  const PretrainLoss e = pretrain_loss(single, 0.5, full);
  CHECK(e.text == base.text);
  CHECK(e.det == base.det);
  CHECK(e.image != base.image);
}

TEST_CASE("alignment batches are validated") {
  Rng rng(4);
  AlignmentBatch b = random_batch(3, rng);
  b.z_text = testing::random_unit_rows(2, 16, rng);
  CHECK_THROWS_AS(pretrain_loss(b, 0.0, PretrainConfig{}), Error);
  AlignmentBatch c = random_batch(3, rng);
  c.z_scene *= 2.0;
  CHECK_THROWS_AS(pretrain_loss(c, 0.0, PretrainConfig{}), Error);
}

TEST_CASE("pre-training is deterministic for a seed") {
  auto run = [] {
    PretrainModel model(dataset_vocabulary(train_set()), EncoderConfig{}, fast_scene());
    return serialize_checkpoint(run_pretraining(train_set(), model, small_render(), fast_pretrain(), 5).checkpoint);
  };
  CHECK(run() == run());
}

TEST_CASE("a single view renders only the top-down pose") {
  PretrainModel model(dataset_vocabulary(train_set()), EncoderConfig{}, fast_scene());
  PretrainConfig cfg = fast_pretrain();
  cfg.num_views = 1;
  cfg.iterations = 1;
  std::vector<CameraPose> seen;
  PretrainHooks hooks;
  hooks.on_render = [&](const std::string&, const std::vector<CameraPose>& poses) {
    seen.insert(seen.end(), poses.begin(), poses.end());
  };
  run_pretraining(train_set(), model, small_render(), cfg, 1, hooks);
  REQUIRE(seen.size() == train_set().scenes.size());
  for (const auto& p : seen) CHECK(p.elevation_deg == doctest::Approx(90.0));
}

TEST_CASE("pre-training lowers both alignment losses") {
  PretrainModel model(dataset_vocabulary(train_set()), EncoderConfig{}, fast_scene());
  PretrainConfig cfg = fast_pretrain();
  cfg.iterations = 200;
  cfg.batch_size = 8;
  const auto log = run_pretraining(train_set(), model, small_render(), cfg, 2).log;
  std::vector<double> t0, t1, i0, i1;
  for (int k = 0; k < 10; ++k) {
    t0.push_back(log[static_cast<std::size_t>(k)].loss.text);
    i0.push_back(log[static_cast<std::size_t>(k)].loss.image);
    t1.push_back(log[log.size() - 1 - static_cast<std::size_t>(k)].loss.text);
    i1.push_back(log[log.size() - 1 - static_cast<std::size_t>(k)].loss.image);
  }
  CHECK(mean(t1) < mean(t0));
  CHECK(mean(i1) < mean(i0));
}

TEST_CASE("checkpoints reload and reject other configurations") {
  PretrainModel model(dataset_vocabulary(train_set()), EncoderConfig{}, fast_scene());
  const Checkpoint ck = model.to_checkpoint();
  PretrainModel same(dataset_vocabulary(train_set()), EncoderConfig{}, fast_scene());
  CHECK_NOTHROW(same.load(ck));
  SceneEncoderConfig other = fast_scene();
  other.num_proposals = 8;
  PretrainModel different(dataset_vocabulary(train_set()), EncoderConfig{}, other);
  CHECK_THROWS_AS(different.load(ck), Error);
  PretrainModel other_vocab(Vocabulary::build({"something else"}), EncoderConfig{}, fast_scene());
  CHECK_THROWS_AS(other_vocab.load(ck), Error);
}

TEST_CASE("exported embeddings are unit rows and depend only on the cloud") {
  Dataset d;
  d.labels = GeneratorConfig{}.labels();
  auto s = fixtures::single_object_scene();
  d.scenes.push_back(s);
  s.scene_id = "fixture1";
  d.scenes.push_back(s);
  const SceneEncoder enc(fast_scene());
  const EmbeddingTable t = export_embeddings(d, enc, 512);
  REQUIRE(t.size() == 2);
  CHECK(t[0].z.norm() == doctest::Approx(1.0));
  CHECK(t[0].z == t[1].z);

  const Checkpoint ck = PretrainModel(dataset_vocabulary(train_set()), EncoderConfig{}, fast_scene()).to_checkpoint();
  CHECK_NOTHROW(export_embeddings(d, ck, EncoderConfig{}, fast_scene(), 512));
  try {
    export_embeddings(d, ck, EncoderConfig{}, SceneEncoderConfig{}, 512);
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Load);
  }
}

TEST_CASE("embedding tables round-trip") {
  EmbeddingTable t{{"a", "bedroom", Vec::LinSpaced(4, 0.1, 0.4)}, {"b", "office", Vec::LinSpaced(4, -1.0, 1.0)}};
  const auto path = std::filesystem::temp_directory_path() / "mc_embed_test.tsv";
  write_embedding_table(t, path);
  const auto back = read_embedding_table(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].scene_type == "office");
  CHECK((back[1].z - t[1].z).norm() < 1e-15);
  std::filesystem::remove(path);
}

TEST_CASE("2-D projection preserves planar geometry") {
  Rng rng(6);
  const Mat basis = testing::random_mat(10, 2, rng).householderQr().householderQ() * Mat::Identity(10, 2);
  const Mat plane = testing::random_mat(7, 2, rng);
  const Mat rows = (plane * basis.transpose()).rowwise() + testing::random_mat(1, 10, rng).row(0);
  const Eigen::MatrixX2d xy = project_2d(rows);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      CHECK(std::abs((xy.row(i) - xy.row(j)).norm() - (rows.row(i) - rows.row(j)).norm()) < 1e-6);
    }
  }
}

TEST_CASE("2-D projection keeps duplicates and collinearity") {
  Rng rng(7);
  Mat rows = testing::random_mat(5, 6, rng);
  rows.row(4) = rows.row(1);
  const Eigen::MatrixX2d xy = project_2d(rows);
  CHECK((xy.row(4) - xy.row(1)).norm() < 1e-12);

  const Vec dir = testing::random_mat(6, 1, rng);
  Mat line(4, 6);
  for (int i = 0; i < 4; ++i) line.row(i) = (static_cast<double>(i) * dir).transpose();
  const Eigen::MatrixX2d l = project_2d(line);
  const Eigen::Vector2d a = l.row(1) - l.row(0);
  for (int i = 2; i < 4; ++i) {
    const Eigen::Vector2d b = l.row(i) - l.row(0);
    CHECK(std::abs(a.x() * b.y() - a.y() * b.x()) < 1e-9);
  }
  CHECK_THROWS_AS(project_2d(Mat(rows.topRows(1))), Error);
  CHECK_THROWS_AS(project_2d(Mat(Mat::Ones(3, 4))), Error);
}

TEST_CASE("type cohesion separates two clusters") {
  Vec a = Vec::Zero(3), b = Vec::Zero(3);
  a(0) = 1.0;
  b(1) = 1.0;
  const TypeCohesion c = type_cohesion({{"s0", "x", a}, {"s1", "x", a}, {"s2", "y", b}, {"s3", "y", b}});
  CHECK(c.intra == doctest::Approx(1.0));
  CHECK(c.inter == doctest::Approx(0.0));
}

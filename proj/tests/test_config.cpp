#include "multiclip/config.hpp"
#include "multiclip/error.hpp"

#include <doctest.h>

using namespace multiclip;

namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Input;
}

}  // namespace

TEST_CASE("defaults survive a JSON round trip") {
  const ExperimentConfig c;
  const ExperimentConfig back = parse_experiment_config(to_json(c).dump());
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("partial configs override only the given keys") {
  const ExperimentConfig c =
      parse_experiment_config(R"({"seed": 9, "pretrain": {"iterations": 12, "augment": {"enabled": false}}})");
  CHECK(c.seed == 9);
  CHECK(c.pretrain.iterations == 12);
  CHECK_FALSE(c.pretrain.augment.enabled);
  CHECK(c.pretrain.batch_size == PretrainConfig{}.batch_size);
  CHECK(c.vqa.lr_milestones == std::vector<int>{15});
}

TEST_CASE("bad configs are config errors") {
  CHECK(kind_of(R"({"sed": 1})") == ErrorKind::Config);
  CHECK(kind_of(R"({"vqa": {"hiden": 3}})") == ErrorKind::Config);
  CHECK(kind_of(R"({"pretrain": {"iterations": "ten"}})") == ErrorKind::Config);
  CHECK(kind_of(R"({"pretrain": {"tau": 0}})") == ErrorKind::Config);
  CHECK(kind_of(R"({"seed": -1})") == ErrorKind::Config);
  CHECK(kind_of("not json") == ErrorKind::Config);
  CHECK(kind_of(R"({"scene_encoder": {"num_classes": 3}})") == ErrorKind::Config);
}

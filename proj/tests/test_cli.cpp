#include "multiclip/scene_data.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

const std::string kCli = MULTICLIP_CLI_PATH;
const std::string kTiny = std::string(MULTICLIP_SOURCE_DIR) + "/configs/tiny.json";

int run(const std::string& args) {
  const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mc_cli_" + name);
  fs::remove_all(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

}  // namespace

TEST_CASE("gen-data writes a loadable dataset with a manifest") {
  const fs::path out = fresh("gen");
  REQUIRE(run("gen-data --seed 1 --scenes 8 --out " + out.string()) == 0);
  const auto d = multiclip::load_dataset(out, multiclip::Split::Train);
  CHECK(d.scenes.size() == 8);
  CHECK_FALSE(d.qa.empty());
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(read_json(out / "manifest.json")["command"] == "gen-data");
  fs::remove_all(out);
}

TEST_CASE("usage and config errors exit 2 without writing") {
  const fs::path out = fresh("bad");
  CHECK(run("gen-data --bogus --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  CHECK(run("pretrain --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  const fs::path cfg = fs::temp_directory_path() / "mc_cli_bad.json";
  std::ofstream(cfg) << R"({"pretrain": {"iterations": -3}})";
  CHECK(run("gen-data --config " + cfg.string() + " --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  std::ofstream(cfg) << R"({"pretrain": {"iteratons": 3}})";
  CHECK(run("gen-data --config " + cfg.string() + " --out " + out.string()) == 2);
  CHECK(run("gen-data --config /nonexistent.json --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  fs::remove(cfg);
}

TEST_CASE("runtime failures exit 1") {
  const fs::path out = fresh("rt");
  const fs::path empty = fresh("empty");
  fs::create_directories(empty);
  CHECK(run("pretrain --data " + empty.string() + " --config " + kTiny + " --out " + out.string()) == 1);
  std::ofstream(empty / "junk.ckpt") << "not a checkpoint";
  CHECK(run("eval-vqa --data " + empty.string() + " --checkpoint " + (empty / "junk.ckpt").string() + " --config " + kTiny + " --out " +
            out.string()) == 1);
  CHECK(run("pretrain --data /nonexistent --config " + kTiny + " --out " + out.string()) == 2);
  fs::remove_all(out);
  fs::remove_all(empty);
}

TEST_CASE("every subcommand runs on a tiny pipeline") {
  const fs::path root = fresh("pipe");
  const std::string c = " --config " + kTiny + " --seed 3";
  const std::string data = " --data " + (root / "data").string();
  const auto out = [&](const char* d) { return " --out " + (root / d).string(); };
  REQUIRE(run("gen-data" + c + out("data")) == 0);
  REQUIRE(run("pretrain --dump-views --jobs 2" + c + data + out("pre")) == 0);
  const std::string pre = (root / "pre" / "pretrain.ckpt").string();
  CHECK(fs::exists(root / "pre" / "views"));
  CHECK_FALSE(fs::is_empty(root / "pre" / "views"));
  REQUIRE(run("finetune-vqa --pretrained " + pre + c + data + out("vqa")) == 0);
  REQUIRE(run("finetune-sqa --pretrained " + pre + c + data + out("sqa")) == 0);
  REQUIRE(run("eval-vqa --checkpoint " + (root / "vqa" / "vqa.ckpt").string() + c + data + out("evqa")) == 0);
  REQUIRE(run("eval-sqa --checkpoint " + (root / "sqa" / "sqa.ckpt").string() + c + data + out("esqa")) == 0);
  REQUIRE(run("embed --checkpoint " + pre + c + data + out("emb")) == 0);
  REQUIRE(run("project --embeddings " + (root / "emb" / "embeddings.tsv").string() + c + out("proj")) == 0);
  REQUIRE(run("ablation" + c + data + out("abl")) == 0);

  const auto report = read_json(root / "evqa" / "report.json");
  CHECK(report.contains("em_at_1"));
  CHECK(read_json(root / "esqa" / "report.json").contains("em_at_1"));
  const auto abl = read_json(root / "abl" / "ablation.json");
  REQUIRE(abl.size() == 5);
  for (const auto& v : abl) CHECK(v.contains("em_at_1"));
  for (const char* d : {"data", "pre", "vqa", "sqa", "evqa", "esqa", "emb", "proj", "abl"}) {
    CHECK(fs::exists(root / d / "manifest.json"));
  }
  CHECK(run("finetune-vqa --pretrained " + (root / "vqa" / "vqa.ckpt").string() + c + data + out("x")) == 1);
  fs::remove_all(root);
}

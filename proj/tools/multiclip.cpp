// Command-line driver: data generation, pre-training, fine-tuning, evaluation,
// embedding export, 2-D projection and the pre-training ablation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// Nothing is written before the arguments and the config have been accepted.

#include "multiclip/config.hpp"
#include "multiclip/error.hpp"
#include "multiclip/renderer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace multiclip;
using nlohmann::ordered_json;

namespace {

struct Options {
  fs::path out;
  fs::path config_path;
  fs::path data;
  fs::path checkpoint;
  fs::path pretrained;
  fs::path embeddings;
  fs::path precomputed;
  std::string split = "val";
  int scenes = 0;
  int val_scenes = -1;
  int jobs = 1;
  bool dump_views = false;
};

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Load, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  f << text;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, fs::path out, const ExperimentConfig& cfg)
      : command_(std::move(command)), out_(std::move(out)), cfg_(cfg) {}

  void add(const fs::path& path) { files_.push_back(path); }

  void write() {
    std::sort(files_.begin(), files_.end());
    ordered_json j;
    j["command"] = command_;
    j["seed"] = cfg_.seed;
    j["config"] = to_json(cfg_);
    ordered_json outs = ordered_json::array();
    for (const auto& p : files_) {
      outs.push_back({{"path", fs::relative(p, out_).generic_string()}, {"fnv1a64", fingerprint(read_file(p))}});
    }
    j["outputs"] = outs;
    write_text(out_ / "manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path out_;
  const ExperimentConfig& cfg_;
  std::vector<fs::path> files_;
};

struct Context {
  const Options& opt;
  const ExperimentConfig& cfg;
  Manifest& manifest;

  fs::path output(const std::string& name) const {
    const fs::path p = opt.out / name;
    manifest.add(p);
    return p;
  }
  Dataset data(Split split) const {
    if (opt.data.empty()) throw Error(ErrorKind::Config, "--data is required");
    return load_dataset(opt.data, split);
  }
  Split eval_split() const { return parse_split(opt.split); }
};

void dump_views(const Context& c, const Dataset& data, int num_views) {
  fs::create_directories(c.opt.out / "views");
  for (const auto& s : data.scenes) {
    const auto views = render_multiview(s.cloud, num_views, c.cfg.render);
    for (std::size_t k = 0; k < views.size(); ++k) {
      write_png(views[k], c.output("views/" + s.scene_id + "_view" + std::to_string(k) + ".png"));
    }
  }
}

PretrainResult pretrain(const Context& c, const Dataset& train, const PretrainConfig& pc) {
  PretrainModel model(dataset_vocabulary(train), c.cfg.encoder, c.cfg.scene_encoder, pc.tau);
  PretrainHooks hooks;
  hooks.jobs = c.opt.jobs;
  std::map<std::string, PrecomputedEmbedding> pre;
  if (!c.opt.precomputed.empty()) {
    pre = load_precomputed_embeddings(c.opt.precomputed);
    hooks.precomputed = &pre;
  }
  return run_pretraining(train, model, c.cfg.render, pc, c.cfg.seed, hooks);
}

Checkpoint require_checkpoint(const Context& c, const std::string& kind) {
  if (c.opt.checkpoint.empty()) throw Error(ErrorKind::Config, "--checkpoint is required");
  Checkpoint ck = load_checkpoint(c.opt.checkpoint);
  if (ck.kind != kind) throw Error(ErrorKind::Load, "expected a " + kind + " checkpoint, got '" + ck.kind + "'");
  return ck;
}

std::string metadata(const Checkpoint& ck, const std::string& key) {
  auto it = ck.metadata.find(key);
  if (it == ck.metadata.end()) throw Error(ErrorKind::Load, "checkpoint lacks '" + key + "'");
  return it->second;
}

void write_report(const Context& c, const EvalReport& r) {
  write_text(c.output("report.json"), r.to_json() + "\n");
  write_text(c.output("report.md"), r.to_table());
  std::cout << r.to_table();
}

// ----------------------------------------------------------- subcommands --

void cmd_gen_data(const Context& c) {
  const Dataset train = generate_dataset(c.cfg.seed, c.cfg.train_scenes, Split::Train, c.cfg.generator);
  save_dataset(train, c.opt.out, Split::Train);
  if (c.cfg.val_scenes > 0) {
    save_dataset(generate_dataset(c.cfg.seed, c.cfg.val_scenes, Split::Val, c.cfg.generator), c.opt.out, Split::Val);
  }
  for (const auto& e : fs::recursive_directory_iterator(c.opt.out)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") c.manifest.add(e.path());
  }
  std::cout << "generated " << c.cfg.train_scenes << " train and " << c.cfg.val_scenes << " val scenes\n";
}

void cmd_pretrain(const Context& c) {
  const Dataset train = c.data(Split::Train);
  if (c.opt.dump_views) dump_views(c, train, c.cfg.pretrain.num_views);
  const PretrainResult r = pretrain(c, train, c.cfg.pretrain);
  save_checkpoint(r.checkpoint, c.output("pretrain.ckpt"));
  write_pretrain_log(r.log, c.output("pretrain_log.tsv"));
  const PretrainLoss& last = r.log.back().loss;
  std::cout << "final L_pre " << fixed(last.total, 4) << " (L_det " << fixed(last.det, 4) << ", L_text "
            << fixed(last.text, 4) << ", L_image " << fixed(last.image, 4) << ")\n";
}

void cmd_finetune_vqa(const Context& c) {
  const Dataset train = c.data(Split::Train);
  VqaModel model(dataset_vocabulary(train), build_answer_vocab(train.qa, c.cfg.vqa.answer_min_count), c.cfg.encoder,
                 c.cfg.scene_encoder, c.cfg.vqa);
  if (!c.opt.pretrained.empty()) model.load_pretrained(load_checkpoint(c.opt.pretrained));
  const FinetuneResult r = finetune_vqa(train, model, c.cfg.seed, c.opt.jobs);
  save_checkpoint(r.checkpoint, c.output("vqa.ckpt"));
  write_train_log(r.log, c.output("vqa_train_log.tsv"));
  std::cout << "vqa fine-tuning: " << r.log.size() << " steps, final loss " << fixed(r.log.back().terms.at("total"), 4)
            << "\n";
}

void cmd_finetune_sqa(const Context& c) {
  const Dataset train = c.data(Split::Train);
  SqaModel model(dataset_vocabulary(train), build_answer_vocab(train.sqa, c.cfg.sqa.answer_min_count), c.cfg.encoder,
                 c.cfg.scene_encoder, c.cfg.sqa);
  if (!c.opt.pretrained.empty()) model.load_pretrained(load_checkpoint(c.opt.pretrained));
  const FinetuneResult r = finetune_sqa(train, model, c.cfg.seed, c.opt.jobs);
  save_checkpoint(r.checkpoint, c.output("sqa.ckpt"));
  write_train_log(r.log, c.output("sqa_train_log.tsv"));
  std::cout << "sqa fine-tuning: " << r.log.size() << " steps, final loss " << fixed(r.log.back().terms.at("total"), 4)
            << "\n";
}

void cmd_eval_vqa(const Context& c) {
  const Checkpoint ck = require_checkpoint(c, "vqa");
  VqaModel model(Vocabulary::from_json(metadata(ck, "vocabulary")),
                 AnswerVocabulary::from_json(metadata(ck, "answers")), c.cfg.encoder, c.cfg.scene_encoder, c.cfg.vqa);
  model.load(ck);
  const Dataset data = c.data(c.eval_split());
  const auto preds = predict_vqa(data, model, c.opt.jobs);
  write_vqa_predictions(preds, c.output("predictions.json"));
  write_report(c, evaluate_vqa(data, preds));
}

void cmd_eval_sqa(const Context& c) {
  const Checkpoint ck = require_checkpoint(c, "sqa");
  SqaModel model(Vocabulary::from_json(metadata(ck, "vocabulary")),
                 AnswerVocabulary::from_json(metadata(ck, "answers")), c.cfg.encoder, c.cfg.scene_encoder, c.cfg.sqa);
  model.load(ck);
  const Dataset data = c.data(c.eval_split());
  const auto preds = predict_sqa(data, model, c.opt.jobs);
  write_sqa_predictions(preds, c.output("predictions.json"));
  write_report(c, evaluate_sqa(data, preds));
}

void cmd_embed(const Context& c) {
  const Checkpoint ck = require_checkpoint(c, "pretrain");
  PretrainModel model(Vocabulary::from_json(metadata(ck, "vocabulary")), c.cfg.encoder, c.cfg.scene_encoder);
  model.load(ck);
  const Dataset data = c.data(c.eval_split());
  const EmbeddingTable table = export_embeddings(data, model.scene(), c.cfg.pretrain.num_points);
  write_embedding_table(table, c.output("embeddings.tsv"));
  FeatureProvider features(model.dual(), c.cfg.render, c.cfg.pretrain.num_views);
  const TypeCohesion coh = type_cohesion(table);
  ordered_json j;
  j["scene_to_text_top1"] = scene_to_text_top1(data, table, features);
  j["intra_type_cosine"] = coh.intra;
  j["inter_type_cosine"] = coh.inter;
  j["num_scenes"] = table.size();
  write_text(c.output("alignment.json"), j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

void cmd_project(const Context& c) {
  if (c.opt.embeddings.empty()) throw Error(ErrorKind::Config, "--embeddings is required");
  const EmbeddingTable table = read_embedding_table(c.opt.embeddings);
  const Eigen::MatrixX2d xy = project_2d(table);
  std::ostringstream ss;
  ss << "scene_id\tscene_type\tx\ty\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    ss << table[i].scene_id << '\t' << table[i].scene_type << '\t' << fixed(xy(r, 0), 9) << '\t' << fixed(xy(r, 1), 9)
       << '\n';
  }
  write_text(c.output("projection.tsv"), ss.str());
  std::cout << "projected " << table.size() << " scenes\n";
}

void cmd_ablation(const Context& c) {
  const Dataset train = c.data(Split::Train);
  const Dataset val = c.data(c.eval_split());
  struct Variant {
    std::string name;
    std::function<void(PretrainConfig&)> apply;
  };
  const std::vector<Variant> variants{
      {"full", [](PretrainConfig&) {}},
      {"single-view", [](PretrainConfig& p) { p.num_views = 1; }},
      {"cosine", [](PretrainConfig& p) { p.use_cosine_variant = true; }},
      {"w/o L_text", [](PretrainConfig& p) { p.use_text_loss = false; }},
      {"w/o L_image", [](PretrainConfig& p) { p.use_image_loss = false; }},
  };
  ordered_json rows = ordered_json::array();
  std::ostringstream md;
  md << "| variant | EM@1 |\n|---|---|\n";
  for (const auto& v : variants) {
    PretrainConfig pc = c.cfg.pretrain;
    v.apply(pc);
    const PretrainResult pre = pretrain(c, train, pc);
    VqaModel model(dataset_vocabulary(train), build_answer_vocab(train.qa, c.cfg.vqa.answer_min_count),
                   c.cfg.encoder, c.cfg.scene_encoder, c.cfg.vqa);
    model.load_pretrained(pre.checkpoint);
    finetune_vqa(train, model, c.cfg.seed, c.opt.jobs);
    const EvalReport r = evaluate_vqa(val, predict_vqa(val, model, c.opt.jobs));
    rows.push_back({{"variant", v.name}, {"em_at_1", r.em_at_1}});
    md << "| " << v.name << " | " << fixed(100.0 * r.em_at_1, 2) << " |\n";
    std::cout << v.name << ": EM@1 " << fixed(100.0 * r.em_at_1, 2) << std::endl;
  }
  write_text(c.output("ablation.json"), rows.dump(2) + "\n");
  write_text(c.output("ablation.md"), md.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view scene/text/image alignment and 3D question answering"};
  app.require_subcommand(1);
  Options opt;
  std::string seed_text;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate a synthetic dataset"},
      {"pretrain", "align scene, image and text features"},
      {"finetune-vqa", "fine-tune the question-answering model"},
      {"finetune-sqa", "fine-tune the situated question-answering model"},
      {"eval-vqa", "evaluate a question-answering checkpoint"},
      {"eval-sqa", "evaluate a situated question-answering checkpoint"},
      {"embed", "export scene embeddings and alignment statistics"},
      {"project", "project exported embeddings to 2-D"},
      {"ablation", "pre-training variants followed by question answering"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_option("--config", opt.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_text, "random seed (overrides the config)");
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
    if (name == "gen-data") {
      sub->add_option("--scenes", opt.scenes, "number of training scenes")->check(CLI::PositiveNumber);
      sub->add_option("--val-scenes", opt.val_scenes, "number of validation scenes")->check(CLI::NonNegativeNumber);
    } else if (name == "project") {
      sub->add_option("--embeddings", opt.embeddings, "embedding table")->required()->check(CLI::ExistingFile);
    } else {
      sub->add_option("--data", opt.data, "dataset root")->required()->check(CLI::ExistingDirectory);
    }
    if (name == "pretrain" || name == "ablation") {
      sub->add_option("--precomputed", opt.precomputed, "precomputed text/view embeddings")
          ->check(CLI::ExistingFile);
    }
    if (name == "pretrain") sub->add_flag("--dump-views", opt.dump_views, "write rendered views as PNG");
    if (name == "finetune-vqa" || name == "finetune-sqa") {
      sub->add_option("--pretrained", opt.pretrained, "pre-training checkpoint")->check(CLI::ExistingFile);
    }
    if (name == "eval-vqa" || name == "eval-sqa" || name == "embed") {
      sub->add_option("--checkpoint", opt.checkpoint, "checkpoint to evaluate")->required()->check(CLI::ExistingFile);
    }
    if (name == "eval-vqa" || name == "eval-sqa" || name == "embed" || name == "ablation") {
      sub->add_option("--split", opt.split, "evaluation split")->check(CLI::IsMember({"train", "val", "test"}));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig cfg;
  try {
    if (!opt.config_path.empty()) cfg = load_experiment_config(opt.config_path);
    if (!seed_text.empty()) {
      std::size_t used = 0;
      cfg.seed = std::stoull(seed_text, &used);
      if (used != seed_text.size() || seed_text.front() == '-') throw std::invalid_argument(seed_text);
    }
    if (opt.scenes > 0) cfg.train_scenes = opt.scenes;
    if (opt.val_scenes >= 0) cfg.val_scenes = opt.val_scenes;
    cfg.validate();
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::logic_error&) {
    std::cerr << "config error: --seed must be a non-negative integer\n";
    return 2;
  }

  static const std::map<std::string, void (*)(const Context&)> handlers{
      {"gen-data", cmd_gen_data},         {"pretrain", cmd_pretrain}, {"finetune-vqa", cmd_finetune_vqa},
      {"finetune-sqa", cmd_finetune_sqa}, {"eval-vqa", cmd_eval_vqa}, {"eval-sqa", cmd_eval_sqa},
      {"embed", cmd_embed},               {"project", cmd_project},   {"ablation", cmd_ablation},
  };
  try {
    fs::create_directories(opt.out);
    Manifest manifest(command, opt.out, cfg);
    const Context ctx{opt, cfg, manifest};
    handlers.at(command)(ctx);
    manifest.write();
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

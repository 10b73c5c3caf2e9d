#include "multiclip/dual_encoder.hpp"

#include "multiclip/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

namespace multiclip {

using nlohmann::json;

// ------------------------------------------------------------ vocabulary --

Vocabulary::Vocabulary() : tokens_{"<unk>", "<eot>"}, index_{{"<unk>", kUnk}, {"<eot>", kEot}} {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != "<unk>" || tokens[1] != "<eot>") {
    throw Error(ErrorKind::Load, "vocabulary must start with <unk>, <eot>");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorKind::Load, "duplicate vocabulary token " + v.tokens_[i]);
    }
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens{"<unk>", "<eot>"};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return from_tokens(std::move(tokens));
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::string Vocabulary::to_json() const { return json{{"tokens", tokens_}}.dump(); }

Vocabulary Vocabulary::from_json(const std::string& text) {
  try {
    return from_tokens(json::parse(text).at("tokens").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, std::string("vocabulary: ") + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Load, "cannot write " + path.string());
  out << json{{"tokens", tokens_}}.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Load, "missing file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw Error(ErrorKind::Config, "max_len must be >= 2");
  const auto words = split_words(text);
  if (words.empty()) throw Error(ErrorKind::Tokenization, "empty text");
  TokenSequence seq;
  const std::size_t keep = std::min(words.size(), static_cast<std::size_t>(max_len - 1));
  for (std::size_t i = 0; i < keep; ++i) seq.ids.push_back(vocab.id(words[i]));
  seq.eot_index = static_cast<int>(seq.ids.size());
  seq.ids.push_back(Vocabulary::kEot);
  return seq;
}

// -------------------------------------------------------------- encoders --

namespace {

Mat sinusoidal_positions(int length, int width) {
  Mat pe(length, width);
  for (int p = 0; p < length; ++p) {
    for (int i = 0; i < width; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / width);
      pe(p, i) = std::sin(p * freq);
      if (i + 1 < width) pe(p, i + 1) = std::cos(p * freq);
    }
  }
  return pe;
}

Mat normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  }
  return m;
}

}  // namespace

TextEncoder::TextEncoder(nn::ParameterStore& store, const std::string& name, int vocab_size,
                         const EncoderConfig& config, Rng& rng)
    : config_(config),
      embedding_(store.add(name + ".token_embedding", normal_init(vocab_size, config.width, 1.0, rng))),
      positions_(sinusoidal_positions(config.max_len, config.width)) {
  for (int l = 0; l < config.layers; ++l) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(l), config.width, config.heads, config.ffn_hidden,
                         rng);
  }
  final_ln_ = nn::LayerNorm(store, name + ".ln_final", config.width);
  word_proj_ = nn::Linear(store, name + ".word_proj", config.width, config.word_dim, rng);
  pooled_proj_ = nn::Linear(store, name + ".pooled_proj", config.width, config.embed_dim, rng, false);
}

TextForward TextEncoder::forward(const TokenSequence& tokens) const {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n < 1 || n > config_.max_len) throw Error(ErrorKind::Input, "token sequence length out of range");
  if (tokens.eot_index < 0 || tokens.eot_index >= n) throw Error(ErrorKind::Input, "eot_index out of range");
  std::vector<Eigen::Index> ids(tokens.ids.begin(), tokens.ids.end());
  for (auto id : ids) {
    if (id < 0 || id >= embedding_->value().rows()) throw Error(ErrorKind::Input, "token id outside vocabulary");
  }
  Var x = ad::add(ad::gather_rows(embedding_->var(), ids), ad::constant(positions_.topRows(n)));
  for (const auto& layer : layers_) x = layer.forward(x);
  x = final_ln_.forward(x);
  TextForward out;
  out.words = word_proj_.forward(x);
  out.pooled = ad::l2_normalize_rows(pooled_proj_.forward(ad::slice_rows(x, tokens.eot_index, 1)));
  return out;
}

ImageEncoder::ImageEncoder(nn::ParameterStore& store, const std::string& name, const EncoderConfig& config, Rng& rng)
    : config_(config) {
  if (config.patch < 1 || config.image_height % config.patch != 0 || config.image_width % config.patch != 0) {
    throw Error(ErrorKind::Config, "image resolution must be a multiple of the patch size");
  }
  grid_h_ = config.image_height / config.patch;
  grid_w_ = config.image_width / config.patch;
  patch_embed_ = nn::Linear(store, name + ".patch_embed", config.patch * config.patch * 3, config.width, rng);
  cls_ = store.add(name + ".cls", normal_init(1, config.width, 0.02, rng));
  positions_ = store.add(name + ".positions", normal_init(num_patches() + 1, config.width, 0.02, rng));
  for (int l = 0; l < config.layers; ++l) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(l), config.width, config.heads, config.ffn_hidden,
                         rng);
  }
  final_ln_ = nn::LayerNorm(store, name + ".ln_final", config.width);
  proj_ = nn::Linear(store, name + ".proj", config.width, config.embed_dim, rng, false);
}

Mat ImageEncoder::patchify(const ViewImage& image) const {
  if (image.height != config_.image_height || image.width != config_.image_width) {
    throw Error(ErrorKind::Input, "image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                      ", encoder expects " + std::to_string(config_.image_height) + "x" +
                                      std::to_string(config_.image_width));
  }
  const int p = config_.patch;
  Mat patches(num_patches(), p * p * 3);
  for (int gy = 0; gy < grid_h_; ++gy) {
    for (int gx = 0; gx < grid_w_; ++gx) {
      const Eigen::Index row = gy * grid_w_ + gx;
      Eigen::Index col = 0;
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          for (int c = 0; c < 3; ++c) patches(row, col++) = image.at(gy * p + y, gx * p + x, c) - 0.5;
        }
      }
    }
  }
  return patches;
}

Var ImageEncoder::forward(const ViewImage& image) const {
  const Var patches = patch_embed_.forward(ad::constant(patchify(image)));
  const Var seq[] = {cls_->var(), patches};
  Var x = ad::add(ad::concat_rows(seq), positions_->var());
  for (const auto& layer : layers_) x = layer.forward(x);
  x = final_ln_.forward(x);
  return ad::l2_normalize_rows(proj_.forward(ad::slice_rows(x, 0, 1)));
}

DualEncoder::DualEncoder(Vocabulary vocab, const EncoderConfig& config)
    : vocab_(std::move(vocab)),
      config_(config),
      init_rng_(config.init_seed),
      text_(store_, "text", vocab_.size(), config, init_rng_),
      image_(store_, "image", config, init_rng_) {
  store_.set_trainable(config.trainable);
}

TextEncoding DualEncoder::encode_text(const TokenSequence& tokens) const {
  const TextForward f = text_.forward(tokens);
  TextEncoding out;
  out.word_embeddings = f.words.value();
  out.pooled = f.pooled.value().row(0).transpose();
  out.eot_index = tokens.eot_index;
  return out;
}

TextEncoding DualEncoder::encode_text(const std::string& text) const {
  return encode_text(tokenize(text, vocab_, config_.max_len));
}

ImageEncoding DualEncoder::encode_image(const ViewImage& image) const {
  return {image_.forward(image).value().row(0).transpose()};
}

// ---------------------------------------------------------------- fusion --

namespace {
constexpr double kDegenerateNorm = 1e-12;
}

ImageEncoding fuse_multiview(const std::vector<ImageEncoding>& embeddings) {
  if (embeddings.empty()) throw Error(ErrorKind::DegenerateFusion, "no view embeddings");
  Vec mean = Vec::Zero(embeddings.front().embedding.size());
  for (const auto& e : embeddings) {
    if (e.embedding.size() != mean.size()) throw Error(ErrorKind::Input, "view embeddings differ in dimension");
    mean += e.embedding;
  }
  mean /= static_cast<double>(embeddings.size());
  const double n = mean.norm();
  if (!(n > kDegenerateNorm)) throw Error(ErrorKind::DegenerateFusion, "mean of view embeddings is zero");
  return {mean / n};
}

Var fuse_multiview(const std::vector<Var>& embeddings) {
  if (embeddings.empty()) throw Error(ErrorKind::DegenerateFusion, "no view embeddings");
  const Var mean = ad::mean_rows(ad::concat_rows(embeddings));
  if (!(mean.value().norm() > kDegenerateNorm)) {
    throw Error(ErrorKind::DegenerateFusion, "mean of view embeddings is zero");
  }
  return ad::l2_normalize_rows(mean);
}

// --------------------------------------------------------------- adapter --

namespace {
Vec normalized(const std::vector<double>& v, const std::string& where) {
  Vec out = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  const double n = out.norm();
  if (!(n > 0.0) || !out.allFinite()) throw Error(ErrorKind::Load, where + ": zero or non-finite embedding");
  return out / n;
}
}  // namespace

std::map<std::string, PrecomputedEmbedding> load_precomputed_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Load, "missing file " + path.string());
  std::map<std::string, PrecomputedEmbedding> table;
  try {
    const json j = json::parse(in);
    const auto dim = j.at("dim").get<std::size_t>();
    for (const auto& [scene_id, rec] : j.at("scenes").items()) {
      PrecomputedEmbedding e;
      const auto text = rec.at("text").get<std::vector<double>>();
      if (text.size() != dim) throw Error(ErrorKind::Load, scene_id + ": text embedding has wrong dimension");
      e.text = normalized(text, scene_id);
      for (const auto& view : rec.at("views")) {
        const auto v = view.get<std::vector<double>>();
        if (v.size() != dim) throw Error(ErrorKind::Load, scene_id + ": view embedding has wrong dimension");
        e.views.push_back(normalized(v, scene_id));
      }
      if (e.views.empty()) throw Error(ErrorKind::Load, scene_id + ": no view embeddings");
      table.emplace(scene_id, std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Load, path.string() + ": " + e.what());
  }
  return table;
}

void save_precomputed_embeddings(const std::map<std::string, PrecomputedEmbedding>& table,
                                 const std::filesystem::path& path) {
  json scenes = json::object();
  std::size_t dim = 0;
  for (const auto& [id, e] : table) {
    dim = static_cast<std::size_t>(e.text.size());
    json views = json::array();
    for (const auto& v : e.views) views.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    scenes[id] = json{{"text", std::vector<double>(e.text.data(), e.text.data() + e.text.size())}, {"views", views}};
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Load, "cannot write " + path.string());
  out << json{{"dim", dim}, {"scenes", scenes}}.dump() << "\n";
}

FeatureProvider::FeatureProvider(const DualEncoder& encoder, const RenderConfig& render, int num_views)
    : encoder_(encoder), render_(render), num_views_(num_views) {
  if (num_views < 1) throw Error(ErrorKind::Config, "num_views must be >= 1");
}

TextForward FeatureProvider::text(const std::string& text) {
  if (!frozen()) return encoder_.text().forward(tokenize(text, encoder_.vocab(), encoder_.config().max_len));
  auto it = text_cache_.find(text);
  if (it == text_cache_.end()) {
    const TextForward f = encoder_.text().forward(tokenize(text, encoder_.vocab(), encoder_.config().max_len));
    it = text_cache_.emplace(text, TextForward{ad::constant(f.words.value()), ad::constant(f.pooled.value())}).first;
  }
  return it->second;
}

const std::vector<ViewImage>& FeatureProvider::views(const std::string& scene_id, const PointCloud& cloud) {
  auto it = views_.find(scene_id);
  if (it == views_.end()) {
    if (observer_) observer_(scene_id, multiview_poses(cloud, num_views_, render_));
    it = views_.emplace(scene_id, render_multiview(cloud, num_views_, render_)).first;
  }
  return it->second;
}

Var FeatureProvider::scene_image(const std::string& scene_id, const PointCloud& cloud) {
  if (auto p = precomputed_.find(scene_id); p != precomputed_.end()) {
    std::vector<Var> parts;
    for (const Vec& v : p->second.views) parts.push_back(ad::constant(v.transpose()));
    return ad::constant(fuse_multiview(parts).value());
  }
  if (frozen()) {
    if (auto it = image_cache_.find(scene_id); it != image_cache_.end()) return it->second;
  }
  std::vector<Var> parts;
  for (const ViewImage& view : views(scene_id, cloud)) parts.push_back(encoder_.image().forward(view));
  Var fused = fuse_multiview(parts);
  if (frozen()) {
    fused = ad::constant(fused.value());
    image_cache_.emplace(scene_id, fused);
  }
  return fused;
}

std::optional<Var> FeatureProvider::precomputed_text(const std::string& scene_id) const {
  auto p = precomputed_.find(scene_id);
  if (p == precomputed_.end()) return std::nullopt;
  return ad::constant(p->second.text.transpose());
}

void FeatureProvider::prefetch(const std::vector<std::string>& texts,
                               const std::vector<std::pair<std::string, const PointCloud*>>& scenes, int jobs) {
  jobs = std::max(1, jobs);
  // Renders happen for trainable encoders too; embeddings only when frozen.
  std::vector<std::pair<std::string, const PointCloud*>> todo_scenes;
  for (const auto& s : scenes) {
    if (!views_.count(s.first) && !precomputed_.count(s.first)) todo_scenes.push_back(s);
  }
  std::vector<std::string> todo_texts;
  if (frozen()) {
    for (const auto& t : texts) {
      if (!text_cache_.count(t)) todo_texts.push_back(t);
    }
    std::sort(todo_texts.begin(), todo_texts.end());
    todo_texts.erase(std::unique(todo_texts.begin(), todo_texts.end()), todo_texts.end());
  }
  std::vector<std::vector<ViewImage>> rendered(todo_scenes.size());
  std::vector<Mat> images(todo_scenes.size());
  std::vector<TextForward> encoded(todo_texts.size());
  const bool embed_images = frozen();
  auto work = [&](int worker) {
    for (std::size_t i = static_cast<std::size_t>(worker); i < todo_scenes.size(); i += static_cast<std::size_t>(jobs)) {
      rendered[i] = render_multiview(*todo_scenes[i].second, num_views_, render_);
      if (embed_images) {
        std::vector<Var> parts;
        for (const ViewImage& v : rendered[i]) parts.push_back(encoder_.image().forward(v));
        images[i] = fuse_multiview(parts).value();
      }
    }
    for (std::size_t i = static_cast<std::size_t>(worker); i < todo_texts.size(); i += static_cast<std::size_t>(jobs)) {
      const TextForward f = encoder_.text().forward(tokenize(todo_texts[i], encoder_.vocab(), encoder_.config().max_len));
      encoded[i] = TextForward{ad::constant(f.words.value()), ad::constant(f.pooled.value())};
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (std::size_t i = 0; i < todo_scenes.size(); ++i) {
    if (observer_) observer_(todo_scenes[i].first, multiview_poses(*todo_scenes[i].second, num_views_, render_));
    views_.emplace(todo_scenes[i].first, std::move(rendered[i]));
    if (embed_images) image_cache_.emplace(todo_scenes[i].first, ad::constant(images[i]));
  }
  for (std::size_t i = 0; i < todo_texts.size(); ++i) text_cache_.emplace(todo_texts[i], encoded[i]);
}

}  // namespace multiclip

#pragma once

// Text and image encoders that play the CLIP role: a tiny trainable reference
// pair, plus an adapter for embeddings produced elsewhere.

#include "multiclip/nn.hpp"
#include "multiclip/renderer.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace multiclip {

using ad::Mat;
using ad::Var;
using ad::Vec;

struct TokenSequence {
  std::vector<int> ids;
  int eot_index = 0;
  std::size_t size() const { return ids.size(); }
};

// Word-level vocabulary: id 0 is <unk>, id 1 is <eot>, then words in
// lexicographic order.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kEot = 1;

  Vocabulary();
  static Vocabulary build(const std::vector<std::string>& corpus);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(const std::string& word) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// Lowercases and splits on anything that is not a letter, digit or
// apostrophe; separators are dropped.
std::vector<std::string> split_words(const std::string& text);

// Throws Tokenization when no words remain. Keeps at most max_len - 1 words
// and appends <eot>.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int max_len = 77);

struct EncoderConfig {
  int width = 128;
  int layers = 2;
  int heads = 4;
  int ffn_hidden = 256;
  int max_len = 77;
  int word_dim = 512;
  int embed_dim = 512;  // d, the shared alignment space
  int image_height = 224;
  int image_width = 224;
  int patch = 16;
  bool trainable = false;
  std::uint64_t init_seed = 1234;
};

struct TextEncoding {
  Mat word_embeddings;  // N_q x word_dim
  Vec pooled;           // d, unit norm
  int eot_index = 0;
};

struct ImageEncoding {
  Vec embedding;  // d, unit norm
};

struct TextForward {
  Var words;   // N_q x word_dim
  Var pooled;  // 1 x d, unit norm
};

// Embedding table + sinusoidal positions + pre-norm transformer. Word states
// are a linear map of the final states; the pooled vector projects the
// <eot> state and is L2-normalized.
class TextEncoder {
 public:
  TextEncoder(nn::ParameterStore& store, const std::string& name, int vocab_size, const EncoderConfig& config,
              Rng& rng);
  TextForward forward(const TokenSequence& tokens) const;

 private:
  EncoderConfig config_;
  nn::Parameter* embedding_;
  Mat positions_;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear word_proj_;
  nn::Linear pooled_proj_;
};

// 16x16 patches -> linear embedding, learned positions, CLS token,
// pre-norm transformer, CLS projection to d, L2-normalized.
class ImageEncoder {
 public:
  ImageEncoder(nn::ParameterStore& store, const std::string& name, const EncoderConfig& config, Rng& rng);
  Var forward(const ViewImage& image) const;  // 1 x d
  int num_patches() const { return grid_h_ * grid_w_; }
  // Rows = patches in raster order, columns = patch*patch*3 pixel values.
  Mat patchify(const ViewImage& image) const;

 private:
  EncoderConfig config_;
  int grid_h_ = 0;
  int grid_w_ = 0;
  nn::Linear patch_embed_;
  nn::Parameter* cls_;
  nn::Parameter* positions_;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear proj_;
};

// Reference CLIP-role pair sharing one parameter store (names "text.*",
// "image.*").
class DualEncoder {
 public:
  DualEncoder(Vocabulary vocab, const EncoderConfig& config);

  TextEncoding encode_text(const TokenSequence& tokens) const;
  TextEncoding encode_text(const std::string& text) const;
  ImageEncoding encode_image(const ViewImage& image) const;

  const Vocabulary& vocab() const { return vocab_; }
  const EncoderConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const TextEncoder& text() const { return text_; }
  const ImageEncoder& image() const { return image_; }

 private:
  Vocabulary vocab_;
  EncoderConfig config_;
  nn::ParameterStore store_;
  Rng init_rng_;
  TextEncoder text_;
  ImageEncoder image_;
};

// Component-wise mean, re-normalized; throws DegenerateFusion for an empty
// list or a (near) zero mean.
ImageEncoding fuse_multiview(const std::vector<ImageEncoding>& embeddings);
Var fuse_multiview(const std::vector<Var>& embeddings);

// Embeddings produced outside this library, keyed by scene_id.
struct PrecomputedEmbedding {
  Vec text;
  std::vector<Vec> views;
};

// JSON: {"dim": d, "scenes": {"<scene_id>": {"text": [d], "views": [[d], ...]}}}.
// Vectors are L2-normalized on load.
std::map<std::string, PrecomputedEmbedding> load_precomputed_embeddings(const std::filesystem::path& path);
void save_precomputed_embeddings(const std::map<std::string, PrecomputedEmbedding>& table,
                                 const std::filesystem::path& path);

// Text and multi-view image features for the training loops. Views are
// rendered once per scene id. With frozen encoders every result is computed
// once per key and handed out as a constant; with trainable encoders each
// call builds a fresh graph. Precomputed adapter embeddings, when set,
// replace the image branch and the scene-level text for their scene ids.
class FeatureProvider {
 public:
  using RenderObserver = std::function<void(const std::string& scene_id, const std::vector<CameraPose>&)>;

  FeatureProvider(const DualEncoder& encoder, const RenderConfig& render, int num_views);

  TextForward text(const std::string& text);
  Var scene_image(const std::string& scene_id, const PointCloud& cloud);
  const std::vector<ViewImage>& views(const std::string& scene_id, const PointCloud& cloud);
  // Adapter text for the scene, when one was provided.
  std::optional<Var> precomputed_text(const std::string& scene_id) const;

  // Fills the caches using up to `jobs` worker threads. A no-op for the
  // parts that are recomputed per call.
  void prefetch(const std::vector<std::string>& texts,
                const std::vector<std::pair<std::string, const PointCloud*>>& scenes, int jobs);

  void set_render_observer(RenderObserver observer) { observer_ = std::move(observer); }
  void set_precomputed(std::map<std::string, PrecomputedEmbedding> table) { precomputed_ = std::move(table); }
  bool frozen() const { return !encoder_.config().trainable; }
  int num_views() const { return num_views_; }

 private:
  const DualEncoder& encoder_;
  RenderConfig render_;
  int num_views_;
  RenderObserver observer_;
  std::map<std::string, PrecomputedEmbedding> precomputed_;
  std::map<std::string, std::vector<ViewImage>> views_;
  std::map<std::string, TextForward> text_cache_;
  std::map<std::string, Var> image_cache_;
};

}  // namespace multiclip

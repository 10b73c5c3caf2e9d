#pragma once

// Parameter storage and the transformer building blocks shared by every model.

#include "multiclip/autodiff.hpp"
#include "multiclip/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace multiclip::nn {

using ad::Mat;
using ad::Var;

struct Parameter {
  std::string name;
  std::shared_ptr<ad::Node> node;
  Mat adam_m;
  Mat adam_v;

  Mat& value() { return node->value; }
  const Mat& value() const { return node->value; }
  // Gradient accumulated by backward(); empty when nothing flowed in.
  const Mat& grad() const { return node->grad; }
  bool trainable() const { return node->requires_grad; }
  void set_trainable(bool on) { node->requires_grad = on; }
  void zero_grad() { node->grad.resize(0, 0); }
  Var var() const { return Var(node); }
};

// Owns parameters in registration order. Pointers stay valid for the life of
// the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter* add(const std::string& name, Mat init, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::vector<Parameter*> trainable() const;
  void set_trainable(bool on);
  void zero_grad();
  std::size_t num_scalars() const;

  // Named copies of every value, in registration order.
  std::vector<std::pair<std::string, Mat>> snapshot() const;
  // Overwrite values whose names start with `prefix`; shapes must match.
  // Returns the number of tensors copied.
  std::size_t load(const std::vector<std::pair<std::string, Mat>>& tensors,
                   const std::string& prefix = "");

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

Mat xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
         Rng& rng, bool bias = true);

  Var forward(const Var& x) const;
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }
  Eigen::Index in_features() const { return weight_->value().rows(); }
  Eigen::Index out_features() const { return weight_->value().cols(); }

 private:
  Parameter* weight_ = nullptr;  // in x out
  Parameter* bias_ = nullptr;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index dim);
  Var forward(const Var& x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, Eigen::Index dim, int heads,
                     Rng& rng);

  // Queries attend over keys/values built from `memory`. No masking and no
  // positional terms, so the output is equivariant to query order and
  // invariant to memory order.
  Var forward(const Var& queries, const Var& memory) const;
  const Linear& out_proj() const { return out_; }

 private:
  Linear q_, k_, v_, out_;
  int heads_ = 1;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, Eigen::Index dim,
              Eigen::Index hidden, Rng& rng);
  Var forward(const Var& x) const;
  const Linear& out_proj() const { return fc2_; }

 private:
  Linear fc1_, fc2_;
};

// Pre-norm encoder layer: x + attn(ln(x)), then x + ffn(ln(x)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, Eigen::Index dim, int heads,
               Eigen::Index ffn_hidden, Rng& rng);
  Var forward(const Var& x) const;

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  FeedForward ffn_;
};

// Pre-norm decoder layer: self-attention over queries, cross-attention into
// memory, feed-forward; each wrapped in a residual.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParameterStore& store, const std::string& name, Eigen::Index dim, int heads,
               Eigen::Index ffn_hidden, Rng& rng);
  Var forward(const Var& queries, const Var& memory) const;

 private:
  LayerNorm ln1_, ln2_, ln3_;
  MultiHeadAttention self_attn_, cross_attn_;
  FeedForward ffn_;
};

}  // namespace multiclip::nn

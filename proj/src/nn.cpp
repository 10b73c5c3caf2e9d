#include "multiclip/nn.hpp"

#include "multiclip/error.hpp"

#include <cmath>

namespace multiclip::nn {

Parameter* ParameterStore::add(const std::string& name, Mat init, bool trainable) {
  if (by_name_.count(name)) throw Error(ErrorKind::Config, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->node = std::make_shared<ad::Node>();
  p->node->value = std::move(init);
  p->node->requires_grad = trainable;
  Parameter* raw = p.get();
  params_.push_back(std::move(p));
  by_name_[name] = raw;
  return raw;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParameterStore::trainable() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) {
    if (p->trainable()) out.push_back(p.get());
  }
  return out;
}

void ParameterStore::set_trainable(bool on) {
  for (auto& p : params_) p->set_trainable(on);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value().size());
  return n;
}

std::vector<std::pair<std::string, Mat>> ParameterStore::snapshot() const {
  std::vector<std::pair<std::string, Mat>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p->name, p->value());
  return out;
}

std::size_t ParameterStore::load(const std::vector<std::pair<std::string, Mat>>& tensors,
                                 const std::string& prefix) {
  std::size_t copied = 0;
  for (const auto& [name, value] : tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    Parameter* p = find(name);
    if (!p) continue;
    if (p->value().rows() != value.rows() || p->value().cols() != value.cols()) {
      throw Error(ErrorKind::Load, "shape mismatch for parameter " + name);
    }
    p->value() = value;
    ++copied;
  }
  return copied;
}

Mat xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat m(fan_in, fan_out);
  // Fill row-major so the draw order does not depend on Eigen's storage order.
  for (Eigen::Index r = 0; r < fan_in; ++r) {
    for (Eigen::Index c = 0; c < fan_out; ++c) m(r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
               Rng& rng, bool bias) {
  weight_ = store.add(name + ".weight", xavier_uniform(in, out, rng));
  if (bias) bias_ = store.add(name + ".bias", Mat::Zero(1, out));
}

Var Linear::forward(const Var& x) const {
  Var y = ad::matmul(x, weight_->var());
  if (bias_) y = ad::add_row(y, bias_->var());
  return y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index dim) {
  gamma_ = store.add(name + ".gamma", Mat::Ones(1, dim));
  beta_ = store.add(name + ".beta", Mat::Zero(1, dim));
}

Var LayerNorm::forward(const Var& x) const {
  return ad::layer_norm_rows(x, gamma_->var(), beta_->var());
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       Eigen::Index dim, int heads, Rng& rng)
    : q_(store, name + ".q", dim, dim, rng),
      k_(store, name + ".k", dim, dim, rng),
      v_(store, name + ".v", dim, dim, rng),
      out_(store, name + ".out", dim, dim, rng),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw Error(ErrorKind::Config, name + ": dim must be divisible by heads");
  }
}

Var MultiHeadAttention::forward(const Var& queries, const Var& memory) const {
  const Var q = q_.forward(queries);
  const Var k = k_.forward(memory);
  const Var v = v_.forward(memory);
  const Eigen::Index head_dim = q.cols() / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Eigen::Index off = h * head_dim;
    const Var qh = ad::slice_cols(q, off, head_dim);
    const Var kh = ad::slice_cols(k, off, head_dim);
    const Var vh = ad::slice_cols(v, off, head_dim);
    const Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    outputs.push_back(ad::matmul(attn, vh));
  }
  const Var merged = heads_ == 1 ? outputs[0] : ad::concat_cols(outputs);
  return out_.forward(merged);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, Eigen::Index dim,
                         Eigen::Index hidden, Rng& rng)
    : fc1_(store, name + ".fc1", dim, hidden, rng), fc2_(store, name + ".fc2", hidden, dim, rng) {}

Var FeedForward::forward(const Var& x) const { return fc2_.forward(ad::gelu(fc1_.forward(x))); }

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, Eigen::Index dim,
                           int heads, Eigen::Index ffn_hidden, Rng& rng)
    : ln1_(store, name + ".ln1", dim),
      ln2_(store, name + ".ln2", dim),
      attn_(store, name + ".attn", dim, heads, rng),
      ffn_(store, name + ".ffn", dim, ffn_hidden, rng) {}

Var EncoderLayer::forward(const Var& x) const {
  const Var n1 = ln1_.forward(x);
  const Var h = ad::add(x, attn_.forward(n1, n1));
  return ad::add(h, ffn_.forward(ln2_.forward(h)));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name, Eigen::Index dim,
                           int heads, Eigen::Index ffn_hidden, Rng& rng)
    : ln1_(store, name + ".ln1", dim),
      ln2_(store, name + ".ln2", dim),
      ln3_(store, name + ".ln3", dim),
      self_attn_(store, name + ".self_attn", dim, heads, rng),
      cross_attn_(store, name + ".cross_attn", dim, heads, rng),
      ffn_(store, name + ".ffn", dim, ffn_hidden, rng) {}

Var DecoderLayer::forward(const Var& queries, const Var& memory) const {
  const Var n1 = ln1_.forward(queries);
  Var h = ad::add(queries, self_attn_.forward(n1, n1));
  h = ad::add(h, cross_attn_.forward(ln2_.forward(h), memory));
  return ad::add(h, ffn_.forward(ln3_.forward(h)));
}

}  // namespace multiclip::nn

#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// Every value is a 2-D Eigen matrix; sequences of tokens are rows. A Var is a
// cheap handle to a graph node; the graph is freed when the last handle to the
// root goes away. Parameters are long-lived leaf nodes whose gradients
// accumulate across backward() calls until zero_grad().

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace multiclip::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Mat& grad_buffer() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const { return node_->value(0, 0); }
  bool valid() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf that never receives gradient.
Var constant(Mat value);

// Builds an op node. `backward` is only kept when some input needs gradient;
// it reads node.grad and accumulates into node.inputs[i]->grad_buffer().
Var make_op(Mat value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Reverse sweep from a 1x1 root.
void backward(const Var& root);

// Scalar node whose gradient w.r.t. inputs[i] is the precomputed grads[i]
// (same shape as the input). Used to wrap fused losses with analytic
// gradients.
Var fused_scalar(double value, std::vector<Var> inputs, std::vector<Mat> grads);

// ---- elementwise / linear algebra ----
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // Hadamard
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var add_constant(const Var& a, double c);
Var transpose(const Var& a);

Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);

// ---- reductions / normalization ----
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 0.0);
Var mean_rows(const Var& a);  // -> 1xC
Var sum_all(const Var& a);    // -> 1x1

// ---- structural ----
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::span<const Eigen::Index> rows);
// Max over rows sharing a segment id in [0, num_segments); every segment must
// be non-empty. Gradient flows to the arg-max row (lowest row on ties).
Var segment_max(const Var& a, std::span<const Eigen::Index> segment, Eigen::Index num_segments);

}  // namespace multiclip::ad

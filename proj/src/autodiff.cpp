#include "multiclip/autodiff.hpp"

#include "multiclip/error.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

namespace multiclip::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::Input, std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                      "x" + std::to_string(a.cols()) + " vs " +
                                      std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

inline bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }
inline Mat& gbuf(Node& n, std::size_t i) { return n.inputs[i]->grad_buffer(); }

}  // namespace

Var constant(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var make_op(Mat value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& v : inputs) {
    if (v.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.node());
    n->backward_fn = std::move(backward);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw Error(ErrorKind::Input, "backward() requires a 1x1 root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward_fn && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var fused_scalar(double value, std::vector<Var> inputs, std::vector<Mat> grads) {
  Mat v(1, 1);
  v(0, 0) = value;
  return make_op(std::move(v), std::move(inputs), [grads = std::move(grads)](Node& n) {
    const double g = n.grad(0, 0);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (wants(n, i)) gbuf(n, i) += g * grads[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::Input, "matmul: inner dimension mismatch");
  Mat out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Mat& A = n.inputs[0]->value;
    const Mat& B = n.inputs[1]->value;
    if (wants(n, 0)) gbuf(n, 0).noalias() += n.grad * B.transpose();
    if (wants(n, 1)) gbuf(n, 1).noalias() += A.transpose() * n.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw Error(ErrorKind::Input, "matmul_nt: inner dimension mismatch");
  Mat out = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Mat& A = n.inputs[0]->value;
    const Mat& B = n.inputs[1]->value;
    if (wants(n, 0)) gbuf(n, 0).noalias() += n.grad * B;
    if (wants(n, 1)) gbuf(n, 1).noalias() += n.grad.transpose() * A;
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b}, [](Node& n) {
    if (wants(n, 0)) gbuf(n, 0) += n.grad;
    if (wants(n, 1)) gbuf(n, 1) += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b}, [](Node& n) {
    if (wants(n, 0)) gbuf(n, 0) += n.grad;
    if (wants(n, 1)) gbuf(n, 1) -= n.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    if (wants(n, 0)) gbuf(n, 0) += n.grad.cwiseProduct(n.inputs[1]->value);
    if (wants(n, 1)) gbuf(n, 1) += n.grad.cwiseProduct(n.inputs[0]->value);
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& n) { gbuf(n, 0) += s * n.grad; });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorKind::Input, "add_row: expected 1x" + std::to_string(a.cols()) + " row");
  }
  Mat out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](Node& n) {
    if (wants(n, 0)) gbuf(n, 0) += n.grad;
    if (wants(n, 1)) gbuf(n, 1) += n.grad.colwise().sum();
  });
}

Var add_constant(const Var& a, double c) {
  return make_op(a.value().array() + c, {a}, [](Node& n) { gbuf(n, 0) += n.grad; });
}

Var transpose(const Var& a) {
  return make_op(a.value().transpose(), {a},
                 [](Node& n) { gbuf(n, 0) += n.grad.transpose(); });
}

Var relu(const Var& a) {
  return make_op(a.value().cwiseMax(0.0), {a}, [](Node& n) {
    gbuf(n, 0).array() += (n.inputs[0]->value.array() > 0.0).select(n.grad.array(), 0.0);
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  Mat out = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  });
  return make_op(std::move(out), {a}, [](Node& n) {
    Mat d = n.inputs[0]->value.unaryExpr([](double x) {
      const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    });
    gbuf(n, 0) += n.grad.cwiseProduct(d);
  });
}

Var sigmoid(const Var& a) {
  Mat out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return make_op(std::move(out), {a}, [](Node& n) {
    gbuf(n, 0) += n.grad.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix()));
  });
}

Var softplus(const Var& a) {
  Mat out = a.value().unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return make_op(std::move(out), {a}, [](Node& n) {
    Mat s = n.inputs[0]->value.unaryExpr([](double x) {
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    gbuf(n, 0) += n.grad.cwiseProduct(s);
  });
}

Var softmax_rows(const Var& a) {
  Mat out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    const Mat& y = n.value;
    Vec dot = n.grad.cwiseProduct(y).rowwise().sum();
    Mat gx = y.cwiseProduct((n.grad.colwise() - dot));
    gbuf(n, 0) += gx;
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index cols = a.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols) {
    throw Error(ErrorKind::Input, "layer_norm_rows: gamma/beta shape mismatch");
  }
  const Mat& x = a.value();
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec inv_std = ((centered.array().square().rowwise().sum() / static_cast<double>(cols)) + eps)
                    .rsqrt()
                    .matrix();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
  return make_op(std::move(out), {a, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), cols](Node& n) {
                   const Mat& dy = n.grad;
                   if (wants(n, 1)) gbuf(n, 1) += dy.cwiseProduct(xhat).colwise().sum();
                   if (wants(n, 2)) gbuf(n, 2) += dy.colwise().sum();
                   if (wants(n, 0)) {
                     Mat dxhat = dy.array().rowwise() * n.inputs[1]->value.row(0).array();
                     Vec m1 = dxhat.rowwise().mean();
                     Vec m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / static_cast<double>(cols);
                     Mat dx = dxhat.colwise() - m1;
                     dx -= (xhat.array().colwise() * m2.array()).matrix();
                     dx = dx.array().colwise() * inv_std.array();
                     gbuf(n, 0) += dx;
                   }
                 });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const Mat& x = a.value();
  Vec norms = x.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) + eps > 0.0)) {
      throw Error(ErrorKind::Numeric, "l2_normalize_rows: zero-norm row");
    }
  }
  Vec denom = norms.array() + eps;
  Mat out = x.array().colwise() / denom.array();
  return make_op(std::move(out), {a}, [denom = std::move(denom)](Node& n) {
    const Mat& y = n.value;
    Vec dot = n.grad.cwiseProduct(y).rowwise().sum();
    Mat gx = n.grad - (y.array().colwise() * dot.array()).matrix();
    gx = gx.array().colwise() / denom.array();
    gbuf(n, 0) += gx;
  });
}

Var mean_rows(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.rows());
  Mat out = a.value().colwise().mean();
  return make_op(std::move(out), {a}, [inv](Node& n) {
    gbuf(n, 0).rowwise() += n.grad.row(0) * inv;
  });
}

Var sum_all(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a}, [](Node& n) { gbuf(n, 0).array() += n.grad(0, 0); });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::Input, "concat_rows: no parts");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error(ErrorKind::Input, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(inputs), [offsets](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (wants(n, i)) gbuf(n, i) += n.grad.middleRows(offsets[i], n.inputs[i]->value.rows());
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::Input, "concat_cols: no parts");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error(ErrorKind::Input, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    offsets.push_back(c);
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(inputs), [offsets](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (wants(n, i)) gbuf(n, i) += n.grad.middleCols(offsets[i], n.inputs[i]->value.cols());
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw Error(ErrorKind::Input, "slice_rows: out of range");
  }
  return make_op(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
    gbuf(n, 0).middleRows(start, count) += n.grad;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorKind::Input, "slice_cols: out of range");
  }
  return make_op(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
    gbuf(n, 0).middleCols(start, count) += n.grad;
  });
}

Var gather_rows(const Var& a, std::span<const Eigen::Index> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw Error(ErrorKind::Input, "gather_rows: bad index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Mat& g = gbuf(n, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var segment_max(const Var& a, std::span<const Eigen::Index> segment, Eigen::Index num_segments) {
  if (static_cast<Eigen::Index>(segment.size()) != a.rows()) {
    throw Error(ErrorKind::Input, "segment_max: segment ids must match rows");
  }
  const Mat& x = a.value();
  const Eigen::Index cols = x.cols();
  Mat out = Mat::Constant(num_segments, cols, -std::numeric_limits<double>::infinity());
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> arg =
      Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>::Constant(num_segments, cols, -1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index s = segment[static_cast<std::size_t>(r)];
    if (s < 0 || s >= num_segments) throw Error(ErrorKind::Input, "segment_max: bad segment id");
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (x(r, c) > out(s, c)) {
        out(s, c) = x(r, c);
        arg(s, c) = r;
      }
    }
  }
  for (Eigen::Index s = 0; s < num_segments; ++s) {
    if (arg(s, 0) < 0) throw Error(ErrorKind::Input, "segment_max: empty segment");
  }
  return make_op(std::move(out), {a}, [arg = std::move(arg)](Node& n) {
    Mat& g = gbuf(n, 0);
    for (Eigen::Index s = 0; s < arg.rows(); ++s) {
      for (Eigen::Index c = 0; c < arg.cols(); ++c) g(arg(s, c), c) += n.grad(s, c);
    }
  });
}

}  // namespace multiclip::ad

#include "multiclip/losses.hpp"

#include "multiclip/error.hpp"

#include <cmath>

namespace multiclip::loss {

double stable_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double log1p_exp(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

namespace {
void require_same(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::Input, std::string(what) + ": shape mismatch");
}
}  // namespace

ValueGrad bce_with_logits_mean(const Mat& logits, const Mat& targets) {
  require_same(logits, targets, "bce_with_logits_mean");
  const double n = static_cast<double>(logits.size());
  ValueGrad out;
  out.grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double x = logits.data()[i];
    const double t = targets.data()[i];
    // -t log s(x) - (1-t) log(1-s(x)) = log(1+e^x) - t x
    total += log1p_exp(x) - t * x;
    out.grad.data()[i] = (stable_sigmoid(x) - t) / n;
  }
  out.value = total / n;
  return out;
}

ValueGrad softmax_cross_entropy(const Mat& logits, Eigen::Index target) {
  if (logits.rows() != 1 || target < 0 || target >= logits.cols()) {
    throw Error(ErrorKind::Input, "softmax_cross_entropy: bad target or shape");
  }
  const double m = logits.maxCoeff();
  Mat e = (logits.array() - m).exp();
  const double z = e.sum();
  ValueGrad out;
  out.value = m + std::log(z) - logits(0, target);
  out.grad = e / z;
  out.grad(0, target) -= 1.0;
  return out;
}

ValueGrad smooth_l1_sum(const Mat& pred, const Mat& target, double beta) {
  require_same(pred, target, "smooth_l1_sum");
  ValueGrad out;
  out.grad.resize(pred.rows(), pred.cols());
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    const double a = std::abs(d);
    if (a < beta) {
      out.value += 0.5 * d * d / beta;
      out.grad.data()[i] = d / beta;
    } else {
      out.value += a - 0.5 * beta;
      out.grad.data()[i] = d > 0 ? 1.0 : -1.0;
    }
  }
  return out;
}

ValueGrad mse_mean(const Mat& pred, const Mat& target) {
  require_same(pred, target, "mse_mean");
  const double n = static_cast<double>(pred.size());
  const Mat d = pred - target;
  return {d.squaredNorm() / n, 2.0 * d / n};
}

ValueGrad quaternion_mse(const Mat& pred, const Mat& target, bool sign_invariant) {
  if (pred.size() != 4 || target.size() != 4) throw Error(ErrorKind::Input, "quaternion_mse: expected 4 components");
  ValueGrad plus = mse_mean(pred, target);
  if (!sign_invariant) return plus;
  ValueGrad minus = mse_mean(-pred, target);
  if (minus.value < plus.value) {
    minus.grad = -minus.grad;
    return minus;
  }
  return plus;
}

ad::Var bce_with_logits_mean(const ad::Var& logits, const Mat& targets) {
  auto r = bce_with_logits_mean(logits.value(), targets);
  return ad::fused_scalar(r.value, {logits}, {std::move(r.grad)});
}

ad::Var softmax_cross_entropy(const ad::Var& logits, Eigen::Index target) {
  auto r = softmax_cross_entropy(logits.value(), target);
  return ad::fused_scalar(r.value, {logits}, {std::move(r.grad)});
}

ad::Var mse_mean(const ad::Var& pred, const Mat& target) {
  auto r = mse_mean(pred.value(), target);
  return ad::fused_scalar(r.value, {pred}, {std::move(r.grad)});
}

ad::Var quaternion_mse(const ad::Var& pred, const Mat& target, bool sign_invariant) {
  auto r = quaternion_mse(pred.value(), target, sign_invariant);
  return ad::fused_scalar(r.value, {pred}, {std::move(r.grad)});
}

}  // namespace multiclip::loss

#include "multiclip/contrastive.hpp"

#include "multiclip/error.hpp"

#include <cmath>

namespace multiclip {

namespace {

void check_inputs(const Mat& a, const Mat& p) {
  if (a.rows() < 1 || a.rows() != p.rows() || a.cols() != p.cols()) {
    throw Error(ErrorKind::Input, "alignment batch: anchors and positives must be equal-shaped with B >= 1");
  }
  if (!a.allFinite() || !p.allFinite()) throw Error(ErrorKind::Numeric, "alignment batch contains non-finite values");
}

}  // namespace

ContrastiveValue contrastive_loss(const Mat& anchors, const Mat& positives, double tau) {
  check_inputs(anchors, positives);
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::Input, "temperature must be positive");
  const Eigen::Index b = anchors.rows();
  const Mat sim = anchors * positives.transpose();
  const Mat logits = sim / tau;
  Mat g(b, b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    const double z = e.sum();
    total += m + std::log(z) - logits(i, i);
    g.row(i) = e / z;
    g(i, i) -= 1.0;
  }
  g /= static_cast<double>(b);
  ContrastiveValue out;
  out.value = total / static_cast<double>(b);
  out.grad_anchors = g * positives / tau;
  out.grad_positives = g.transpose() * anchors / tau;
  out.grad_tau = -(g.array() * sim.array()).sum() / (tau * tau);
  return out;
}

ContrastiveValue cosine_alignment_loss(const Mat& anchors, const Mat& positives) {
  check_inputs(anchors, positives);
  const double b = static_cast<double>(anchors.rows());
  ContrastiveValue out;
  out.value = (1.0 - (anchors.array() * positives.array()).rowwise().sum()).sum() / b;
  out.grad_anchors = -positives / b;
  out.grad_positives = -anchors / b;
  return out;
}

Var contrastive_loss(const Var& anchors, const Var& positives, double tau) {
  ContrastiveValue r = contrastive_loss(anchors.value(), positives.value(), tau);
  return ad::fused_scalar(r.value, {anchors, positives}, {std::move(r.grad_anchors), std::move(r.grad_positives)});
}

Var contrastive_loss_log_tau(const Var& anchors, const Var& positives, const Var& log_tau) {
  const double tau = std::exp(log_tau.scalar());
  ContrastiveValue r = contrastive_loss(anchors.value(), positives.value(), tau);
  return ad::fused_scalar(r.value, {anchors, positives, log_tau},
                          {std::move(r.grad_anchors), std::move(r.grad_positives), Mat::Constant(1, 1, tau * r.grad_tau)});
}

Var cosine_alignment_loss(const Var& anchors, const Var& positives) {
  ContrastiveValue r = cosine_alignment_loss(anchors.value(), positives.value());
  return ad::fused_scalar(r.value, {anchors, positives}, {std::move(r.grad_anchors), std::move(r.grad_positives)});
}

}  // namespace multiclip

#pragma once

// Loss kernels with closed-form gradients. Each kernel returns the value and
// the gradient with respect to its prediction input; the ad:: wrappers splice
// them into an autodiff graph.

#include "multiclip/autodiff.hpp"

namespace multiclip::loss {

using ad::Mat;

struct ValueGrad {
  double value = 0.0;
  Mat grad;
};

// Mean over all elements of BCE(sigmoid(logits), targets).
ValueGrad bce_with_logits_mean(const Mat& logits, const Mat& targets);

// -log softmax(logits)[target] for a 1xK row.
ValueGrad softmax_cross_entropy(const Mat& logits, Eigen::Index target);

// Smooth-L1 (Huber with transition at beta) summed over all elements.
ValueGrad smooth_l1_sum(const Mat& pred, const Mat& target, double beta);

// Mean squared error over all elements.
ValueGrad mse_mean(const Mat& pred, const Mat& target);

// MSE over 4 quaternion components. With sign_invariant the loss is
// min(mse(q, t), mse(-q, t)); on an exact tie the +q branch is used.
ValueGrad quaternion_mse(const Mat& pred, const Mat& target, bool sign_invariant);

ad::Var bce_with_logits_mean(const ad::Var& logits, const Mat& targets);
ad::Var softmax_cross_entropy(const ad::Var& logits, Eigen::Index target);
ad::Var mse_mean(const ad::Var& pred, const Mat& target);
ad::Var quaternion_mse(const ad::Var& pred, const Mat& target, bool sign_invariant);

double stable_sigmoid(double x);
double log1p_exp(double x);  // log(1 + e^x) without overflow

}  // namespace multiclip::loss

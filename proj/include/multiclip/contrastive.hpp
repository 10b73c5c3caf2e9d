#pragma once

// Scene-anchored contrastive alignment and the cosine-distance variant.

#include "multiclip/autodiff.hpp"

namespace multiclip {

using ad::Mat;
using ad::Var;

inline constexpr double kDefaultTemperature = 0.07;

struct ContrastiveValue {
  double value = 0.0;
  Mat grad_anchors;
  Mat grad_positives;
  double grad_tau = 0.0;
};

// -(1/B) sum_i log softmax_j(a_i . p_j / tau)[i], stabilized by subtracting
// each row's max. Throws Input on shape mismatch or tau <= 0 and Numeric on
// non-finite input.
ContrastiveValue contrastive_loss(const Mat& anchors, const Mat& positives, double tau);

// (1/B) sum_i (1 - a_i . p_i).
ContrastiveValue cosine_alignment_loss(const Mat& anchors, const Mat& positives);

Var contrastive_loss(const Var& anchors, const Var& positives, double tau);
// Learnable temperature, parameterized as log(tau) (1x1).
Var contrastive_loss_log_tau(const Var& anchors, const Var& positives, const Var& log_tau);
Var cosine_alignment_loss(const Var& anchors, const Var& positives);

}  // namespace multiclip

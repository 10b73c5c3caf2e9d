#pragma once

#include "multiclip/nn.hpp"

#include <vector>

namespace multiclip::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip_norm = 0.0;  // 0 disables global-norm clipping
};

// Adam with L2-style weight decay folded into the gradient. Parameters that
// received no gradient in a step are left untouched.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  void step();
  void zero_grad();
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  long steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  long t_ = 0;
};

// Step schedule: base * factor^(number of milestones <= epoch).
double step_schedule(double base_lr, int epoch, const std::vector<int>& milestones, double factor);

}  // namespace multiclip::nn

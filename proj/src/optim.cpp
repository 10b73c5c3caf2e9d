#include "multiclip/optim.hpp"

#include <cmath>

namespace multiclip::nn {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {}

void Adam::step() {
  ++t_;
  double clip_scale = 1.0;
  if (config_.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (const Parameter* p : params_) {
      if (p->grad().size() != 0) sq += p->grad().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip_norm) clip_scale = config_.grad_clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (Parameter* p : params_) {
    if (p->grad().size() == 0) continue;
    Mat g = p->grad() * clip_scale;
    if (config_.weight_decay != 0.0) g += config_.weight_decay * p->value();
    if (p->adam_m.size() == 0) {
      p->adam_m = Mat::Zero(g.rows(), g.cols());
      p->adam_v = Mat::Zero(g.rows(), g.cols());
    }
    p->adam_m = config_.beta1 * p->adam_m + (1.0 - config_.beta1) * g;
    p->adam_v = config_.beta2 * p->adam_v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const auto m_hat = p->adam_m.array() / bc1;
    const auto v_hat = p->adam_v.array() / bc2;
    p->value().array() -= config_.learning_rate * m_hat / (v_hat.sqrt() + config_.eps);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double step_schedule(double base_lr, int epoch, const std::vector<int>& milestones, double factor) {
  double lr = base_lr;
  for (int m : milestones) {
    if (epoch >= m) lr *= factor;
  }
  return lr;
}

}  // namespace multiclip::nn

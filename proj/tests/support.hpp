#pragma once

// Shared test helpers: finite differences, random fixtures, leaves.

#include "multiclip/nn.hpp"

#include <cmath>
#include <functional>

namespace testing {

using multiclip::ad::Mat;
using multiclip::ad::Var;

inline constexpr double kFdStep = 1e-6;
inline constexpr double kGradTol = 1e-4;

// Central differences of a scalar function of a matrix.
inline Mat numeric_grad(const std::function<double(const Mat&)>& f, const Mat& x, double h = kFdStep) {
  Mat g(x.rows(), x.cols());
  Mat probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = probe.data()[i];
    probe.data()[i] = keep + h;
    const double up = f(probe);
    probe.data()[i] = keep - h;
    const double down = f(probe);
    probe.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Mat& a, const Mat& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

inline Mat random_unit_rows(Eigen::Index rows, Eigen::Index cols, multiclip::Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 1.0);
  return m.rowwise().normalized();
}

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, multiclip::Rng& rng, double sd = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

// Gradient of f at x through autodiff: f receives a leaf that requires grad.
inline Mat autodiff_grad(const std::function<Var(const Var&)>& f, const Mat& x) {
  multiclip::nn::ParameterStore store;
  multiclip::nn::Parameter* p = store.add("x", x);
  multiclip::ad::backward(f(p->var()));
  return p->grad().size() ? p->grad() : Mat::Zero(x.rows(), x.cols());
}

inline double value_of(const std::function<Var(const Var&)>& f, const Mat& x) {
  return f(multiclip::ad::constant(x)).scalar();
}

// Relative error between autodiff and central differences for f at x.
inline double grad_check(const std::function<Var(const Var&)>& f, const Mat& x) {
  const Mat analytic = autodiff_grad(f, x);
  const Mat numeric = numeric_grad([&](const Mat& m) { return value_of(f, m); }, x);
  return relative_error(analytic, numeric);
}

}  // namespace testing

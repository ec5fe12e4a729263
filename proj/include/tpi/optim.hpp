#ifndef TPI_OPTIM_HPP_
#define TPI_OPTIM_HPP_

#include <cmath>

#include "tpi/approximators.hpp"

namespace tpi {

/// p - lr·grad. Returns a new snapshot.
inline ParamVector gd_update(const ParamVector& params, const Vec& grad, double lr) {
  require_dim(grad.size(), params.size(), "gd_update gradient");
  require(lr > 0.0, "gd_update: learning rate must be positive");
  return ParamVector(params.layout, params.values - lr * grad);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  long t = 0;

  static AdamState fresh(Eigen::Index n) { return {Vec::Zero(n), Vec::Zero(n), 0}; }
  bool operator==(const AdamState& o) const {
    return t == o.t && m.size() == o.m.size() && v.size() == o.v.size() &&
           (m.array() == o.m.array()).all() && (v.array() == o.v.array()).all();
  }
};

struct AdamStep {
  ParamVector params;
  AdamState state;
};

/// Bias-corrected Adam step.
inline AdamStep adam_update(const AdamState& state, const ParamVector& params, const Vec& grad,
                            double lr, const AdamConfig& cfg = {}) {
  require_dim(grad.size(), params.size(), "adam_update gradient");
  require(lr > 0.0, "adam_update: learning rate must be positive");
  AdamState s = state;
  if (s.m.size() == 0) s = AdamState::fresh(params.size());
  require_dim(s.m.size(), params.size(), "adam_update state");
  s.t += 1;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  const Vec step = (s.m / c1).array() / ((s.v / c2).array().sqrt() + cfg.epsilon);
  return {ParamVector(params.layout, params.values - lr * step), std::move(s)};
}

}  // namespace tpi

#endif  // TPI_OPTIM_HPP_

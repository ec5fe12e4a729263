#ifndef TPI_GAME_HPP_
#define TPI_GAME_HPP_

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include "tpi/approximators.hpp"
#include "tpi/parallel.hpp"
#include "tpi/plants.hpp"

namespace tpi {

/// Plant, cost and the three function approximators of a zero-sum game.
struct Game {
  std::shared_ptr<const PlantModel> plant;
  UtilitySpec utility;
  std::shared_ptr<const Approximator> value;
  std::shared_ptr<const Approximator> control;
  std::shared_ptr<const Approximator> disturbance;
  int workers = 1;

  void validate() const {
    require(plant && value && control && disturbance, "Game: missing component");
    const Dimensions d = plant->dims();
    d.validate();
    require_dim(utility.n(), d.n, "utility Q");
    require_dim(utility.m(), d.m, "utility R");
    require_dim(value->input_dim(), d.n, "value input");
    require_dim(value->output_dim(), 1, "value output");
    require_dim(control->input_dim(), d.n, "control input");
    require_dim(control->output_dim(), d.m, "control output");
    require_dim(disturbance->input_dim(), d.n, "disturbance input");
    require_dim(disturbance->output_dim(), d.q, "disturbance output");
    require(workers >= 1, "Game: workers must be >= 1");
  }
};

/// Parameters (ω, θ, η) at one point of training.
struct Snapshot {
  ParamVector value;
  ParamVector control;
  ParamVector disturbance;

  static Snapshot zero_init(const Game& g, std::uint64_t seed) {
    return {g.value->zero_init(seed), g.control->zero_init(seed + 1),
            g.disturbance->zero_init(seed + 2)};
  }
  bool operator==(const Snapshot&) const = default;
};

/// Batch 𝒟 of states (columns) the losses average over.
struct StateSet {
  Mat states;
  long iteration = -1;

  Eigen::Index size() const { return states.cols(); }
  bool empty() const { return states.cols() == 0; }
};

struct LossReport {
  double L_omega = 0.0;
  double L_theta = 0.0;
  double L_eta = 0.0;
  Vec hamiltonian;
};

struct LossGradients {
  Vec omega;
  Vec theta;
  Vec eta;
};

/// Per-sample quantities entering the approximate Hamiltonian.
struct BatchTerms {
  Mat U;      // m×N
  Mat W;      // q×N
  Mat dV;     // n×N, ∂V/∂x
  Mat Xdot;   // n×N
  Vec H;      // N
};

inline BatchTerms evaluate_terms(const Game& g, const Snapshot& s, const Mat& X) {
  BatchTerms t;
  t.U = g.control->eval_batch(s.control, X);
  t.W = g.disturbance->eval_batch(s.disturbance, X);
  t.dV = g.value->value_gradients(s.value, X);
  t.Xdot = g.plant->derivative_batch(X, t.U, t.W);
  t.H.resize(X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    t.H(i) = g.utility(X.col(i), t.U.col(i), t.W.col(i)) + t.dV.col(i).dot(t.Xdot.col(i));
  }
  return t;
}

/// H(x, θ, η, ω) = l(x, u(x;θ), w(x;η)) + ∂V/∂x'·F(x, u, w).
inline double approx_hamiltonian(const Game& g, const Snapshot& s, const Vec& x) {
  require_dim(x.size(), g.plant->dims().n, "hamiltonian state");
  return evaluate_terms(g, s, Mat(x)).H(0);
}

/// Hamiltonian with explicitly chosen actions.
inline double hamiltonian(const Game& g, const ParamVector& value, const Vec& x, const Vec& u,
                          const Vec& w) {
  const Vec dV = g.value->grad_x(value, x);
  return g.utility(x, u, w) + dV.dot(g.plant->derivative(x, u, w));
}

inline Vec batch_hamiltonian(const Game& g, const Snapshot& s, const StateSet& batch) {
  require(!batch.empty(), "empty state set");
  const auto parts = map_chunks(batch.size(), g.workers, [&](Chunk c) {
    return Vec(evaluate_terms(g, s, batch.states.middleCols(c.begin, c.count)).H);
  });
  Vec H(batch.size());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    H.segment(at, p.size()) = p;
    at += p.size();
  }
  return H;
}

/// Mean |H| over the batch.
/// Distance of the batch from the slope jumps of SELU hidden units in any of
/// the three approximators. The losses are only piecewise smooth in the
/// parameters; finite-difference checks need a margin from these points.
inline double kink_margin(const Game& g, const Snapshot& s, const StateSet& batch) {
  double m = std::numeric_limits<double>::infinity();
  const std::pair<const Approximator*, const ParamVector*> parts[] = {
      {g.value.get(), &s.value}, {g.control.get(), &s.control}, {g.disturbance.get(), &s.disturbance}};
  for (const auto& [a, p] : parts) {
    if (const auto* mlp = dynamic_cast<const Mlp*>(a)) m = std::min(m, mlp->kink_margin(*p, batch.states));
  }
  return m;
}

inline double value_loss(const Game& g, const Snapshot& s, const StateSet& batch) {
  return batch_hamiltonian(g, s, batch).cwiseAbs().mean();
}
/// Mean H.
inline double control_loss(const Game& g, const Snapshot& s, const StateSet& batch) {
  return batch_hamiltonian(g, s, batch).mean();
}
/// Mean -H.
inline double disturbance_loss(const Game& g, const Snapshot& s, const StateSet& batch) {
  return -batch_hamiltonian(g, s, batch).mean();
}

inline LossReport loss_report(const Game& g, const Snapshot& s, const StateSet& batch) {
  LossReport r;
  r.hamiltonian = batch_hamiltonian(g, s, batch);
  r.L_omega = r.hamiltonian.cwiseAbs().mean();
  r.L_theta = r.hamiltonian.mean();
  r.L_eta = -r.L_theta;
  return r;
}

namespace detail {

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct ValueChunk {
  Vec grad;
  double abs_h = 0.0;
};

struct PolicyChunk {
  Vec theta;
  Vec eta;
  double h = 0.0;
};

}  // namespace detail

struct ValueGradient {
  Vec grad;
  double loss = 0.0;  // L_ω at the snapshot the gradient was taken
};

/// ∇_ω L_ω = mean sign(H)·∇_ω(∂V/∂x'·F), with sign(0) = 0.
inline ValueGradient value_loss_gradient(const Game& g, const Snapshot& s, const StateSet& batch) {
  require(!batch.empty(), "value_loss_gradient: empty state set");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const auto parts = map_chunks(batch.size(), g.workers, [&](Chunk c) {
    const auto X = batch.states.middleCols(c.begin, c.count);
    const BatchTerms t = evaluate_terms(g, s, X);
    Mat dirs = t.Xdot;
    for (Eigen::Index i = 0; i < dirs.cols(); ++i) dirs.col(i) *= detail::sign0(t.H(i)) * inv_n;
    return detail::ValueChunk{g.value->mixed_grad_batch(s.value, X, dirs), t.H.cwiseAbs().sum()};
  });
  ValueGradient out{Vec::Zero(s.value.size()), 0.0};
  for (const auto& p : parts) {
    out.grad += p.grad;
    out.loss += p.abs_h;
  }
  out.loss *= inv_n;
  return out;
}

struct PolicyGradients {
  Vec theta;
  Vec eta;
  double L_theta = 0.0;
};

/// ∇_θ L_θ = mean ∂H/∂u·∇_θu and ∇_η L_η = -mean ∂H/∂w·∇_ηw, where
/// ∂H/∂u = 2Ru + (∂F/∂u)'∂V/∂x and ∂H/∂w = -2γ²w + (∂F/∂w)'∂V/∂x.
inline PolicyGradients policy_loss_gradients(const Game& g, const Snapshot& s,
                                             const StateSet& batch) {
  require(!batch.empty(), "policy_loss_gradients: empty state set");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double gamma2 = g.utility.gamma() * g.utility.gamma();
  const auto parts = map_chunks(batch.size(), g.workers, [&](Chunk c) {
    const auto X = batch.states.middleCols(c.begin, c.count);
    const BatchTerms t = evaluate_terms(g, s, X);
    Mat cot_u(t.U.rows(), X.cols());
    Mat cot_w(t.W.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
      const Vec x = X.col(i);
      const Vec u = t.U.col(i);
      const Vec w = t.W.col(i);
      const Vec dV = t.dV.col(i);
      cot_u.col(i) = (2.0 * (g.utility.R() * u) +
                      g.plant->control_jacobian(x, u, w).transpose() * dV) * inv_n;
      cot_w.col(i) = -(-2.0 * gamma2 * w +
                       g.plant->disturbance_jacobian(x, u, w).transpose() * dV) * inv_n;
    }
    return detail::PolicyChunk{g.control->param_vjp_batch(s.control, X, cot_u),
                               g.disturbance->param_vjp_batch(s.disturbance, X, cot_w),
                               t.H.sum()};
  });
  PolicyGradients out{Vec::Zero(s.control.size()), Vec::Zero(s.disturbance.size()), 0.0};
  for (const auto& p : parts) {
    out.theta += p.theta;
    out.eta += p.eta;
    out.L_theta += p.h;
  }
  out.L_theta *= inv_n;
  return out;
}

/// All three gradients at one snapshot.
inline LossGradients loss_gradients(const Game& g, const Snapshot& s, const StateSet& batch) {
  ValueGradient v = value_loss_gradient(g, s, batch);
  PolicyGradients p = policy_loss_gradients(g, s, batch);
  return {std::move(v.grad), std::move(p.theta), std::move(p.eta)};
}

/// u = -½R⁻¹g(x)'∂V/∂x.
inline Vec analytic_greedy_control(const Game& g, const ParamVector& value, const Vec& x) {
  if (!g.plant->input_affine()) {
    throw UnsupportedOperation("greedy control requires an input-affine plant");
  }
  const Vec dV = g.value->grad_x(value, x);
  return -0.5 * g.utility.R().llt().solve(g.plant->control_map(x).transpose() * dV);
}

/// w = (1/2γ²)k(x)'∂V/∂x.
inline Vec analytic_greedy_disturbance(const Game& g, const ParamVector& value, const Vec& x) {
  if (!g.plant->input_affine()) {
    throw UnsupportedOperation("greedy disturbance requires an input-affine plant");
  }
  const Vec dV = g.value->grad_x(value, x);
  const double gamma2 = g.utility.gamma() * g.utility.gamma();
  return g.plant->disturbance_map(x).transpose() * dV / (2.0 * gamma2);
}

/// Left side of the HJI equation for each state in the batch.
inline Vec hji_residual(const Approximator& value, const ParamVector& params,
                        const PlantModel& plant, const UtilitySpec& spec, const StateSet& batch) {
  if (!plant.input_affine()) throw UnsupportedOperation("HJI residual requires an input-affine plant");
  require(!batch.empty(), "hji_residual: empty state set");
  const Mat dV = value.value_gradients(params, batch.states);
  const auto R_llt = spec.R().llt();
  const double gamma2 = spec.gamma() * spec.gamma();
  Vec r(batch.size());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const Vec x = batch.states.col(i);
    const Vec gv = plant.control_map(x).transpose() * dV.col(i);
    const Vec kv = plant.disturbance_map(x).transpose() * dV.col(i);
    r(i) = spec.state_cost(x) + dV.col(i).dot(plant.drift(x)) - 0.25 * gv.dot(R_llt.solve(gv)) +
           kv.squaredNorm() / (4.0 * gamma2);
  }
  return r;
}

struct SaddleReport {
  long checks = 0;
  long control_violations = 0;
  long disturbance_violations = 0;

  long violations() const { return control_violations + disturbance_violations; }
  double fraction() const { return checks == 0 ? 0.0 : static_cast<double>(violations()) / checks; }
};

/// Samples perturbations of norm ρ around the policy outputs (u*, w*) and
/// tests H(u*, w*+dw) ≤ H(u*, w*) + tol and H(u*, w*) ≤ H(u*+du, w*) + tol.
/// Each sample contributes two checks.
inline SaddleReport saddle_check(const Game& g, const Snapshot& s, const StateSet& batch,
                                 double rho, int samples_per_state, double tol,
                                 std::uint64_t seed = 0) {
  require(rho >= 0.0, "saddle_check: rho must be non-negative");
  require(samples_per_state >= 1, "saddle_check: need at least one sample");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto direction = [&](Eigen::Index dim) {
    Vec d(dim);
    for (Eigen::Index i = 0; i < dim; ++i) d(i) = normal(rng);
    const double nrm = d.norm();
    return nrm > 0.0 ? Vec(d * (rho / nrm)) : Vec(Vec::Zero(dim));
  };
  SaddleReport rep;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const Vec x = batch.states.col(i);
    const Vec u = g.control->eval(s.control, x);
    const Vec w = g.disturbance->eval(s.disturbance, x);
    const double h0 = hamiltonian(g, s.value, x, u, w);
    for (int k = 0; k < samples_per_state; ++k) {
      const Vec du = direction(u.size());
      const Vec dw = direction(w.size());
      if (!(h0 <= hamiltonian(g, s.value, x, u + du, w) + tol)) ++rep.control_violations;
      if (!(hamiltonian(g, s.value, x, u, w + dw) <= h0 + tol)) ++rep.disturbance_violations;
      rep.checks += 2;
    }
  }
  return rep;
}

}  // namespace tpi

#endif  // TPI_GAME_HPP_

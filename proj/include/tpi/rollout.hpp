#ifndef TPI_ROLLOUT_HPP_
#define TPI_ROLLOUT_HPP_

#include <cstdint>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tpi/game.hpp"

namespace tpi {

struct IntegratorConfig {
  double dt = 0.01;     // s
  int horizon = 10;     // steps per refresh
  int reset_age = 500;  // steps

  void validate() const {
    require(dt > 0.0 && std::isfinite(dt), "integrator: dt must be positive");
    require(horizon >= 1, "integrator: horizon must be >= 1");
    require(reset_age >= 1, "integrator: reset_age must be >= 1");
  }
};

/// One classical RK4 step of x' = F(x, u(x), w(x)); the policies are
/// re-evaluated at every stage state.
template <class ControlFn, class DisturbanceFn>
Vec rk4_step(const PlantModel& plant, const Vec& x, ControlFn&& u_fn, DisturbanceFn&& w_fn,
             double dt) {
  require(dt > 0.0, "rk4_step: dt must be positive");
  auto f = [&](const Vec& s) { return plant.derivative(s, u_fn(s), w_fn(s)); };
  const Vec k1 = f(x);
  const Vec k2 = f(x + 0.5 * dt * k1);
  const Vec k3 = f(x + 0.5 * dt * k2);
  const Vec k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// RK4 for a batch of states (columns) under the snapshot's policies.
inline Mat rk4_step_batch(const Game& g, const Snapshot& s, const Mat& X, double dt) {
  auto f = [&](const Mat& S) {
    return g.plant->derivative_batch(S, g.control->eval_batch(s.control, S),
                                     g.disturbance->eval_batch(s.disturbance, S));
  };
  const Mat k1 = f(X);
  const Mat k2 = f(X + 0.5 * dt * k1);
  const Mat k3 = f(X + 0.5 * dt * k2);
  const Mat k4 = f(X + dt * k3);
  return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Uniform sample from the box; degenerate axes return their bound.
inline Vec sample_reset(const StateBounds& bounds, std::mt19937_64& rng) {
  Vec x(bounds.dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (bounds.lo(i) == bounds.hi(i)) {
      x(i) = bounds.lo(i);
    } else {
      std::uniform_real_distribution<double> d(bounds.lo(i), bounds.hi(i));
      x(i) = d(rng);
    }
  }
  return x;
}

/// Agents sharing one plant; their current states form the state set 𝒟.
class AgentPool {
 public:
  struct Options {
    int agents = 64;
    IntegratorConfig integrator;
    int replay_capacity = 0;  // 0: 𝒟 is the current agent states only
  };

  AgentPool(StateBounds bounds, Options opt, std::uint64_t seed)
      : bounds_(std::move(bounds)), opt_(opt) {
    require(opt_.agents >= 1, "AgentPool: need at least one agent");
    require(opt_.replay_capacity >= 0, "AgentPool: replay capacity must be >= 0");
    opt_.integrator.validate();
    states_.resize(bounds_.dim(), opt_.agents);
    ages_.assign(opt_.agents, 0);
    rngs_.reserve(opt_.agents);
    for (int i = 0; i < opt_.agents; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(i), 0x7a11u};
      rngs_.emplace_back(seq);
      states_.col(i) = sample_reset(bounds_, rngs_.back());
    }
  }

  int size() const { return opt_.agents; }
  const Mat& states() const { return states_; }
  const std::vector<long>& ages() const { return ages_; }
  const Options& options() const { return opt_; }
  const StateBounds& bounds() const { return bounds_; }
  long resets() const { return resets_; }

  /// Optional per-step trace: iteration, agent, step, state, u, w.
  void set_trace(std::ostream* out) { trace_ = out; }

  /// Advances every agent `horizon` steps under the snapshot policies and
  /// returns the resulting 𝒟. Agents that leave Ω, go non-finite, or exceed
  /// the age limit are re-sampled from the reset distribution.
  StateSet refresh(const Game& g, const Snapshot& s, long iteration) {
    const double dt = opt_.integrator.dt;
    for (int step = 0; step < opt_.integrator.horizon; ++step) {
      const auto parts = map_chunks(states_.cols(), g.workers, [&](Chunk c) {
        return Mat(rk4_step_batch(g, s, states_.middleCols(c.begin, c.count), dt));
      });
      Eigen::Index at = 0;
      for (const auto& p : parts) {
        states_.middleCols(at, p.cols()) = p;
        at += p.cols();
      }
      if (trace_) write_trace(g, s, iteration, step);
      int non_finite = 0;
      for (int i = 0; i < opt_.agents; ++i) {
        ++ages_[i];
        const bool finite = states_.col(i).allFinite();
        if (!finite) ++non_finite;
        if (!finite || !bounds_.contains(states_.col(i)) || ages_[i] >= opt_.integrator.reset_age) {
          states_.col(i) = sample_reset(bounds_, rngs_[i]);
          ages_[i] = 0;
          ++resets_;
        }
      }
      if (non_finite == opt_.agents) {
        throw DivergenceError("all agents diverged during rollout", iteration);
      }
    }
    StateSet out;
    out.iteration = iteration;
    if (opt_.replay_capacity <= opt_.agents) {
      out.states = states_;
      return out;
    }
    replay_.push_back(states_);
    Eigen::Index total = 0;
    for (const auto& m : replay_) total += m.cols();
    while (total - replay_.front().cols() >= opt_.replay_capacity) {
      total -= replay_.front().cols();
      replay_.erase(replay_.begin());
    }
    out.states.resize(states_.rows(), total);
    Eigen::Index at = 0;
    for (const auto& m : replay_) {
      out.states.middleCols(at, m.cols()) = m;
      at += m.cols();
    }
    return out;
  }

  // Persistence of the full pool state (states, ages, RNG streams, replay).
  struct Saved {
    Mat states;
    std::vector<long> ages;
    std::vector<std::string> rngs;
    std::vector<Mat> replay;
    long resets = 0;
  };

  Saved save() const {
    Saved s{states_, ages_, {}, replay_, resets_};
    for (const auto& r : rngs_) {
      std::ostringstream os;
      os << r;
      s.rngs.push_back(os.str());
    }
    return s;
  }

  void load(const Saved& s) {
    require(s.states.rows() == states_.rows() && s.states.cols() == states_.cols(),
            "AgentPool: saved state shape mismatch");
    require(s.ages.size() == ages_.size() && s.rngs.size() == rngs_.size(),
            "AgentPool: saved agent count mismatch");
    states_ = s.states;
    ages_ = s.ages;
    replay_ = s.replay;
    resets_ = s.resets;
    for (std::size_t i = 0; i < rngs_.size(); ++i) {
      std::istringstream is(s.rngs[i]);
      is >> rngs_[i];
      if (!is) throw UsageError("AgentPool: corrupt RNG state");
    }
  }

 private:
  void write_trace(const Game& g, const Snapshot& s, long iteration, int step) {
    const Mat U = g.control->eval_batch(s.control, states_);
    const Mat W = g.disturbance->eval_batch(s.disturbance, states_);
    for (int i = 0; i < opt_.agents; ++i) {
      *trace_ << iteration << ',' << i << ',' << step;
      for (Eigen::Index r = 0; r < states_.rows(); ++r) *trace_ << ',' << states_(r, i);
      for (Eigen::Index r = 0; r < U.rows(); ++r) *trace_ << ',' << U(r, i);
      for (Eigen::Index r = 0; r < W.rows(); ++r) *trace_ << ',' << W(r, i);
      *trace_ << '\n';
    }
  }

  StateBounds bounds_;
  Options opt_;
  Mat states_;
  std::vector<long> ages_;
  std::vector<std::mt19937_64> rngs_;
  std::vector<Mat> replay_;
  long resets_ = 0;
  std::ostream* trace_ = nullptr;
};

}  // namespace tpi

#endif  // TPI_ROLLOUT_HPP_

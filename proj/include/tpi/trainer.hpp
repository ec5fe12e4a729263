#ifndef TPI_TRAINER_HPP_
#define TPI_TRAINER_HPP_

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tpi/game.hpp"
#include "tpi/optim.hpp"
#include "tpi/rollout.hpp"

namespace tpi {

enum class OptimizerKind { kGradientDescent, kAdam };

struct TrainConfig {
  long iterations = 5000;
  double lr_value = 0.5;
  double lr_control = 1.0;
  double lr_disturbance = 1.0;
  OptimizerKind optimizer = OptimizerKind::kGradientDescent;
  double lr_decay = 1.0;  // per-iteration factor, 1 = constant
  bool ablate_disturbance = false;
  std::optional<double> early_stop_epsilon;
  int inner_steps = 1;
  int control_every = 1;      // control phase runs when k % control_every == 0
  int disturbance_every = 1;  // likewise for the disturbance phase
  int minibatch = 0;          // 0: use all of 𝒟
  bool log_wall_clock = false;
  double value_anchor = 0.0;  // weight of V(x_e)² added to the value loss

  void validate() const {
    require(iterations >= 0, "train: iterations must be >= 0");
    require(lr_value > 0 && lr_control > 0 && lr_disturbance > 0,
            "train: learning rates must be positive");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "train: lr_decay must be in (0, 1]");
    require(!early_stop_epsilon || *early_stop_epsilon > 0.0, "train: epsilon must be positive");
    require(inner_steps >= 1, "train: inner_steps must be >= 1");
    require(control_every >= 1 && disturbance_every >= 1, "train: update ratios must be >= 1");
    require(minibatch >= 0, "train: minibatch must be >= 0");
    require(value_anchor >= 0.0, "train: value_anchor must be >= 0");
  }
};

struct TrainLogRow {
  long iter = 0;
  double loss_value = 0.0;    // L_ω(ω^k, θ^k, η^k)
  double loss_control = 0.0;  // L_θ(ω^{k+1}, θ^k, η^k)
  Vec theta;                  // control parameters after the update (linear policies)
  double lr_omega = 0.0;
  double lr_theta = 0.0;
  double lr_eta = 0.0;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  void append(TrainLogRow row) {
    require(rows.empty() || row.iter > rows.back().iter, "TrainLog: iterations must increase");
    rows.push_back(std::move(row));
  }
};

inline constexpr const char* kTrainLogSchema = "# schema: tpi-trainlog/1";

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_trainlog_header(std::ostream& out, Eigen::Index theta_size) {
  out << kTrainLogSchema << '\n' << "iter,loss_value,loss_control";
  for (Eigen::Index i = 0; i < theta_size; ++i) out << ",theta_" << i;
  out << ",lr_omega,lr_theta,lr_eta,wall_ms\n";
}

inline void write_trainlog_row(std::ostream& out, const TrainLogRow& r) {
  out << r.iter << ',' << format_double(r.loss_value) << ',' << format_double(r.loss_control);
  for (Eigen::Index i = 0; i < r.theta.size(); ++i) out << ',' << format_double(r.theta(i));
  out << ',' << format_double(r.lr_omega) << ',' << format_double(r.lr_theta) << ','
      << format_double(r.lr_eta) << ',' << format_double(r.wall_ms) << '\n';
}

/// True iff max over the batch of |V_curr(x) − V_prev(x)| ≤ ε.
inline bool early_stop_check(const Approximator& value, const ParamVector& prev,
                             const ParamVector& curr, const StateSet& batch, double epsilon) {
  require(epsilon > 0.0, "early_stop_check: epsilon must be positive");
  require(!batch.empty(), "early_stop_check: empty state set");
  const Mat diff = value.eval_batch(curr, batch.states) - value.eval_batch(prev, batch.states);
  return diff.cwiseAbs().maxCoeff() <= epsilon;
}

/// FNV-1a over the raw parameter bytes; used to observe which snapshot a
/// phase saw.
inline std::uint64_t param_hash(const ParamVector& p) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.values.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(p.values.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

enum class Phase { kRollout, kValue, kControl, kDisturbance };

struct PhaseEvent {
  long iteration;
  Phase phase;
  std::uint64_t value_hash;  // hash of the ω the phase evaluated against
};

/// Ternary policy iteration. Each iteration: refresh 𝒟 under (θ^k, η^k);
/// one value step ω^k → ω^{k+1} on L_ω; then control and disturbance steps
/// on L_θ, L_η evaluated at ω^{k+1}. With ablate_disturbance the
/// disturbance phase is skipped and η stays at its initial value.
class Trainer {
 public:
  Trainer(Game game, TrainConfig cfg, AgentPool::Options pool_opt, std::uint64_t seed)
      : game_(std::move(game)), cfg_(cfg),
        pool_(game_.plant->bounds(), pool_opt, seed),
        snap_(Snapshot::zero_init(game_, seed)),
        batch_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
    game_.validate();
    cfg_.validate();
    opt_value_ = AdamState::fresh(snap_.value.size());
    opt_control_ = AdamState::fresh(snap_.control.size());
    opt_disturbance_ = AdamState::fresh(snap_.disturbance.size());
  }

  const Game& game() const { return game_; }
  const TrainConfig& config() const { return cfg_; }
  const Snapshot& snapshot() const { return snap_; }
  const TrainLog& log() const { return log_; }
  const AgentPool& pool() const { return pool_; }
  AgentPool& pool() { return pool_; }
  long iteration() const { return k_; }
  bool stopped_early() const { return stopped_early_; }
  bool finished() const { return k_ >= cfg_.iterations || stopped_early_; }

  void set_observer(std::function<void(const PhaseEvent&)> fn) { observer_ = std::move(fn); }
  void set_row_sink(std::function<void(const TrainLogRow&)> fn) { row_sink_ = std::move(fn); }

  double lr_scale() const { return std::pow(cfg_.lr_decay, static_cast<double>(k_)); }

  /// One full iteration k → k+1.
  void step() {
    require(!finished(), "Trainer: training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const double scale = lr_scale();
    const double lr_w = cfg_.lr_value * scale;
    const double lr_t = cfg_.lr_control * scale;
    const double lr_e = cfg_.lr_disturbance * scale;

    // Step 0: 𝒟 under (θ^k, η^k).
    notify(Phase::kRollout);
    StateSet batch = select(pool_.refresh(game_, snap_, k_));

    // Step 1: value phase.
    const ParamVector value_before = snap_.value;
    double loss_value = 0.0;
    for (int i = 0; i < cfg_.inner_steps; ++i) {
      notify(Phase::kValue);
      ValueGradient vg = value_loss_gradient(game_, snap_, batch);
      if (i == 0) loss_value = vg.loss;
      if (cfg_.value_anchor > 0.0) add_anchor(vg.grad);
      check_finite(vg.loss, vg.grad, "value loss");
      snap_.value = apply(snap_.value, vg.grad, lr_w, opt_value_);
    }

    // Step 2: policy phases against ω^{k+1}.
    const bool do_control = k_ % cfg_.control_every == 0;
    const bool do_disturbance = !cfg_.ablate_disturbance && k_ % cfg_.disturbance_every == 0;
    double loss_control = 0.0;
    for (int i = 0; i < cfg_.inner_steps; ++i) {
      if (do_control) notify(Phase::kControl);
      if (do_disturbance) notify(Phase::kDisturbance);
      PolicyGradients pg = policy_loss_gradients(game_, snap_, batch);
      if (i == 0) loss_control = pg.L_theta;
      check_finite(pg.L_theta, pg.theta, "control loss");
      check_finite(pg.L_theta, pg.eta, "disturbance loss");
      // Simultaneous update: both gradients come from the same (θ^k, η^k).
      if (do_control) snap_.control = apply(snap_.control, pg.theta, lr_t, opt_control_);
      if (do_disturbance) {
        snap_.disturbance = apply(snap_.disturbance, pg.eta, lr_e, opt_disturbance_);
      }
    }

    if (cfg_.early_stop_epsilon &&
        early_stop_check(*game_.value, value_before, snap_.value, batch, *cfg_.early_stop_epsilon)) {
      stopped_early_ = true;
    }

    TrainLogRow row;
    row.iter = k_;
    row.loss_value = loss_value;
    row.loss_control = loss_control;
    if (game_.control->kind() == "linear") row.theta = snap_.control.values;
    row.lr_omega = lr_w;
    row.lr_theta = lr_t;
    row.lr_eta = lr_e;
    if (cfg_.log_wall_clock) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
    }
    if (row_sink_) row_sink_(row);
    log_.append(std::move(row));
    ++k_;
  }

  void run(const std::function<void(const Trainer&)>& progress = {}) {
    while (!finished()) {
      step();
      if (progress) progress(*this);
    }
  }

  // Persistence hooks used by checkpoint.hpp.
  struct Saved {
    long k = 0;
    bool stopped_early = false;
    Snapshot snap;
    AdamState opt_value, opt_control, opt_disturbance;
    AgentPool::Saved pool;
    std::string batch_rng;
    TrainLog log;
  };

  Saved save() const {
    std::ostringstream os;
    os << batch_rng_;
    return {k_, stopped_early_, snap_, opt_value_, opt_control_, opt_disturbance_,
            pool_.save(), os.str(), log_};
  }

  void load(const Saved& s) {
    require(s.snap.value.layout == snap_.value.layout &&
                s.snap.control.layout == snap_.control.layout &&
                s.snap.disturbance.layout == snap_.disturbance.layout,
            "Trainer: checkpoint parameter layout does not match the configured approximators");
    k_ = s.k;
    stopped_early_ = s.stopped_early;
    snap_ = s.snap;
    opt_value_ = s.opt_value;
    opt_control_ = s.opt_control;
    opt_disturbance_ = s.opt_disturbance;
    pool_.load(s.pool);
    std::istringstream is(s.batch_rng);
    is >> batch_rng_;
    if (!is) throw UsageError("Trainer: corrupt RNG state");
    log_ = s.log;
  }

 private:
  void notify(Phase phase) {
    if (observer_) observer_({k_, phase, param_hash(snap_.value)});
  }

  StateSet select(StateSet all) {
    if (cfg_.minibatch == 0 || cfg_.minibatch >= all.size()) return all;
    std::uniform_int_distribution<Eigen::Index> pick(0, all.size() - 1);
    StateSet mb;
    mb.iteration = all.iteration;
    mb.states.resize(all.states.rows(), cfg_.minibatch);
    for (int i = 0; i < cfg_.minibatch; ++i) mb.states.col(i) = all.states.col(pick(batch_rng_));
    return mb;
  }

  ParamVector apply(const ParamVector& p, const Vec& grad, double lr, AdamState& state) {
    if (cfg_.optimizer == OptimizerKind::kGradientDescent) return gd_update(p, grad, lr);
    AdamStep s = adam_update(state, p, grad, lr);
    state = std::move(s.state);
    return std::move(s.params);
  }

  // Gradient of value_anchor·V(x_e)², the HJI boundary condition as a penalty.
  void add_anchor(Vec& grad) const {
    const Mat xe = game_.plant->equilibrium();
    const double v = game_.value->eval_batch(snap_.value, xe)(0, 0);
    grad += game_.value->param_vjp_batch(snap_.value, xe,
                                          Mat::Constant(1, 1, 2.0 * cfg_.value_anchor * v));
  }

  void check_finite(double loss, const Vec& grad, const char* what) const {
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw DivergenceError(std::string("non-finite ") + what + " at iteration " +
                                std::to_string(k_),
                            k_);
    }
  }

  Game game_;
  TrainConfig cfg_;
  AgentPool pool_;
  Snapshot snap_;
  AdamState opt_value_, opt_control_, opt_disturbance_;
  std::mt19937_64 batch_rng_;
  TrainLog log_;
  long k_ = 0;
  bool stopped_early_ = false;
  std::function<void(const PhaseEvent&)> observer_;
  std::function<void(const TrainLogRow&)> row_sink_;
};

struct TrainResult {
  Snapshot snapshot;
  TrainLog log;
};

inline TrainResult train(const Game& game, const TrainConfig& cfg,
                         const AgentPool::Options& pool_opt, std::uint64_t seed) {
  Trainer t(game, cfg, pool_opt, seed);
  t.run();
  return {t.snapshot(), t.log()};
}

}  // namespace tpi

#endif  // TPI_TRAINER_HPP_

#ifndef TPI_CONFIG_HPP_
#define TPI_CONFIG_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpi/approximators.hpp"
#include "tpi/game.hpp"
#include "tpi/metrics.hpp"
#include "tpi/plants.hpp"
#include "tpi/rollout.hpp"
#include "tpi/trainer.hpp"

namespace tpi {

/// Invalid run configuration. `field()` is the dotted path of the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::invalid_argument(field.empty() ? msg : field + ": " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

namespace cfg {

using json = nlohmann::json;

/// Object reader that remembers which keys were consumed so leftovers can be
/// rejected.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(at(key), "missing required key");
    seen_.insert(key);
    return j_.at(key);
  }

  Obj obj(const std::string& key) { return Obj(raw(key), at(key)); }

  double num(const std::string& key, std::optional<double> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "missing required key");
    }
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(at(key), "must be finite");
    return d;
  }

  long integer(const std::string& key, std::optional<long> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "missing required key");
    }
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    return v.get<long>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string str(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "missing required key");
    }
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }

  Vec vec(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    if (!out.allFinite()) throw ConfigError(at(key), "values must be finite");
    return out;
  }

  /// Row-major nested array, or a bare number for a 1×1 matrix.
  Mat mat(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number()) return Mat::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty() || !v[0].is_array()) {
      throw ConfigError(at(key), "expected a nested array of rows");
    }
    const std::size_t cols = v[0].size();
    Mat out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < v.size(); ++r) {
      const std::string rp = at(key) + "[" + std::to_string(r) + "]";
      if (!v[r].is_array() || v[r].size() != cols) throw ConfigError(rp, "ragged matrix row");
      for (std::size_t c = 0; c < cols; ++c) {
        if (!v[r][c].is_number()) throw ConfigError(rp, "expected numbers");
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r][c].get<double>();
      }
    }
    if (!out.allFinite()) throw ConfigError(at(key), "values must be finite");
    return out;
  }

  /// Throws on any key that was never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(field, msg);
}

}  // namespace cfg

enum class PlantKind { kLinear, kVehicle };

struct ApproxConfig {
  std::string type;  // quadratic, linear, mlp
  MlpSpec mlp;
  bool normalize_inputs = false;
};

struct MetricsConfig {
  ReferencePath path;
  double duration = 25.0;  // s
  double dt = 0.02;        // s
  double beta_deg = 1.0;
  double beta_min_deg = -10.0;
  double beta_max_deg = 10.0;
  double beta_step_deg = 1.0;
  bool affine_eval = false;
};

/// Fully parsed and validated run description.
struct RunConfig {
  nlohmann::json source;  // as given, embedded in checkpoints

  PlantKind plant_kind = PlantKind::kLinear;
  std::string plant_name;
  Mat A, B, D;
  StateBounds bounds;
  VehicleParams vehicle;
  bool vehicle_affine = true;

  Mat Q, R;
  double gamma = 5.0;
  Vec origin;

  ApproxConfig value, control, disturbance;
  TrainConfig train;
  AgentPool::Options rollout;
  MetricsConfig metrics;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out_dir;

  std::shared_ptr<const PlantModel> make_plant() const {
    if (plant_kind == PlantKind::kVehicle) {
      return std::make_shared<VehiclePlant>(vehicle, vehicle_affine, bounds);
    }
    return std::make_shared<LinearPlant>(A, B, D, bounds);
  }

  UtilitySpec make_utility() const { return UtilitySpec(Q, R, gamma, origin); }

  Game make_game() const {
    Game g{make_plant(), make_utility(), nullptr, nullptr, nullptr, workers};
    const Dimensions d = g.plant->dims();
    g.value = make_approx(value, d.n, 1, g.plant->equilibrium());
    g.control = make_approx(control, d.n, d.m, g.plant->equilibrium());
    g.disturbance = make_approx(disturbance, d.n, d.q, g.plant->equilibrium());
    g.validate();
    return g;
  }

 private:
  std::shared_ptr<const Approximator> make_approx(const ApproxConfig& a, int n, int out,
                                                  const Vec& eq) const {
    if (a.type == "quadratic") return std::make_shared<QuadraticValue>(n);
    if (a.type == "linear") return std::make_shared<LinearPolicy>(n, out);
    MlpSpec s = a.mlp;
    s.input_dim = n;
    s.output_dim = out;
    if (a.normalize_inputs) {
      s.input_offset = eq;
      s.input_scale = (0.5 * (bounds.hi - bounds.lo)).cwiseMax(1e-12);
    }
    if (s.output_scale.size() == 1 && out > 1) s.output_scale = Vec::Constant(out, s.output_scale(0));
    return std::make_shared<Mlp>(s);
  }
};

namespace cfg {

inline Vec range_pair(Obj& o, const std::string& key, double to_internal) {
  const Vec v = o.vec(key);
  check(v.size() == 2, o.at(key), "expected [low, high]");
  check(v(0) <= v(1), o.at(key), "low must not exceed high");
  return v * to_internal;
}

inline void parse_plant(Obj o, RunConfig& rc) {
  const std::string type = o.str("type");
  if (type == "aircraft") {
    rc.plant_kind = PlantKind::kLinear;
    const double hw = o.num("half_width", 0.4);
    check(hw > 0.0, o.at("half_width"), "must be positive");
    const LinearPlant p = aircraft_plant(hw);
    rc.A = p.A();
    rc.B = p.B();
    rc.D = p.D();
    rc.bounds = p.bounds();
  } else if (type == "linear") {
    rc.plant_kind = PlantKind::kLinear;
    rc.A = o.mat("A");
    rc.B = o.mat("B");
    rc.D = o.mat("D");
    const Eigen::Index n = rc.A.rows();
    check(rc.A.cols() == n, o.at("A"), "must be square");
    check(rc.B.rows() == n, o.at("B"), "row count must match A");
    check(rc.D.rows() == n, o.at("D"), "row count must match A");
    if (o.has("half_width")) {
      const Vec hw = o.vec("half_width");
      check(hw.size() == n, o.at("half_width"), "one entry per state expected");
      check((hw.array() > 0.0).all(), o.at("half_width"), "must be positive");
      rc.bounds = StateBounds::symmetric(hw);
    } else {
      rc.bounds = StateBounds::symmetric(Vec::Ones(n));
    }
  } else if (type == "vehicle") {
    rc.plant_kind = PlantKind::kVehicle;
    VehicleParams& p = rc.vehicle;
    p.mass = o.num("mass", p.mass);
    p.a = o.num("a", p.a);
    p.b = o.num("b", p.b);
    p.I_zz = o.num("I_zz", p.I_zz);
    p.C_f = o.num("C_f", p.C_f);
    p.C_r = o.num("C_r", p.C_r);
    p.g_grav = o.num("g", p.g_grav);
    p.v_des = o.num("v_des", p.v_des);
    check(p.mass > 0.0, o.at("mass"), "must be positive");
    check(p.a > 0.0, o.at("a"), "must be positive");
    check(p.b > 0.0, o.at("b"), "must be positive");
    check(p.I_zz > 0.0, o.at("I_zz"), "must be positive");
    check(p.C_f < 0.0, o.at("C_f"), "cornering stiffness must be negative");
    check(p.C_r < 0.0, o.at("C_r"), "cornering stiffness must be negative");
    check(p.g_grav > 0.0, o.at("g"), "must be positive");
    check(p.v_des > 0.0, o.at("v_des"), "must be positive");
    rc.vehicle_affine = o.boolean("affine", true);
    rc.bounds = VehiclePlant::default_bounds();
    if (o.has("bounds")) {
      Obj b = o.obj("bounds");
      const double d2r = deg2rad(1.0);
      const char* names[] = {"v_x", "v_y", "omega_r_deg", "phi_deg", "y"};
      const double units[] = {1.0, 1.0, d2r, d2r, 1.0};
      for (int i = 0; i < 5; ++i) {
        if (!b.has(names[i])) continue;
        const Vec r = range_pair(b, names[i], units[i]);
        rc.bounds.lo(i) = r(0);
        rc.bounds.hi(i) = r(1);
      }
      b.finish();
    }
    check(rc.bounds.lo(0) <= p.v_des && p.v_des <= rc.bounds.hi(0), o.at("bounds.v_x"),
          "must contain v_des");
    check((rc.bounds.lo.tail(4).array() <= 0.0).all() && (rc.bounds.hi.tail(4).array() >= 0.0).all(),
          o.at("bounds"), "must contain the equilibrium");
  } else {
    throw ConfigError(o.at("type"), "unknown plant type '" + type + "' (aircraft, linear, vehicle)");
  }
  o.finish();
}

inline Mat matrix_or_diag(const json& v, const std::string& path) {
  if (v.is_number()) return Mat::Constant(1, 1, v.get<double>());
  check(v.is_array() && !v.empty(), path, "expected a matrix, diagonal list, or number");
  if (v[0].is_number()) {
    Vec d(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      check(v[i].is_number(), path, "expected numbers");
      d(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return d.asDiagonal();
  }
  json wrap = {{"m", v}};
  Obj tmp(wrap, "");
  try {
    return tmp.mat("m");
  } catch (const ConfigError&) {
    throw ConfigError(path, "expected a square matrix as rows of numbers");
  }
}

inline void parse_utility(Obj o, RunConfig& rc, Eigen::Index n, Eigen::Index m) {
  if (rc.plant_kind == PlantKind::kVehicle) {
    const UtilitySpec def = vehicle_utility(rc.vehicle);
    rc.Q = def.Q();
    rc.R = def.R();
    rc.origin = def.origin();
  } else {
    rc.Q = Mat::Identity(n, n);
    rc.R = Mat::Identity(m, m);
    rc.origin = Vec::Zero(n);
  }
  if (o.has("Q")) rc.Q = matrix_or_diag(o.raw("Q"), o.at("Q"));
  if (o.has("R")) rc.R = matrix_or_diag(o.raw("R"), o.at("R"));
  rc.gamma = o.num("gamma", 5.0);
  check(rc.gamma > 0.0, o.at("gamma"), "must be positive");
  check(rc.Q.rows() == n && rc.Q.cols() == n, o.at("Q"), "must be " + std::to_string(n) + "x" + std::to_string(n));
  check(rc.R.rows() == m && rc.R.cols() == m, o.at("R"), "must be " + std::to_string(m) + "x" + std::to_string(m));
  try {
    UtilitySpec(rc.Q, rc.R, rc.gamma, rc.origin);
  } catch (const std::exception& e) {
    throw ConfigError(o.at("Q/R"), e.what());
  }
  o.finish();
}

inline ApproxConfig parse_approx(Obj o, const std::string& role) {
  ApproxConfig a;
  a.type = o.str("type");
  if (a.type == "quadratic") {
    check(role == "value", o.at("type"), "quadratic is only valid for the value function");
  } else if (a.type == "linear") {
    check(role != "value", o.at("type"), "linear is only valid for policies");
  } else if (a.type == "mlp") {
    MlpSpec& s = a.mlp;
    s.hidden_layers = static_cast<int>(o.integer("hidden_layers", 3));
    s.width = static_cast<int>(o.integer("width", 256));
    check(s.hidden_layers >= 1, o.at("hidden_layers"), "must be >= 1");
    check(s.width >= 1, o.at("width"), "must be >= 1");
    try {
      s.hidden = activation_from_string(o.str("hidden", "selu"));
    } catch (const std::exception& e) {
      throw ConfigError(o.at("hidden"), e.what());
    }
    try {
      s.output = activation_from_string(o.str("output", role == "value" ? "softplus" : "tanh"));
    } catch (const std::exception& e) {
      throw ConfigError(o.at("output"), e.what());
    }
    if (o.has("output_scale")) {
      const json& v = o.raw("output_scale");
      if (v.is_number()) {
        s.output_scale = Vec::Constant(1, v.get<double>());
      } else {
        json wrap = {{"output_scale", v}};
        Obj tmp(wrap, o.at("").substr(0, o.at("").size() - 1));
        s.output_scale = tmp.vec("output_scale");
      }
      check((s.output_scale.array() > 0.0).all(), o.at("output_scale"), "must be positive");
    }
    a.normalize_inputs = o.boolean("normalize_inputs", false);
  } else {
    throw ConfigError(o.at("type"), "unknown approximator type '" + a.type + "' (quadratic, linear, mlp)");
  }
  o.finish();
  return a;
}

inline void parse_train(Obj o, TrainConfig& t) {
  t.iterations = o.integer("iterations", t.iterations);
  t.lr_value = o.num("lr_value", t.lr_value);
  t.lr_control = o.num("lr_control", t.lr_control);
  t.lr_disturbance = o.num("lr_disturbance", t.lr_disturbance);
  const std::string opt = o.str("optimizer", "gd");
  if (opt == "gd") {
    t.optimizer = OptimizerKind::kGradientDescent;
  } else if (opt == "adam") {
    t.optimizer = OptimizerKind::kAdam;
  } else {
    throw ConfigError(o.at("optimizer"), "expected 'gd' or 'adam'");
  }
  t.lr_decay = o.num("lr_decay", t.lr_decay);
  t.ablate_disturbance = o.boolean("ablate_disturbance", false);
  if (o.has("early_stop_epsilon")) t.early_stop_epsilon = o.num("early_stop_epsilon");
  t.inner_steps = static_cast<int>(o.integer("inner_steps", t.inner_steps));
  t.control_every = static_cast<int>(o.integer("control_every", t.control_every));
  t.disturbance_every = static_cast<int>(o.integer("disturbance_every", t.disturbance_every));
  t.minibatch = static_cast<int>(o.integer("minibatch", t.minibatch));
  t.log_wall_clock = o.boolean("log_wall_clock", false);
  t.value_anchor = o.num("value_anchor", t.value_anchor);
  check(t.iterations >= 1, o.at("iterations"), "must be >= 1");
  check(t.lr_value > 0.0, o.at("lr_value"), "must be positive");
  check(t.lr_control > 0.0, o.at("lr_control"), "must be positive");
  check(t.lr_disturbance > 0.0, o.at("lr_disturbance"), "must be positive");
  check(t.lr_decay > 0.0 && t.lr_decay <= 1.0, o.at("lr_decay"), "must be in (0, 1]");
  check(!t.early_stop_epsilon || *t.early_stop_epsilon > 0.0, o.at("early_stop_epsilon"),
        "must be positive");
  check(t.inner_steps >= 1, o.at("inner_steps"), "must be >= 1");
  check(t.control_every >= 1, o.at("control_every"), "must be >= 1");
  check(t.disturbance_every >= 1, o.at("disturbance_every"), "must be >= 1");
  check(t.minibatch >= 0, o.at("minibatch"), "must be >= 0");
  check(t.value_anchor >= 0.0, o.at("value_anchor"), "must be >= 0");
  o.finish();
}

inline void parse_rollout(Obj o, AgentPool::Options& r) {
  r.agents = static_cast<int>(o.integer("agents", r.agents));
  r.integrator.dt = o.num("dt", r.integrator.dt);
  r.integrator.horizon = static_cast<int>(o.integer("horizon", r.integrator.horizon));
  r.integrator.reset_age = static_cast<int>(o.integer("reset_age", r.integrator.reset_age));
  r.replay_capacity = static_cast<int>(o.integer("replay_capacity", r.replay_capacity));
  check(r.agents >= 1, o.at("agents"), "must be >= 1");
  check(r.integrator.dt > 0.0, o.at("dt"), "must be positive");
  check(r.integrator.horizon >= 1, o.at("horizon"), "must be >= 1");
  check(r.integrator.reset_age >= 1, o.at("reset_age"), "must be >= 1");
  check(r.replay_capacity >= 0, o.at("replay_capacity"), "must be >= 0");
  o.finish();
}

inline void parse_metrics(Obj o, MetricsConfig& m) {
  if (o.has("path")) {
    Obj p = o.obj("path");
    m.path.period = p.num("period", m.path.period);
    m.path.amplitude = p.num("amplitude", m.path.amplitude);
    m.path.ramp_fraction = p.num("ramp_fraction", m.path.ramp_fraction);
    m.path.return_start = p.num("return_start", m.path.return_start);
    try {
      m.path.validate();
    } catch (const std::exception& e) {
      throw ConfigError(o.at("path"), e.what());
    }
    p.finish();
  }
  m.duration = o.num("duration", m.duration);
  m.dt = o.num("dt", m.dt);
  m.beta_deg = o.num("beta_deg", m.beta_deg);
  m.beta_min_deg = o.num("beta_min_deg", m.beta_min_deg);
  m.beta_max_deg = o.num("beta_max_deg", m.beta_max_deg);
  m.beta_step_deg = o.num("beta_step_deg", m.beta_step_deg);
  m.affine_eval = o.boolean("affine_eval", false);
  check(m.duration > 0.0, o.at("duration"), "must be positive");
  check(m.dt > 0.0 && m.dt <= m.duration, o.at("dt"), "must be positive and below duration");
  check(std::abs(m.beta_deg) < 90.0, o.at("beta_deg"), "must be within (-90, 90)");
  check(m.beta_step_deg > 0.0, o.at("beta_step_deg"), "must be positive");
  check(m.beta_min_deg <= m.beta_max_deg, o.at("beta_min_deg"), "must not exceed beta_max_deg");
  check(m.beta_min_deg > -90.0 && m.beta_max_deg < 90.0, o.at("beta_max_deg"),
        "slope grid must stay within (-90, 90)");
  o.finish();
}

}  // namespace cfg

/// Parses a config document. Every key is validated; unknown keys are errors.
inline RunConfig parse_config(const nlohmann::json& doc) {
  RunConfig rc;
  rc.source = doc;
  cfg::Obj root(doc, "");
  cfg::parse_plant(root.obj("plant"), rc);
  const Eigen::Index n = rc.plant_kind == PlantKind::kVehicle ? 5 : rc.A.rows();
  const Eigen::Index m = rc.plant_kind == PlantKind::kVehicle ? 2 : rc.B.cols();
  if (root.has("utility")) {
    cfg::parse_utility(root.obj("utility"), rc, n, m);
  } else {
    nlohmann::json empty = nlohmann::json::object();
    cfg::parse_utility(cfg::Obj(empty, "utility"), rc, n, m);
  }
  {
    cfg::Obj ap = root.obj("approximators");
    rc.value = cfg::parse_approx(ap.obj("value"), "value");
    rc.control = cfg::parse_approx(ap.obj("control"), "control");
    rc.disturbance = cfg::parse_approx(ap.obj("disturbance"), "disturbance");
    ap.finish();
  }
  if (root.has("train")) cfg::parse_train(root.obj("train"), rc.train);
  if (root.has("rollout")) cfg::parse_rollout(root.obj("rollout"), rc.rollout);
  if (root.has("metrics")) cfg::parse_metrics(root.obj("metrics"), rc.metrics);
  const long seed = root.integer("seed", 0);
  cfg::check(seed >= 0, "seed", "must be non-negative");
  rc.seed = static_cast<std::uint64_t>(seed);
  rc.workers = static_cast<int>(root.integer("workers", 1));
  cfg::check(rc.workers >= 1, "workers", "must be >= 1");
  rc.out_dir = root.str("out_dir", "");
  root.finish();
  try {
    rc.make_game();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("approximators", e.what());
  }
  return rc;
}

/// Parses config text; JSON syntax errors carry the line and column.
inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("syntax error: ") + e.what());
  }
  return parse_config(doc);
}

}  // namespace tpi

#endif  // TPI_CONFIG_HPP_

#ifndef TPI_METRICS_HPP_
#define TPI_METRICS_HPP_

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tpi/approximators.hpp"
#include "tpi/parallel.hpp"
#include "tpi/plants.hpp"

namespace tpi {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

enum class Arm { kTpi, kAblation };

inline std::string to_string(Arm a) { return a == Arm::kTpi ? "TPI" : "DGPI-ablation"; }

struct PrecisionReport {
  double I_phi = 0.0;  // rad
  double I_y = 0.0;    // m
  long N = 0;
  double beta = 0.0;   // rad
  Arm arm = Arm::kTpi;
};

/// RMS of (φ − φ_ref) and (y − y_ref).
inline PrecisionReport control_precision(const std::vector<double>& phi,
                                         const std::vector<double>& phi_ref,
                                         const std::vector<double>& y,
                                         const std::vector<double>& y_ref) {
  require(!phi.empty(), "control_precision: empty trajectory");
  require(phi.size() == phi_ref.size() && phi.size() == y.size() && y.size() == y_ref.size(),
          "control_precision: misaligned samples");
  double sp = 0.0;
  double sy = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    sp += (phi[i] - phi_ref[i]) * (phi[i] - phi_ref[i]);
    sy += (y[i] - y_ref[i]) * (y[i] - y_ref[i]);
  }
  const double n = static_cast<double>(phi.size());
  PrecisionReport r;
  r.I_phi = std::sqrt(sp / n);
  r.I_y = std::sqrt(sy / n);
  r.N = static_cast<long>(phi.size());
  return r;
}

/// Vehicle trajectory in a straight global datum: φ is the absolute yaw, Y the
/// absolute lateral position, X the travelled distance.
struct TrackingTrajectory {
  std::vector<double> t, v_x, v_y, omega_r, phi, Y, X, delta, a_x, w;
  bool diverged = false;

  std::size_t size() const { return t.size(); }
};

inline PrecisionReport control_precision(const TrackingTrajectory& traj, const ReferencePath& path) {
  std::vector<double> phi_ref, y_ref;
  phi_ref.reserve(traj.size());
  y_ref.reserve(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto p = path.query(traj.X[i]);
    phi_ref.push_back(p.phi);
    y_ref.push_back(p.y);
  }
  return control_precision(traj.phi, phi_ref, traj.Y, y_ref);
}

inline constexpr const char* kTrajectorySchema = "# schema: tpi-trajectory/1 (angles in degrees)";

/// t, v_x, v_y, omega_r, phi, y, delta, a_x, w, X, Y with φ and y the
/// tracking errors fed to the controller.
inline void write_trajectory_csv(std::ostream& out, const TrackingTrajectory& traj,
                                 const ReferencePath& path) {
  out << kTrajectorySchema << '\n' << "t,v_x,v_y,omega_r,phi,y,delta,a_x,w,X,Y\n";
  out.precision(10);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto ref = path.query(traj.X[i]);
    out << traj.t[i] << ',' << traj.v_x[i] << ',' << traj.v_y[i] << ',' << traj.omega_r[i] << ','
        << rad2deg(traj.phi[i] - ref.phi) << ',' << traj.Y[i] - ref.y << ','
        << rad2deg(traj.delta[i]) << ',' << traj.a_x[i] << ',' << traj.w[i] << ',' << traj.X[i]
        << ',' << traj.Y[i] << '\n';
  }
}

struct Controller {
  const Approximator* policy = nullptr;
  ParamVector params;

  Vec operator()(const Vec& x) const { return policy->eval(params, x); }
};

struct TrackingOptions {
  double duration = 25.0;  // s
  double dt = 0.02;        // s
  bool affine_mode = false;
  double divergence_limit = 10.0;  // |y error| in m that ends the run
  std::optional<Controller> adversary;  // learned disturbance instead of sin β
};

/// Closed-loop run of the vehicle along the reference path at a fixed road
/// slope β. The controller sees (v_x, v_y, ω_r, φ − φ_ref(X), Y − y_ref(X)).
inline TrackingTrajectory tracking_rollout(const Controller& controller, const VehicleParams& params,
                                           const ReferencePath& path, double beta,
                                           const TrackingOptions& opt = {}) {
  require(opt.dt > 0.0 && opt.duration > 0.0, "tracking_rollout: dt and duration must be positive");
  require(controller.policy && controller.policy->input_dim() == 5 &&
              controller.policy->output_dim() == 2,
          "tracking_rollout: controller must map the 5 vehicle states to (delta, a_x)");
  path.validate();
  const VehiclePlant plant(params, opt.affine_mode, VehiclePlant::default_bounds());

  // Global state (v_x, v_y, ω_r, φ, Y, X).
  using State = Eigen::Matrix<double, 6, 1>;
  auto error_state = [&](const State& s) {
    const auto ref = path.query(s(5));
    Vec e(5);
    e << s(0), s(1), s(2), s(3) - ref.phi, s(4) - ref.y;
    return e;
  };
  auto disturbance = [&](const Vec& e) {
    Vec w(1);
    w(0) = opt.adversary ? (*opt.adversary)(e)(0) : std::sin(beta);
    return w;
  };
  auto rhs = [&](const State& s, Vec* u_out, Vec* w_out) {
    const Vec e = error_state(s);
    const Vec u = controller(e);
    const Vec w = disturbance(e);
    const Vec d = plant.derivative(s.head<5>(), u, w);
    State ds;
    ds.head<5>() = d;
    ds(5) = s(0) * std::cos(s(3)) - s(1) * std::sin(s(3));
    if (u_out) *u_out = u;
    if (w_out) *w_out = w;
    return ds;
  };

  State s;
  s << params.v_des, 0.0, 0.0, path.query(0.0).phi, path.query(0.0).y, 0.0;
  TrackingTrajectory traj;
  const long steps = static_cast<long>(std::llround(opt.duration / opt.dt));
  for (long k = 0; k <= steps; ++k) {
    Vec u, w;
    const State k1 = rhs(s, &u, &w);
    traj.t.push_back(k * opt.dt);
    traj.v_x.push_back(s(0));
    traj.v_y.push_back(s(1));
    traj.omega_r.push_back(s(2));
    traj.phi.push_back(s(3));
    traj.Y.push_back(s(4));
    traj.X.push_back(s(5));
    traj.delta.push_back(u(0));
    traj.a_x.push_back(u(1));
    traj.w.push_back(w(0));
    if (k == steps) break;
    const State k2 = rhs(s + 0.5 * opt.dt * k1, nullptr, nullptr);
    const State k3 = rhs(s + 0.5 * opt.dt * k2, nullptr, nullptr);
    const State k4 = rhs(s + opt.dt * k3, nullptr, nullptr);
    s += (opt.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!s.allFinite() || std::abs(error_state(s)(4)) > opt.divergence_limit) {
      traj.diverged = true;
      break;
    }
  }
  return traj;
}

struct GainReport {
  double ratio = 0.0;     // ∫z'z / ∫w'w
  double integral = 0.0;  // ∫(z'z − γ²w'w)
  double z_energy = 0.0;
  double w_energy = 0.0;
};

/// Simulates from the equilibrium under u = controller(x) and the given
/// disturbance signal, accumulating the objective and disturbance energies.
inline GainReport empirical_gain(const PlantModel& plant, const UtilitySpec& spec,
                                 const std::function<Vec(const Vec&)>& controller,
                                 const std::function<Vec(double)>& disturbance, double horizon,
                                 double dt = 1e-3) {
  require(horizon > 0.0 && dt > 0.0, "empirical_gain: horizon and dt must be positive");
  const Eigen::Index n = plant.dims().n;
  // Augmented state (x, ∫z'z, ∫w'w).
  auto rhs = [&](double t, const Vec& s) {
    const Vec x = s.head(n);
    const Vec u = controller(x);
    const Vec w = disturbance(t);
    Vec ds(n + 2);
    ds.head(n) = plant.derivative(x, u, w);
    ds(n) = spec.objective_output(x, u).squaredNorm();
    ds(n + 1) = w.squaredNorm();
    return ds;
  };
  Vec s = Vec::Zero(n + 2);
  s.head(n) = plant.equilibrium();
  const long steps = static_cast<long>(std::llround(horizon / dt));
  for (long k = 0; k < steps; ++k) {
    const double t = k * dt;
    const Vec k1 = rhs(t, s);
    const Vec k2 = rhs(t + 0.5 * dt, s + 0.5 * dt * k1);
    const Vec k3 = rhs(t + 0.5 * dt, s + 0.5 * dt * k2);
    const Vec k4 = rhs(t + dt, s + dt * k3);
    s += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  GainReport r;
  r.z_energy = s(n);
  r.w_energy = s(n + 1);
  if (!(r.w_energy > 0.0)) throw UsageError("empirical_gain: disturbance has zero energy");
  r.ratio = r.z_energy / r.w_energy;
  r.integral = r.z_energy - spec.gamma() * spec.gamma() * r.w_energy;
  return r;
}

/// Inclusive grid min, min+step, …, max.
inline std::vector<double> beta_grid(double min_deg, double max_deg, double step_deg) {
  require(step_deg > 0.0 && max_deg >= min_deg, "beta_grid: bad range");
  const long n = std::lround((max_deg - min_deg) / step_deg);
  std::vector<double> out;
  for (long i = 0; i <= n; ++i) out.push_back(min_deg + i * step_deg);
  return out;
}

struct SweepRow {
  Arm arm;
  double beta_deg = 0.0;
  double I_phi_deg = 0.0;
  double I_y = 0.0;
  std::string status;  // "ok" or "diverged"
};

struct ArmSummary {
  Arm arm;
  double range_phi_deg = 0.0;
  double range_y = 0.0;
  int ok_points = 0;
  int failed_points = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<ArmSummary> summaries;

  const ArmSummary* summary(Arm a) const {
    for (const auto& s : summaries)
      if (s.arm == a) return &s;
    return nullptr;
  }
};

struct SweepArm {
  Arm arm;
  Controller controller;
};

/// Tracking precision over a grid of slopes for each arm, with per-arm
/// ranges (max − min over successful points).
inline SweepResult robustness_sweep(const std::vector<SweepArm>& arms, const VehicleParams& params,
                                    const ReferencePath& path, const std::vector<double>& grid_deg,
                                    const TrackingOptions& opt = {}, int workers = 1) {
  require(!arms.empty(), "robustness_sweep: no arms");
  require(!grid_deg.empty(), "robustness_sweep: empty beta grid");
  SweepResult res;
  for (const auto& a : arms) {
    const auto parts = map_chunks(static_cast<Eigen::Index>(grid_deg.size()), workers, [&](Chunk c) {
      std::vector<SweepRow> rows;
      for (Eigen::Index i = c.begin; i < c.begin + c.count; ++i) {
        SweepRow row{a.arm, grid_deg[i], 0.0, 0.0, "ok"};
        try {
          const auto traj = tracking_rollout(a.controller, params, path, deg2rad(grid_deg[i]), opt);
          const auto rep = control_precision(traj, path);
          row.I_phi_deg = rad2deg(rep.I_phi);
          row.I_y = rep.I_y;
          if (traj.diverged) row.status = "diverged";
        } catch (const std::exception&) {
          row.status = "failed";
        }
        rows.push_back(row);
      }
      return rows;
    });
    ArmSummary sum{a.arm};
    double pmin = 1e300, pmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& part : parts) {
      for (const auto& row : part) {
        res.rows.push_back(row);
        if (row.status != "ok") {
          ++sum.failed_points;
          continue;
        }
        ++sum.ok_points;
        pmin = std::min(pmin, row.I_phi_deg);
        pmax = std::max(pmax, row.I_phi_deg);
        ymin = std::min(ymin, row.I_y);
        ymax = std::max(ymax, row.I_y);
      }
    }
    if (sum.ok_points > 0) {
      sum.range_phi_deg = pmax - pmin;
      sum.range_y = ymax - ymin;
    }
    res.summaries.push_back(sum);
  }
  return res;
}

/// "tpi" when both TPI ranges are strictly smaller, "ablation" when both
/// ablation ranges are, "tie" when both are equal, "mixed" otherwise.
inline std::string sweep_verdict(const ArmSummary& tpi, const ArmSummary& ablation) {
  const bool phi_lt = tpi.range_phi_deg < ablation.range_phi_deg;
  const bool y_lt = tpi.range_y < ablation.range_y;
  if (phi_lt && y_lt) return "tpi";
  if (tpi.range_phi_deg == ablation.range_phi_deg && tpi.range_y == ablation.range_y) return "tie";
  if (ablation.range_phi_deg < tpi.range_phi_deg && ablation.range_y < tpi.range_y) return "ablation";
  return "mixed";
}

inline constexpr const char* kSweepSchema = "# schema: tpi-sweep/1";

inline void write_sweep_csv(std::ostream& out, const SweepResult& res) {
  out << kSweepSchema << '\n' << "arm,beta_deg,I_phi_deg,I_y_m,status\n";
  out.precision(10);
  for (const auto& r : res.rows) {
    out << to_string(r.arm) << ',' << r.beta_deg << ',' << r.I_phi_deg << ',' << r.I_y << ','
        << r.status << '\n';
  }
}

}  // namespace tpi

#endif  // TPI_METRICS_HPP_

// Command-line front end: train, gare, eval, sweep.

#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tpi/alloc.hpp"
#include "tpi/checkpoint.hpp"
#include "tpi/config.hpp"
#include "tpi/metrics.hpp"
#include "tpi/riccati.hpp"
#include "tpi/run.hpp"
#include "tpi/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string default_out_dir() {
  const char* env = std::getenv("TPI_OUT_DIR");
  return env && *env ? env : "out";
}

tpi::RunConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return tpi::parse_config_text(ss.str());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  return out;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write to '" + p.string() + "' failed");
}

json mat_json(const tpi::Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vec_json(const tpi::Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::optional<tpi::GareSolution> try_gare(const tpi::RunConfig& rc) {
  if (rc.plant_kind != tpi::PlantKind::kLinear) return std::nullopt;
  try {
    return tpi::solve_gare(rc.A, rc.B, rc.D, rc.Q, rc.R, rc.gamma);
  } catch (const tpi::GareSolveError&) {
    return std::nullopt;
  }
}

// Runs `body` and maps exceptions to exit codes.
template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const tpi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const tpi::CheckpointMismatchError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << '\n';
    return kConfig;
  } catch (const tpi::CheckpointVersionError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kConfig;
  } catch (const tpi::CheckpointIoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const tpi::CheckpointIntegrityError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const tpi::DivergenceError& e) {
    std::cerr << "diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const tpi::GareSolveError& e) {
    std::cerr << "GARE solver failed: " << e.what() << " (residual " << e.residual() << " after "
              << e.iterations() << " iterations)\n";
    return kNumeric;
  } catch (const tpi::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<long> seed;
  std::optional<long> iterations;
  std::optional<int> workers;
  std::string resume;
  bool ablate = false;
  bool trace = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  tpi::RunConfig rc = read_config(a.config);
  // Overrides go into the stored document too so the checkpoint can rebuild the run.
  json doc = rc.source;
  if (a.seed) {
    if (*a.seed < 0) throw tpi::ConfigError("--seed", "must be non-negative");
    doc["seed"] = *a.seed;
  }
  if (a.workers) doc["workers"] = *a.workers;
  if (a.ablate) doc["train"]["ablate_disturbance"] = true;
  if (a.iterations) doc["train"]["iterations"] = *a.iterations;
  rc = tpi::parse_config(doc);

  const std::string out_dir = !a.out.empty() ? a.out : (!rc.out_dir.empty() ? rc.out_dir : default_out_dir());
  ensure_dir(out_dir);
  const tpi::Game game = rc.make_game();
  tpi::Trainer trainer(game, rc.train, rc.rollout, rc.seed);

  if (!a.resume.empty()) {
    const json payload = tpi::load_checkpoint_payload(a.resume);
    if (payload.at("config") != rc.source) {
      throw tpi::CheckpointMismatchError("checkpoint was written for a different config");
    }
    tpi::restore_trainer(trainer, payload);
  }

  auto log = open_out(fs::path(out_dir) / "trainlog.csv");
  std::ofstream trace;
  if (a.trace) {
    trace = open_out(fs::path(out_dir) / "rollout_trace.csv");
    trace << "# schema: tpi-trace/1\niter,agent,step";
    for (int i = 0; i < game.plant->dims().n; ++i) trace << ",x" << i;
    for (int i = 0; i < game.plant->dims().m; ++i) trace << ",u" << i;
    for (int i = 0; i < game.plant->dims().q; ++i) trace << ",w" << i;
    trace << '\n';
    trainer.pool().set_trace(&trace);
  }
  const Eigen::Index theta_cols = game.control->kind() == "linear" ? game.control->layout().total() : 0;
  tpi::write_trainlog_header(log, theta_cols);
  for (const auto& row : trainer.log().rows) tpi::write_trainlog_row(log, row);
  trainer.set_row_sink([&](const tpi::TrainLogRow& r) { tpi::write_trainlog_row(log, r); });

  const auto t0 = std::chrono::steady_clock::now();
  json summary = {{"schema", "tpi-train-summary/1"}, {"seed", rc.seed}, {"workers", rc.workers},
                  {"ablate_disturbance", rc.train.ablate_disturbance}};
  int code = kOk;
  const long every = std::max<long>(1, rc.train.iterations / 20);
  try {
    trainer.run([&](const tpi::Trainer& t) {
      if (!a.quiet && (t.iteration() % every == 0 || t.finished())) {
        const auto& r = t.log().rows.back();
        std::cerr << "iter " << r.iter << "  L_omega " << r.loss_value << "  L_theta "
                  << r.loss_control << '\n';
      }
    });
  } catch (const tpi::DivergenceError& e) {
    std::cerr << "diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
    summary["status"] = "diverged";
    summary["diverged_at"] = e.iteration();
    summary["error"] = e.what();
    code = kNumeric;
  }
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log.flush();
  if (!log) throw IoError("write to trainlog failed");

  summary["iterations"] = trainer.iteration();
  summary["stopped_early"] = trainer.stopped_early();
  summary["runtime_s"] = runtime;
  if (!trainer.log().rows.empty()) {
    summary["final_loss_value"] = trainer.log().rows.back().loss_value;
    summary["final_loss_control"] = trainer.log().rows.back().loss_control;
  }
  if (game.control->kind() == "linear") {
    const tpi::Vec theta = trainer.snapshot().control.values;
    summary["theta"] = vec_json(theta);
    if (auto sol = try_gare(rc)) {
      const tpi::Vec star = Eigen::Map<const tpi::Vec>(sol->theta_star.data(), sol->theta_star.size());
      summary["theta_star"] = vec_json(star);
      summary["theta_rel_error"] = (theta - star).norm() / star.norm();
      if (game.value->kind() == "quadratic") {
        const tpi::Mat P = tpi::QuadraticValue::unpack_weights(trainer.snapshot().value.values, rc.A.rows());
        summary["P"] = mat_json(P);
        summary["P_rel_error"] = (P - sol->P).norm() / sol->P.norm();
      }
    }
  }
  if (code == kOk) {
    summary["status"] = "ok";
    tpi::save_checkpoint((fs::path(out_dir) / "checkpoint.json").string(), trainer, rc.source);
  }
  write_json(fs::path(out_dir) / "summary.json", summary);
  if (!a.quiet) std::cout << summary.dump(2) << '\n';
  return code;
}

int cmd_gare(const std::string& config_path) {
  const tpi::RunConfig rc = read_config(config_path);
  if (rc.plant_kind != tpi::PlantKind::kLinear) {
    std::cerr << "gare: the configured plant is nonlinear; the Riccati solution needs a linear plant\n";
    return kConfig;
  }
  const auto t0 = std::chrono::steady_clock::now();
  tpi::GareSolution sol;
  try {
    sol = tpi::solve_gare(rc.A, rc.B, rc.D, rc.Q, rc.R, rc.gamma);
  } catch (const tpi::GareSolveError& e) {
    json fail = {{"status", "failed"}, {"error", e.what()}, {"residual", e.residual()},
                 {"iterations", e.iterations()}, {"gamma", rc.gamma}};
    std::cout << fail.dump(2) << '\n';
    std::cerr << "GARE solver failed: " << e.what() << " (residual " << e.residual() << ")\n";
    return kNumeric;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json j = {{"status", "ok"},
            {"P", mat_json(sol.P)},
            {"theta_star", mat_json(sol.theta_star)},
            {"eta_star", mat_json(sol.eta_star)},
            {"residual", sol.residual_norm},
            {"iterations", sol.iterations},
            {"gamma", rc.gamma},
            {"runtime_s", secs}};
  std::cout << j.dump(2) << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::optional<double> beta_deg;
  std::optional<double> duration;
  std::optional<double> dt;
  std::string out;
  bool worst_case = false;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.checkpoint)) throw IoError("checkpoint '" + a.checkpoint + "' does not exist");
  const tpi::LoadedRun run = tpi::load_run(a.checkpoint);
  if (run.config.plant_kind != tpi::PlantKind::kVehicle) {
    throw tpi::CheckpointMismatchError("eval tracks the reference path and needs a vehicle checkpoint");
  }
  const auto& m = run.config.metrics;
  tpi::TrackingOptions opt;
  opt.duration = a.duration.value_or(m.duration);
  opt.dt = a.dt.value_or(m.dt);
  opt.affine_mode = m.affine_eval;
  if (!(opt.duration > 0.0) || !(opt.dt > 0.0)) throw tpi::ConfigError("--duration/--dt", "must be positive");
  if (a.worst_case) opt.adversary = tpi::Controller{run.game.disturbance.get(), run.snapshot.disturbance};
  const double beta_deg = a.beta_deg.value_or(m.beta_deg);
  if (!(std::abs(beta_deg) < 90.0)) throw tpi::ConfigError("--beta", "must be within (-90, 90) degrees");

  const auto traj = tpi::tracking_rollout(tpi::controller_of(run), run.config.vehicle, m.path,
                                          tpi::deg2rad(beta_deg), opt);
  const auto rep = tpi::control_precision(traj, m.path);
  const std::string out_dir = !a.out.empty() ? a.out : default_out_dir();
  ensure_dir(out_dir);
  {
    auto out = open_out(fs::path(out_dir) / "trajectory.csv");
    tpi::write_trajectory_csv(out, traj, m.path);
    if (!out) throw IoError("write to trajectory.csv failed");
  }
  double max_y = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    max_y = std::max(max_y, std::abs(traj.Y[i] - m.path.query(traj.X[i]).y));
  }
  json j = {{"schema", "tpi-precision/1"},
            {"beta_deg", beta_deg},
            {"I_phi_deg", tpi::rad2deg(rep.I_phi)},
            {"I_y_m", rep.I_y},
            {"samples", rep.N},
            {"max_abs_y_error_m", max_y},
            {"distance_m", traj.X.empty() ? 0.0 : traj.X.back()},
            {"diverged", traj.diverged},
            {"worst_case", a.worst_case}};
  write_json(fs::path(out_dir) / "precision.json", j);
  std::cout << j.dump(2) << '\n';
  return kOk;
}

struct SweepArgs {
  std::string tpi_ckpt;
  std::string ablation_ckpt;
  std::optional<double> beta_min, beta_max, beta_step;
  std::optional<int> workers;
  std::string out;
};

int cmd_sweep(const SweepArgs& a) {
  std::vector<tpi::SweepArm> arms;
  std::deque<tpi::LoadedRun> runs;  // owns the approximators the arms point at
  auto add = [&](const std::string& path, tpi::Arm arm) {
    if (!fs::exists(path)) throw IoError("checkpoint '" + path + "' does not exist");
    runs.push_back(tpi::load_run(path));
    if (runs.back().config.plant_kind != tpi::PlantKind::kVehicle) {
      throw tpi::CheckpointMismatchError("sweep needs vehicle checkpoints");
    }
    arms.push_back({arm, tpi::controller_of(runs.back())});
  };
  add(a.tpi_ckpt, tpi::Arm::kTpi);
  if (!a.ablation_ckpt.empty()) add(a.ablation_ckpt, tpi::Arm::kAblation);

  const tpi::LoadedRun* first = &runs.front();
  const auto& m = first->config.metrics;
  const auto grid = tpi::beta_grid(a.beta_min.value_or(m.beta_min_deg), a.beta_max.value_or(m.beta_max_deg),
                                   a.beta_step.value_or(m.beta_step_deg));
  tpi::TrackingOptions opt;
  opt.duration = m.duration;
  opt.dt = m.dt;
  opt.affine_mode = m.affine_eval;
  const auto res = tpi::robustness_sweep(arms, first->config.vehicle, m.path, grid, opt,
                                         a.workers.value_or(first->config.workers));

  const std::string out_dir = !a.out.empty() ? a.out : default_out_dir();
  ensure_dir(out_dir);
  {
    auto out = open_out(fs::path(out_dir) / "sweep.csv");
    tpi::write_sweep_csv(out, res);
    if (!out) throw IoError("write to sweep.csv failed");
  }
  json summary = {{"schema", "tpi-sweep-summary/1"}, {"points_per_arm", grid.size()}};
  json arms_j = json::object();
  int ok_total = 0;
  for (const auto& s : res.summaries) {
    arms_j[tpi::to_string(s.arm)] = {{"range_I_phi_deg", s.range_phi_deg},
                                     {"range_I_y_m", s.range_y},
                                     {"ok_points", s.ok_points},
                                     {"failed_points", s.failed_points}};
    ok_total += s.ok_points;
  }
  summary["arms"] = arms_j;
  const auto* t = res.summary(tpi::Arm::kTpi);
  const auto* d = res.summary(tpi::Arm::kAblation);
  summary["verdict"] = (t && d) ? tpi::sweep_verdict(*t, *d) : "single-arm";
  write_json(fs::path(out_dir) / "sweep_summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return ok_total == 0 ? kNumeric : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tpi::tune_allocator();
  CLI::App app{"Ternary policy iteration for zero-sum differential games"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train value, control and disturbance approximators");
  train->add_option("--config", ta.config, "Run config (JSON)")->required();
  train->add_option("--out", ta.out, "Output directory (default: $TPI_OUT_DIR or ./out)");
  train->add_option("--seed", ta.seed, "Override the config seed");
  train->add_option("--iterations", ta.iterations, "Override the iteration count");
  train->add_option("--workers", ta.workers, "Worker threads for rollouts and losses");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint written with this config");
  train->add_flag("--ablate-disturbance", ta.ablate, "Skip the disturbance phase");
  train->add_flag("--trace", ta.trace, "Write every rollout step to rollout_trace.csv");
  train->add_flag("--quiet", ta.quiet, "No progress output");

  std::string gare_config;
  auto* gare = app.add_subcommand("gare", "Solve the game Riccati equation of a linear config");
  gare->add_option("--config", gare_config, "Run config (JSON)")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Track the reference path at a fixed road slope");
  eval->add_option("--checkpoint", ea.checkpoint, "Trained vehicle checkpoint")->required();
  eval->add_option("--beta", ea.beta_deg, "Road slope in degrees (default from config)");
  eval->add_option("--duration", ea.duration, "Simulated time in seconds");
  eval->add_option("--dt", ea.dt, "Integration step in seconds");
  eval->add_option("--out", ea.out, "Output directory (default: $TPI_OUT_DIR or ./out)");
  eval->add_flag("--worst-case", ea.worst_case, "Use the learned disturbance policy instead of the slope");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Tracking precision over a grid of road slopes");
  sweep->add_option("--checkpoint-tpi", sa.tpi_ckpt, "Checkpoint of the full training run")->required();
  sweep->add_option("--checkpoint-ablation", sa.ablation_ckpt, "Checkpoint of the ablated run");
  sweep->add_option("--beta-min", sa.beta_min, "Lowest slope in degrees");
  sweep->add_option("--beta-max", sa.beta_max, "Highest slope in degrees");
  sweep->add_option("--beta-step", sa.beta_step, "Grid step in degrees");
  sweep->add_option("--workers", sa.workers, "Parallel sweep points");
  sweep->add_option("--out", sa.out, "Output directory (default: $TPI_OUT_DIR or ./out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  if (*train) return guarded([&] { return cmd_train(ta); });
  if (*gare) return guarded([&] { return cmd_gare(gare_config); });
  if (*eval) return guarded([&] { return cmd_eval(ea); });
  if (*sweep) return guarded([&] { return cmd_sweep(sa); });
  return kConfig;
}

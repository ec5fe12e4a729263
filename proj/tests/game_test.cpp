#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "tpi/game.hpp"
#include "tpi/optim.hpp"
#include "tpi/riccati.hpp"

namespace {

using tpi::Mat;
using tpi::ParamVector;
using tpi::Vec;

Vec v(std::initializer_list<double> xs) {
  Vec out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out(i++) = x;
  return out;
}

Vec randn(std::mt19937_64& rng, Eigen::Index n, double s = 1.0) {
  std::normal_distribution<double> d(0.0, s);
  Vec x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = d(rng);
  return x;
}

Mat uniform_states(std::mt19937_64& rng, const tpi::StateBounds& b, int N) {
  Mat X(b.dim(), N);
  for (int j = 0; j < N; ++j) {
    for (Eigen::Index i = 0; i < b.dim(); ++i) {
      X(i, j) = std::uniform_real_distribution<double>(b.lo(i), b.hi(i))(rng);
    }
  }
  return X;
}

double rel_err(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(1e-10, std::max(a.norm(), b.norm()));
}

constexpr double kPStar = 0.43050087404306037;  // (-2 + sqrt 7) / 1.5

tpi::Game linear_game(std::shared_ptr<tpi::LinearPlant> plant, const Mat& Q, const Mat& R,
                      double gamma) {
  const int n = plant->dims().n;
  return {plant, tpi::UtilitySpec(Q, R, gamma), std::make_shared<tpi::QuadraticValue>(n),
          std::make_shared<tpi::LinearPolicy>(n, plant->dims().m),
          std::make_shared<tpi::LinearPolicy>(n, plant->dims().q), 1};
}

tpi::Game scalar_game() {
  auto p = std::make_shared<tpi::LinearPlant>(Mat::Constant(1, 1, -1.0), Mat::Constant(1, 1, 1.0),
                                              Mat::Constant(1, 1, 1.0),
                                              tpi::StateBounds::symmetric(v({1.0})));
  return linear_game(p, Mat::Ones(1, 1), Mat::Ones(1, 1), 2.0);
}

tpi::Game aircraft_game() {
  return linear_game(std::make_shared<tpi::LinearPlant>(tpi::aircraft_plant()), Mat::Identity(3, 3),
                     Mat::Identity(1, 1), 5.0);
}

tpi::Game vehicle_game(bool affine, int workers = 1) {
  auto plant = std::make_shared<tpi::VehiclePlant>(tpi::VehicleParams{}, affine);
  const Vec eq = plant->equilibrium();
  const tpi::StateBounds b = plant->bounds();
  auto net = [&](int out, tpi::Activation head, Vec scale) {
    tpi::MlpSpec s;
    s.input_dim = 5;
    s.output_dim = out;
    s.hidden_layers = 2;
    s.width = 6;
    s.output = head;
    s.output_scale = scale;
    s.input_offset = eq;
    s.input_scale = 0.5 * (b.hi - b.lo);
    return std::make_shared<tpi::Mlp>(s);
  };
  return {plant, tpi::vehicle_utility(), net(1, tpi::Activation::kSoftplus, v({1.0})),
          net(2, tpi::Activation::kTanh, v({0.349, 5.0})), net(1, tpi::Activation::kTanh, v({0.17})),
          workers};
}

tpi::Snapshot gare_snapshot(const tpi::Game& g, const tpi::GareSolution& sol) {
  const auto& q = dynamic_cast<const tpi::QuadraticValue&>(*g.value);
  const auto& c = dynamic_cast<const tpi::LinearPolicy&>(*g.control);
  const auto& d = dynamic_cast<const tpi::LinearPolicy&>(*g.disturbance);
  return {q.pack(sol.P), c.from_gain(sol.theta_star), d.from_gain(sol.eta_star)};
}

tpi::Snapshot random_snapshot(const tpi::Game& g, std::mt19937_64& rng, double s) {
  tpi::Snapshot snap = tpi::Snapshot::zero_init(g, rng());
  snap.value.values = randn(rng, snap.value.size(), s);
  snap.control.values = randn(rng, snap.control.size(), s);
  snap.disturbance.values = randn(rng, snap.disturbance.size(), s);
  return snap;
}

TEST(Hamiltonian, ZeroParamsReduceToStateCost) {
  const tpi::Game g = aircraft_game();
  const tpi::Snapshot z = tpi::Snapshot::zero_init(g, 0);
  EXPECT_DOUBLE_EQ(tpi::approx_hamiltonian(g, z, v({0, 0, 0})), 0.0);
  const Vec x = v({0.3, -0.2, 0.1});
  EXPECT_DOUBLE_EQ(tpi::approx_hamiltonian(g, z, x), x.squaredNorm());
}

TEST(Hamiltonian, ScalarSubstitution) {
  const tpi::Game g = scalar_game();
  tpi::Snapshot s = tpi::Snapshot::zero_init(g, 0);
  s.value.values(0) = 1.0;  // V = x²
  EXPECT_DOUBLE_EQ(tpi::approx_hamiltonian(g, s, v({1.0})), -1.0);
}

TEST(Hamiltonian, ScalarSaddleIsZero) {
  const tpi::Game g = scalar_game();
  tpi::Snapshot s = tpi::Snapshot::zero_init(g, 0);
  s.value.values(0) = kPStar;
  s.control.values(0) = -kPStar;
  s.disturbance.values(0) = kPStar / 4.0;
  for (double x : {-1.0, -0.3, 0.0, 0.5, 1.0}) {
    EXPECT_NEAR(tpi::approx_hamiltonian(g, s, v({x})), 0.0, 1e-14);
  }
}

TEST(Losses, KnownValues) {
  // A = -I, Q = I, V = diag(0, 2), zero policies: H = {1, -3} on the unit vectors.
  auto plant = std::make_shared<tpi::LinearPlant>(-Mat::Identity(2, 2), Mat::Ones(2, 1), Mat::Ones(2, 1),
                                                  tpi::StateBounds::symmetric(v({1.0, 1.0})));
  const tpi::Game g = linear_game(plant, Mat::Identity(2, 2), Mat::Ones(1, 1), 2.0);
  tpi::Snapshot s = tpi::Snapshot::zero_init(g, 0);
  s.value = dynamic_cast<const tpi::QuadraticValue&>(*g.value).pack(v({0.0, 2.0}).asDiagonal().toDenseMatrix());
  const tpi::StateSet b{Mat::Identity(2, 2), 0};
  const tpi::LossReport r = tpi::loss_report(g, s, b);
  EXPECT_NEAR(r.hamiltonian(0), 1.0, 1e-14);
  EXPECT_NEAR(r.hamiltonian(1), -3.0, 1e-14);
  EXPECT_NEAR(tpi::value_loss(g, s, b), 2.0, 1e-14);
  EXPECT_NEAR(tpi::control_loss(g, s, b), -1.0, 1e-14);
  EXPECT_NEAR(tpi::disturbance_loss(g, s, b), 1.0, 1e-14);
  EXPECT_THROW(tpi::value_loss(g, s, tpi::StateSet{Mat(2, 0), 0}), tpi::UsageError);
}

TEST(Losses, ZeroHamiltonianHasZeroValueGradient) {
  // sign(0) = 0: a batch sitting at the equilibrium contributes nothing.
  const tpi::Game g = aircraft_game();
  std::mt19937_64 rng(20);
  const tpi::Snapshot s = random_snapshot(g, rng, 0.5);
  const auto vg = tpi::value_loss_gradient(g, s, tpi::StateSet{Mat::Zero(3, 4), 0});
  EXPECT_EQ(vg.loss, 0.0);
  EXPECT_TRUE(vg.grad.isZero(0.0));
}

TEST(Losses, OppositeAndNonNegative) {
  std::mt19937_64 rng(21);
  for (const auto& g : {aircraft_game(), vehicle_game(true), vehicle_game(false)}) {
    for (int t = 0; t < 20; ++t) {
      const tpi::Snapshot s = random_snapshot(g, rng, 0.5);
      const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 17), t};
      const tpi::LossReport r = tpi::loss_report(g, s, b);
      EXPECT_EQ(r.L_theta + r.L_eta, 0.0);
      EXPECT_EQ(tpi::control_loss(g, s, b) + tpi::disturbance_loss(g, s, b), 0.0);
      EXPECT_GE(r.L_omega, 0.0);
    }
  }
}

// Central differences of the scalar losses in each parameter block.
struct FdGrads {
  Vec omega, theta, eta;
};

FdGrads fd_gradients(const tpi::Game& g, tpi::Snapshot s, const tpi::StateSet& b, double h) {
  auto fd = [&](ParamVector& p, auto&& loss) {
    Vec out(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double keep = p.values(k);
      p.values(k) = keep + h;
      const double lp = loss();
      p.values(k) = keep - h;
      const double lm = loss();
      p.values(k) = keep;
      out(k) = (lp - lm) / (2 * h);
    }
    return out;
  };
  FdGrads r;
  r.omega = fd(s.value, [&] { return tpi::value_loss(g, s, b); });
  r.theta = fd(s.control, [&] { return tpi::control_loss(g, s, b); });
  r.eta = fd(s.disturbance, [&] { return tpi::disturbance_loss(g, s, b); });
  return r;
}

void check_loss_gradients(const tpi::Game& g, std::uint64_t seed, int configs, double scale) {
  std::mt19937_64 rng(seed);
  int checked = 0;
  for (int t = 0; t < configs; ++t) {
    const tpi::Snapshot s = random_snapshot(g, rng, scale);
    const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 8), t};
    // |H| and SELU units have kinks; keep samples away from them.
    if (tpi::batch_hamiltonian(g, s, b).cwiseAbs().minCoeff() < 1e-3) continue;
    if (tpi::kink_margin(g, s, b) < 1e-4) continue;
    const tpi::LossGradients an = tpi::loss_gradients(g, s, b);
    const FdGrads fd = fd_gradients(g, s, b, 1e-6);
    EXPECT_LT(rel_err(an.omega, fd.omega), 1e-4) << "config " << t;
    EXPECT_LT(rel_err(an.theta, fd.theta), 1e-4) << "config " << t;
    EXPECT_LT(rel_err(an.eta, fd.eta), 1e-4) << "config " << t;
    ++checked;
  }
  EXPECT_GT(checked, configs * 9 / 10);
}

TEST(LossGradients, FiniteDifferencesLinear) { check_loss_gradients(aircraft_game(), 31, 200, 0.7); }
TEST(LossGradients, FiniteDifferencesVehicleAffine) {
  check_loss_gradients(vehicle_game(true), 32, 200, 0.3);
}
TEST(LossGradients, FiniteDifferencesVehicleRaw) {
  check_loss_gradients(vehicle_game(false), 33, 200, 0.3);
}

TEST(LossGradients, WorkerCountOnlyReordersSums) {
  std::mt19937_64 rng(34);
  const tpi::Game g1 = vehicle_game(true, 1);
  tpi::Game g3 = g1;
  g3.workers = 3;
  const tpi::Snapshot s = random_snapshot(g1, rng, 0.3);
  const tpi::StateSet b{uniform_states(rng, g1.plant->bounds(), 50), 0};
  const auto a = tpi::loss_gradients(g1, s, b);
  const auto c = tpi::loss_gradients(g3, s, b);
  EXPECT_LT(rel_err(a.omega, c.omega), 1e-12);
  EXPECT_LT(rel_err(a.theta, c.theta), 1e-12);
  // Same worker count, same bits.
  const auto c2 = tpi::loss_gradients(g3, s, b);
  EXPECT_TRUE((c.omega.array() == c2.omega.array()).all());
}

TEST(LossGradients, VanishAtGareFixedPoint) {
  const tpi::Game g = aircraft_game();
  const auto sol = tpi::solve_gare(tpi::aircraft_plant().A(), tpi::aircraft_plant().B(),
                                   tpi::aircraft_plant().D(), Mat::Identity(3, 3),
                                   Mat::Identity(1, 1), 5.0);
  const tpi::Snapshot s = gare_snapshot(g, sol);
  std::mt19937_64 rng(35);
  const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 256), 0};
  EXPECT_LE(tpi::value_loss(g, s, b), 1e-8);
  const auto grads = tpi::policy_loss_gradients(g, s, b);
  EXPECT_LT(grads.theta.norm(), 1e-10);
  EXPECT_LT(grads.eta.norm(), 1e-10);
}

TEST(LossGradients, NoControlSignalGivesZeroGradient) {
  // g(x)'∂V/∂x = 0 (V depends only on x1, B acts on x3) and u = 0.
  const tpi::Game g = aircraft_game();
  tpi::Snapshot s = tpi::Snapshot::zero_init(g, 0);
  s.value.values(0) = 1.3;
  std::mt19937_64 rng(36);
  const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 32), 0};
  EXPECT_TRUE(tpi::policy_loss_gradients(g, s, b).theta.isZero());
}

TEST(Hamiltonian, GareFixedPointOverManyStates) {
  const auto air = tpi::aircraft_plant();
  const tpi::Game g = aircraft_game();
  const auto sol = tpi::solve_gare(air.A(), air.B(), air.D(), Mat::Identity(3, 3),
                                   Mat::Identity(1, 1), 5.0);
  const tpi::Snapshot s = gare_snapshot(g, sol);
  std::mt19937_64 rng(37);
  const tpi::StateSet b{uniform_states(rng, air.bounds(), 1000), 0};
  EXPECT_LE(tpi::batch_hamiltonian(g, s, b).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(tpi::hji_residual(*g.value, s.value, *g.plant, g.utility, b).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Hamiltonian, CurvatureInActions) {
  // H is quadratic in (u, w): second differences give 2R and -2γ²I.
  std::mt19937_64 rng(38);
  for (const auto& g : {aircraft_game(), vehicle_game(true)}) {
    const tpi::Snapshot s = random_snapshot(g, rng, 0.4);
    const double gamma2 = g.utility.gamma() * g.utility.gamma();
    for (int t = 0; t < 10; ++t) {
      const Mat X = uniform_states(rng, g.plant->bounds(), 1);
      const Vec x = X.col(0);
      const Vec u = g.control->eval(s.control, x);
      const Vec w = g.disturbance->eval(s.disturbance, x);
      const double h = 1e-3;
      const int m = static_cast<int>(u.size());
      Mat Huu(m, m);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          Vec ei = Vec::Zero(m), ej = Vec::Zero(m);
          ei(i) = h;
          ej(j) = h;
          Huu(i, j) = (tpi::hamiltonian(g, s.value, x, u + ei + ej, w) -
                       tpi::hamiltonian(g, s.value, x, u + ei - ej, w) -
                       tpi::hamiltonian(g, s.value, x, u - ei + ej, w) +
                       tpi::hamiltonian(g, s.value, x, u - ei - ej, w)) /
                      (4 * h * h);
        }
      }
      EXPECT_LT((Huu - 2.0 * g.utility.R()).norm(), 1e-5 * (1.0 + g.utility.R().norm()));
      EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat>(Huu).eigenvalues().minCoeff(), 0.0);
      const Vec e = v({h});
      const double Hww = (tpi::hamiltonian(g, s.value, x, u, w + e) - 2 * tpi::hamiltonian(g, s.value, x, u, w) +
                          tpi::hamiltonian(g, s.value, x, u, w - e)) /
                         (h * h);
      EXPECT_NEAR(Hww, -2.0 * gamma2, 1e-4 * gamma2);
    }
  }
}

TEST(Greedy, ScalarValues) {
  const tpi::Game g = scalar_game();
  ParamVector w = g.value->zero_init(0);
  EXPECT_TRUE(tpi::analytic_greedy_control(g, w, v({0.7})).isZero());
  EXPECT_TRUE(tpi::analytic_greedy_disturbance(g, w, v({0.7})).isZero());
  w.values(0) = kPStar;
  EXPECT_NEAR(tpi::analytic_greedy_control(g, w, v({1.0}))(0), -0.4305, 1e-4);
  EXPECT_NEAR(tpi::analytic_greedy_disturbance(g, w, v({1.0}))(0), 0.1076, 1e-4);
}

TEST(Greedy, MatchesRiccatiGains) {
  const auto air = tpi::aircraft_plant();
  const tpi::Game g = aircraft_game();
  const auto sol = tpi::solve_gare(air.A(), air.B(), air.D(), Mat::Identity(3, 3),
                                   Mat::Identity(1, 1), 5.0);
  const ParamVector w = dynamic_cast<const tpi::QuadraticValue&>(*g.value).pack(sol.P);
  const Vec x = v({0.2, -0.1, 0.3});
  EXPECT_NEAR(tpi::analytic_greedy_control(g, w, x)(0), sol.theta_star.col(0).dot(x), 1e-12);
  EXPECT_NEAR(tpi::analytic_greedy_disturbance(g, w, x)(0), sol.eta_star.col(0).dot(x), 1e-12);
}

TEST(Greedy, NonAffinePlantRejected) {
  const tpi::Game g = vehicle_game(false);
  const ParamVector w = g.value->zero_init(0);
  EXPECT_THROW(tpi::analytic_greedy_control(g, w, g.plant->equilibrium()), tpi::UnsupportedOperation);
  EXPECT_THROW(tpi::hji_residual(*g.value, w, *g.plant, g.utility,
                                 tpi::StateSet{Mat(g.plant->equilibrium()), 0}),
               tpi::UnsupportedOperation);
}

TEST(HjiResidual, ZeroValueIsStateCost) {
  const tpi::Game g = aircraft_game();
  std::mt19937_64 rng(39);
  const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 10), 0};
  const Vec r = tpi::hji_residual(*g.value, g.value->zero_init(0), *g.plant, g.utility, b);
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    EXPECT_NEAR(r(i), b.states.col(i).squaredNorm(), 1e-15);
  }
}

TEST(HjiResidual, ScalarSolution) {
  const tpi::Game g = scalar_game();
  ParamVector w = g.value->zero_init(0);
  w.values(0) = kPStar;
  std::mt19937_64 rng(40);
  const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 100), 0};
  EXPECT_LE(tpi::hji_residual(*g.value, w, *g.plant, g.utility, b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Saddle, ScalarPointHasNoViolations) {
  const tpi::Game g = scalar_game();
  tpi::Snapshot s = tpi::Snapshot::zero_init(g, 0);
  s.value.values(0) = kPStar;
  s.control.values(0) = -kPStar;
  s.disturbance.values(0) = kPStar / 4.0;
  std::mt19937_64 rng(41);
  const tpi::StateSet b{uniform_states(rng, g.plant->bounds(), 100), 0};
  const auto rep = tpi::saddle_check(g, s, b, 0.1, 100, 1e-9, 1);
  EXPECT_EQ(rep.violations(), 0);
  EXPECT_EQ(rep.checks, 2 * 100 * 100);
  // Halving the control breaks the control-side inequality somewhere.
  s.control.values(0) = -0.5 * kPStar;
  EXPECT_GT(tpi::saddle_check(g, s, b, 0.1, 100, 1e-9, 1).fraction(), 0.0);
  EXPECT_EQ(tpi::saddle_check(g, s, b, 0.0, 10, 0.0, 1).violations(), 0);
}

TEST(Optim, GradientDescent) {
  const tpi::ParamLayout l{{{"w", 1, 1}}};
  const ParamVector p(l, v({1.0}));
  EXPECT_EQ(tpi::gd_update(p, v({0.0}), 0.5), p);
  EXPECT_DOUBLE_EQ(tpi::gd_update(p, v({2.0}), 0.5).values(0), 0.0);
  const ParamVector two = tpi::gd_update(tpi::gd_update(p, v({0.3}), 0.1), v({0.7}), 0.1);
  EXPECT_NEAR(two.values(0), tpi::gd_update(p, v({1.0}), 0.1).values(0), 1e-15);
  EXPECT_DOUBLE_EQ(p.values(0), 1.0);
}

TEST(Optim, AdamFirstStep) {
  const tpi::ParamLayout l{{{"w", 2, 1}}};
  const ParamVector p(l, v({1.0, -2.0}));
  tpi::AdamState st;
  const auto zero = tpi::adam_update(st, p, v({0.0, 0.0}), 0.1);
  EXPECT_EQ(zero.params, p);
  tpi::AdamState st2;
  const auto step = tpi::adam_update(st2, p, v({3.0, -0.5}), 0.1);
  EXPECT_NEAR(step.params.values(0), 1.0 - 0.1, 1e-7);
  EXPECT_NEAR(step.params.values(1), -2.0 + 0.1, 1e-7);
  EXPECT_EQ(step.state.t, 1);
  EXPECT_DOUBLE_EQ(p.values(0), 1.0);
}

}  // namespace

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "tpi/plants.hpp"

namespace {

using tpi::Mat;
using tpi::Vec;

Vec v(std::initializer_list<double> xs) {
  Vec out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out(i++) = x;
  return out;
}

tpi::LinearPlant scalar_plant() {
  return tpi::LinearPlant(Mat::Constant(1, 1, -1.0), Mat::Constant(1, 1, 1.0),
                          Mat::Constant(1, 1, 1.0), tpi::StateBounds::symmetric(v({1.0})));
}

TEST(LinearPlant, ScalarDerivative) {
  const auto p = scalar_plant();
  EXPECT_DOUBLE_EQ(p.derivative(v({1}), v({0}), v({0}))(0), -1.0);
  EXPECT_DOUBLE_EQ(p.derivative(v({2}), v({1}), v({0.5}))(0), -0.5);
}

TEST(LinearPlant, DimensionMismatchThrows) {
  const auto p = scalar_plant();
  EXPECT_THROW(p.derivative(v({1, 2}), v({0}), v({0})), tpi::UsageError);
  EXPECT_THROW(p.derivative(v({1}), v({0, 1}), v({0})), tpi::UsageError);
}

TEST(LinearPlant, Superposition) {
  const auto p = tpi::aircraft_plant();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  auto r = [&](int k) {
    Vec x(k);
    for (int i = 0; i < k; ++i) x(i) = n(rng);
    return x;
  };
  for (int t = 0; t < 50; ++t) {
    const Vec x1 = r(3), x2 = r(3), u1 = r(1), u2 = r(1), w1 = r(1), w2 = r(1);
    const double a = n(rng), b = n(rng);
    const Vec lhs = p.derivative(a * x1 + b * x2, a * u1 + b * u2, a * w1 + b * w2);
    const Vec rhs = a * p.derivative(x1, u1, w1) + b * p.derivative(x2, u2, w2);
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
  }
}

TEST(Plants, EquilibriumIsFixedPoint) {
  const auto air = tpi::aircraft_plant();
  EXPECT_EQ(air.derivative(air.equilibrium(), Vec::Zero(1), Vec::Zero(1)).norm(), 0.0);
  for (bool affine : {true, false}) {
    const tpi::VehiclePlant veh({}, affine);
    EXPECT_EQ(veh.derivative(veh.equilibrium(), Vec::Zero(2), Vec::Zero(1)).norm(), 0.0);
  }
}

TEST(Plants, AircraftIsOpenLoopStable) {
  const auto air = tpi::aircraft_plant();
  EXPECT_LT(Eigen::EigenSolver<Mat>(air.A()).eigenvalues().real().maxCoeff(), 0.0);
}

TEST(Utility, Arithmetic) {
  const tpi::UtilitySpec s(Mat::Ones(1, 1), Mat::Ones(1, 1), 5.0);
  EXPECT_DOUBLE_EQ(s(v({0}), v({0}), v({0})), 0.0);
  EXPECT_DOUBLE_EQ(s(v({1}), v({1}), v({1})), -23.0);
}

TEST(Utility, VehicleZeroAtDesiredSpeed) {
  const auto s = tpi::vehicle_utility();
  EXPECT_DOUBLE_EQ(s(v({10, 0, 0, 0, 0}), v({0, 0}), v({0})), 0.0);
  EXPECT_DOUBLE_EQ(s.state_cost(v({12, 0, 0, 0, 0})), 0.5 * 4.0);
}

TEST(Utility, RejectsBadWeights) {
  EXPECT_THROW(tpi::UtilitySpec(Mat::Constant(1, 1, -1.0), Mat::Ones(1, 1), 1.0), tpi::UsageError);
  EXPECT_THROW(tpi::UtilitySpec(Mat::Ones(1, 1), Mat::Zero(1, 1), 1.0), tpi::UsageError);
  Mat asym(2, 2);
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(tpi::UtilitySpec(asym, Mat::Ones(1, 1), 1.0), tpi::UsageError);
  EXPECT_THROW(tpi::UtilitySpec(Mat::Ones(1, 1), Mat::Ones(1, 1), 0.0), tpi::UsageError);
}

TEST(ObjectiveOutput, Examples) {
  const tpi::UtilitySpec s(Mat::Identity(2, 2), Mat::Identity(1, 1), 1.0);
  const Vec z = s.objective_output(v({1, 0}), v({2}));
  EXPECT_TRUE(z.isApprox(v({1, 0, 2})));
  const tpi::UtilitySpec s4(Mat::Constant(1, 1, 4.0), Mat::Ones(1, 1), 1.0);
  EXPECT_NEAR(s4.objective_output(v({3}), v({0}))(0), 6.0, 1e-12);
}

TEST(ObjectiveOutput, MatchesUtilityIdentity) {
  Mat Q(3, 3);
  Q << 2, 0.5, 0, 0.5, 1, 0.2, 0, 0.2, 0.7;
  const tpi::UtilitySpec s(Q, Mat::Constant(1, 1, 0.3), 2.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int t = 0; t < 100; ++t) {
    const Vec x = v({n(rng), n(rng), n(rng)});
    const Vec u = v({n(rng)});
    const Vec w = v({n(rng)});
    const double zz = s.objective_output(x, u).squaredNorm();
    EXPECT_NEAR(s(x, u, w), zz - 4.0 * w.squaredNorm(), 1e-10 * (1.0 + zz));
  }
}

TEST(Vehicle, SlopeEntersLateralAcceleration) {
  const tpi::VehiclePlant p;
  const double beta = 10.0 * std::numbers::pi / 180.0;
  const Vec d = p.derivative(v({10, 0, 0, 0, 0}), v({0, 0}), v({std::sin(beta)}));
  EXPECT_NEAR(d(1), 9.81 * std::sin(beta), 1e-12);
  EXPECT_NEAR(d(1), 1.7034, 1e-4);
  EXPECT_EQ(d(0), 0.0);
  EXPECT_EQ(d(2), 0.0);
}

TEST(Vehicle, ZeroSlopeHasNoDisturbanceContribution) {
  const tpi::VehiclePlant p;
  const Vec x = v({11, 0.3, -0.1, 0.05, 0.4});
  const Vec u = v({0.02, 0.5});
  const Vec a = p.derivative(x, u, v({0}));
  const Vec b = p.derivative(x, u, v({0.1})) - p.disturbance_jacobian(x, u, v({0})) * 0.1;
  EXPECT_LT((a - b).norm(), 1e-12);
}

TEST(Vehicle, AffineAgreesWithRawToSecondOrder) {
  const tpi::VehiclePlant affine({}, true);
  const tpi::VehiclePlant raw({}, false);
  const Vec x = v({10, 0.2, 0.05, 0.02, 0.3});
  const double e1 = (affine.derivative(x, v({0.01, 0}), v({0})) -
                     raw.derivative(x, v({0.01, 0}), v({0})))
                        .norm();
  const double e2 = (affine.derivative(x, v({0.02, 0}), v({0})) -
                     raw.derivative(x, v({0.02, 0}), v({0})))
                        .norm();
  EXPECT_GT(e1, 0.0);
  // Doubling δ roughly quadruples the gap.
  EXPECT_NEAR(e2 / e1, 4.0, 0.6);
}

TEST(Vehicle, JacobiansMatchFiniteDifferences) {
  for (bool affine : {true, false}) {
    const tpi::VehiclePlant p({}, affine);
    const Vec x = v({9, -0.4, 0.1, 0.08, -0.5});
    const Vec u = v({0.05, 1.2});
    const Vec w = v({0.03});
    const Mat J = p.control_jacobian(x, u, w);
    const Mat K = p.disturbance_jacobian(x, u, w);
    const double h = 1e-6;
    for (int j = 0; j < 2; ++j) {
      Vec up = u, um = u;
      up(j) += h;
      um(j) -= h;
      const Vec fd = (p.derivative(x, up, w) - p.derivative(x, um, w)) / (2 * h);
      EXPECT_LT((fd - J.col(j)).norm(), 1e-6) << "affine=" << affine << " j=" << j;
    }
    const Vec fdw = (p.derivative(x, u, w + v({h})) - p.derivative(x, u, w - v({h}))) / (2 * h);
    EXPECT_LT((fdw - K.col(0)).norm(), 1e-6);
  }
}

TEST(Vehicle, AffineModeExposesMaps) {
  const tpi::VehiclePlant affine({}, true);
  const Vec x = v({10, 0.1, 0.0, 0.02, 0.1});
  const Vec u = v({0.03, -0.7});
  const Vec w = v({0.05});
  const Vec rebuilt = affine.drift(x) + affine.control_map(x) * u + affine.disturbance_map(x) * w;
  EXPECT_LT((rebuilt - affine.derivative(x, u, w)).norm(), 1e-12);
  const tpi::VehiclePlant raw({}, false);
  EXPECT_THROW(raw.control_map(x), tpi::UnsupportedOperation);
}

TEST(Vehicle, LowSpeedIsClamped) {
  const tpi::VehiclePlant p;
  const Vec d = p.derivative(v({0.0, 0.5, 0.1, 0, 0}), v({0, 0}), v({0}));
  EXPECT_TRUE(d.allFinite());
  EXPECT_GE(p.clamp_events(), 1u);
}

TEST(VehicleParams, Validation) {
  tpi::VehicleParams bad;
  bad.mass = -1;
  EXPECT_THROW(bad.validate(), tpi::UsageError);
  tpi::VehicleParams bad2;
  bad2.C_f = 100;
  EXPECT_THROW(bad2.validate(), tpi::UsageError);
}

TEST(ReferencePath, ShapeAndPeriodicity) {
  const tpi::ReferencePath path;
  EXPECT_DOUBLE_EQ(path.query(0.0).y, 0.0);
  EXPECT_DOUBLE_EQ(path.query(0.0).phi, 0.0);
  EXPECT_NEAR(path.query(path.period / 4).y, 3.5, 1e-12);
  for (double s : {3.0, 17.5, 42.0, 111.1, 180.0}) {
    EXPECT_NEAR(path.query(s).y, path.query(s + path.period).y, 1e-12);
    EXPECT_NEAR(path.query(s).phi, path.query(s + path.period).phi, 1e-12);
  }
}

TEST(ReferencePath, HeadingMatchesSlope) {
  const tpi::ReferencePath path;
  const double h = 1e-5;
  for (double s = 0.5; s < 400.0; s += 1.7) {
    const double slope = (path.query(s + h).y - path.query(s - h).y) / (2 * h);
    EXPECT_NEAR(path.query(s).phi, std::atan(slope), 1e-6) << "s=" << s;
  }
}

}  // namespace

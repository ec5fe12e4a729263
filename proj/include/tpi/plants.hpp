#ifndef TPI_PLANTS_HPP_
#define TPI_PLANTS_HPP_

#include <atomic>
#include <cmath>
#include <iostream>
#include <memory>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "tpi/types.hpp"

namespace tpi {

struct Dimensions {
  int n = 0;  // state
  int m = 0;  // control
  int q = 0;  // disturbance

  void validate() const {
    require(n > 0 && m > 0 && q > 0, "Dimensions: n, m, q must be positive");
  }
  bool operator==(const Dimensions&) const = default;
};

/// Axis-aligned box used as the operating region Ω.
struct StateBounds {
  Vec lo;
  Vec hi;

  StateBounds() = default;
  StateBounds(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper)) {
    require(lo.size() == hi.size(), "StateBounds: lo/hi size mismatch");
    require(((hi - lo).array() >= 0.0).all(), "StateBounds: lo must be <= hi");
  }

  static StateBounds symmetric(const Vec& half_width) {
    return StateBounds(-half_width, half_width);
  }

  Eigen::Index dim() const { return lo.size(); }

  bool contains(const Vec& x) const {
    return x.size() == lo.size() && (x.array() >= lo.array()).all() &&
           (x.array() <= hi.array()).all();
  }
};

/// Quadratic game cost l(x,u,w) = (x-x0)'Q(x-x0) + u'Ru - γ²w'w, where x0 is
/// the regulation target (the plant equilibrium).
class UtilitySpec {
 public:
  UtilitySpec(Mat Q, Mat R, double gamma, Vec origin = Vec())
      : Q_(std::move(Q)), R_(std::move(R)), gamma_(gamma),
        origin_(std::move(origin)) {
    require(Q_.rows() == Q_.cols() && Q_.rows() > 0, "Q must be square");
    require(R_.rows() == R_.cols() && R_.rows() > 0, "R must be square");
    require(gamma_ > 0.0 && std::isfinite(gamma_), "gamma must be positive");
    if (origin_.size() == 0) origin_ = Vec::Zero(Q_.rows());
    require_dim(origin_.size(), Q_.rows(), "utility origin");
    require((Q_ - Q_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + Q_.cwiseAbs().maxCoeff()),
            "Q must be symmetric");
    require((R_ - R_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + R_.cwiseAbs().maxCoeff()),
            "R must be symmetric");
    sqrt_Q_ = symmetric_sqrt(Q_, /*strict=*/false, "Q");
    sqrt_R_ = symmetric_sqrt(R_, /*strict=*/true, "R");
  }

  const Mat& Q() const { return Q_; }
  const Mat& R() const { return R_; }
  double gamma() const { return gamma_; }
  const Vec& origin() const { return origin_; }
  int n() const { return static_cast<int>(Q_.rows()); }
  int m() const { return static_cast<int>(R_.rows()); }

  double state_cost(const Vec& x) const {
    require_dim(x.size(), Q_.rows(), "utility state");
    const Vec e = x - origin_;
    return e.dot(Q_ * e);
  }

  double operator()(const Vec& x, const Vec& u, const Vec& w) const {
    require_dim(u.size(), R_.rows(), "utility control");
    return state_cost(x) + u.dot(R_ * u) - gamma_ * gamma_ * w.squaredNorm();
  }

  /// z = [√Q (x-x0); √R u], so that z'z = (x-x0)'Q(x-x0) + u'Ru.
  Vec objective_output(const Vec& x, const Vec& u) const {
    require_dim(x.size(), Q_.rows(), "objective state");
    require_dim(u.size(), R_.rows(), "objective control");
    Vec z(Q_.rows() + R_.rows());
    z << sqrt_Q_ * (x - origin_), sqrt_R_ * u;
    return z;
  }

 private:
  static Mat symmetric_sqrt(const Mat& S, bool strict, const char* name) {
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    const double tol = 1e-12 * (1.0 + S.cwiseAbs().maxCoeff());
    const double lo = es.eigenvalues().minCoeff();
    if (strict ? lo <= 0.0 : lo < -tol) {
      throw UsageError(std::string(name) + (strict ? " must be positive definite"
                                                   : " must be positive semidefinite"));
    }
    const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  }

  Mat Q_, R_;
  double gamma_;
  Vec origin_;
  Mat sqrt_Q_, sqrt_R_;
};

/// Dynamics x' = F(x,u,w). Input-affine plants additionally expose
/// F = f(x) + g(x)u + k(x)w.
class PlantModel {
 public:
  virtual ~PlantModel() = default;

  virtual std::string name() const = 0;
  virtual Dimensions dims() const = 0;
  virtual Vec equilibrium() const = 0;
  virtual StateBounds bounds() const = 0;

  virtual Vec derivative(const Vec& x, const Vec& u, const Vec& w) const = 0;
  /// ∂F/∂u, n×m.
  virtual Mat control_jacobian(const Vec& x, const Vec& u, const Vec& w) const = 0;
  /// ∂F/∂w, n×q.
  virtual Mat disturbance_jacobian(const Vec& x, const Vec& u, const Vec& w) const = 0;

  virtual bool input_affine() const = 0;
  virtual Vec drift(const Vec&) const { throw not_affine(); }
  virtual Mat control_map(const Vec&) const { throw not_affine(); }
  virtual Mat disturbance_map(const Vec&) const { throw not_affine(); }

  /// Column-wise derivative for a batch of states.
  virtual Mat derivative_batch(const Mat& X, const Mat& U, const Mat& W) const {
    Mat out(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
      out.col(i) = derivative(X.col(i), U.col(i), W.col(i));
    }
    return out;
  }

 protected:
  void check_args(const Vec& x, const Vec& u, const Vec& w) const {
    const Dimensions d = dims();
    require_dim(x.size(), d.n, "plant state");
    require_dim(u.size(), d.m, "plant control");
    require_dim(w.size(), d.q, "plant disturbance");
  }

 private:
  UnsupportedOperation not_affine() const {
    return UnsupportedOperation(name() + " is not input-affine");
  }
};

/// x' = Ax + Bu + Dw.
class LinearPlant final : public PlantModel {
 public:
  LinearPlant(Mat A, Mat B, Mat D, StateBounds bounds)
      : A_(std::move(A)), B_(std::move(B)), D_(std::move(D)),
        bounds_(std::move(bounds)) {
    require(A_.rows() == A_.cols(), "A must be square");
    require(B_.rows() == A_.rows(), "B must have n rows");
    require(D_.rows() == A_.rows(), "D must have n rows");
    require_dim(bounds_.dim(), A_.rows(), "linear plant bounds");
    dims().validate();
  }

  std::string name() const override { return "linear"; }
  Dimensions dims() const override {
    return {static_cast<int>(A_.rows()), static_cast<int>(B_.cols()),
            static_cast<int>(D_.cols())};
  }
  Vec equilibrium() const override { return Vec::Zero(A_.rows()); }
  StateBounds bounds() const override { return bounds_; }

  Vec derivative(const Vec& x, const Vec& u, const Vec& w) const override {
    check_args(x, u, w);
    return A_ * x + B_ * u + D_ * w;
  }
  Mat control_jacobian(const Vec&, const Vec&, const Vec&) const override { return B_; }
  Mat disturbance_jacobian(const Vec&, const Vec&, const Vec&) const override { return D_; }

  bool input_affine() const override { return true; }
  Vec drift(const Vec& x) const override { return A_ * x; }
  Mat control_map(const Vec&) const override { return B_; }
  Mat disturbance_map(const Vec&) const override { return D_; }

  Mat derivative_batch(const Mat& X, const Mat& U, const Mat& W) const override {
    return A_ * X + B_ * U + D_ * W;
  }

  const Mat& A() const { return A_; }
  const Mat& B() const { return B_; }
  const Mat& D() const { return D_; }

 private:
  Mat A_, B_, D_;
  StateBounds bounds_;
};

/// Short-period aircraft model: state (angle of attack, pitch rate, elevator
/// deflection), elevator voltage input, wind gust on the angle of attack.
inline LinearPlant aircraft_plant(double half_width = 0.4) {
  Mat A(3, 3);
  A << -1.01887, 0.90506, -0.00215,
        0.82225, -1.07741, -0.17555,
        0.0, 0.0, -1.0;
  Mat B(3, 1);
  B << 0.0, 0.0, 1.0;
  Mat D(3, 1);
  D << 1.0, 0.0, 0.0;
  return LinearPlant(A, B, D, StateBounds::symmetric(Vec::Constant(3, half_width)));
}

struct VehicleParams {
  double mass = 1412.0;        // kg
  double a = 1.06;             // m, CG to front axle
  double b = 1.85;             // m, CG to rear axle
  double I_zz = 1536.7;        // kg m^2
  double C_f = -67104.0;       // N/rad
  double C_r = -48431.0;       // N/rad
  double g_grav = 9.81;        // m/s^2
  double v_des = 10.0;         // m/s

  void validate() const {
    require(mass > 0 && a > 0 && b > 0 && I_zz > 0 && g_grav > 0 && v_des > 0,
            "vehicle: mass, a, b, I_zz, g, v_des must be positive");
    require(C_f < 0 && C_r < 0, "vehicle: cornering stiffnesses must be negative");
  }
};

/// Dynamic bicycle model with a road-slope disturbance w = sin(β).
/// State (v_x, v_y, ω_r, φ, y), control (δ, a_x).
class VehiclePlant final : public PlantModel {
 public:
  static constexpr int kState = 5;
  static constexpr int kControl = 2;
  static constexpr int kDisturbance = 1;

  explicit VehiclePlant(VehicleParams params = {}, bool affine_mode = true,
                        StateBounds bounds = default_bounds(), double vx_floor = 1.0)
      : p_(params), affine_(affine_mode), bounds_(std::move(bounds)),
        vx_floor_(vx_floor) {
    p_.validate();
    require(vx_floor_ > 0.0, "vehicle: v_x floor must be positive");
    require_dim(bounds_.dim(), kState, "vehicle bounds");
  }

  static StateBounds default_bounds() {
    Vec lo(5), hi(5);
    lo << 5.0, -2.0, -0.5, -0.35, -3.0;
    hi << 15.0, 2.0, 0.5, 0.35, 3.0;
    return StateBounds(lo, hi);
  }

  std::string name() const override { return affine_ ? "vehicle-affine" : "vehicle"; }
  Dimensions dims() const override { return {kState, kControl, kDisturbance}; }
  Vec equilibrium() const override {
    Vec xe = Vec::Zero(kState);
    xe(0) = p_.v_des;
    return xe;
  }
  StateBounds bounds() const override { return bounds_; }
  bool input_affine() const override { return affine_; }
  bool affine_mode() const { return affine_; }
  const VehicleParams& params() const { return p_; }
  double vx_floor() const { return vx_floor_; }
  std::size_t clamp_events() const { return clamps_.load(std::memory_order_relaxed); }

  Vec derivative(const Vec& x, const Vec& u, const Vec& w) const override {
    check_args(x, u, w);
    const Terms t = terms(x, u(0));
    const double ax = u(1);
    Vec dx(kState);
    if (affine_) {
      dx(0) = ax - p_.C_f * t.slip_f * u(0) / p_.mass + t.vy * t.wr;
      dx(1) = (t.F_yf + t.F_yr) / p_.mass - t.vx * t.wr;
      dx(2) = (p_.a * t.F_yf - p_.b * t.F_yr) / p_.I_zz;
    } else {
      const double sd = std::sin(u(0));
      const double cd = std::cos(u(0));
      dx(0) = ax - t.F_yf * sd / p_.mass + t.vy * t.wr;
      dx(1) = (t.F_yf * cd + t.F_yr) / p_.mass - t.vx * t.wr;
      dx(2) = (p_.a * t.F_yf * cd - p_.b * t.F_yr) / p_.I_zz;
    }
    dx(3) = t.wr;
    dx(4) = x(0) * std::sin(x(3)) + t.vy * std::cos(x(3));
    dx += disturbance_column(x) * w(0);
    return dx;
  }

  Mat control_jacobian(const Vec& x, const Vec& u, const Vec& w) const override {
    check_args(x, u, w);
    const Terms t = terms(x, u(0));
    Mat J = Mat::Zero(kState, kControl);
    if (affine_) {
      J(0, 0) = -p_.C_f * t.slip_f / p_.mass;
      J(1, 0) = -p_.C_f / p_.mass;
      J(2, 0) = -p_.a * p_.C_f / p_.I_zz;
    } else {
      const double sd = std::sin(u(0));
      const double cd = std::cos(u(0));
      J(0, 0) = (p_.C_f * sd - t.F_yf * cd) / p_.mass;
      J(1, 0) = -(p_.C_f * cd + t.F_yf * sd) / p_.mass;
      J(2, 0) = -p_.a * (p_.C_f * cd + t.F_yf * sd) / p_.I_zz;
    }
    J(0, 1) = 1.0;
    return J;
  }

  Mat disturbance_jacobian(const Vec& x, const Vec& u, const Vec& w) const override {
    check_args(x, u, w);
    return disturbance_column(x);
  }

  Vec drift(const Vec& x) const override {
    require_affine();
    return derivative(x, Vec::Zero(kControl), Vec::Zero(kDisturbance));
  }
  Mat control_map(const Vec& x) const override {
    require_affine();
    return control_jacobian(x, Vec::Zero(kControl), Vec::Zero(kDisturbance));
  }
  Mat disturbance_map(const Vec& x) const override {
    require_affine();
    return disturbance_column(x);
  }

 private:
  struct Terms {
    double vx, vy, wr, slip_f, F_yf, F_yr;
  };

  Terms terms(const Vec& x, double delta) const {
    double vx = x(0);
    if (!(vx >= vx_floor_)) {
      if (clamps_.fetch_add(1, std::memory_order_relaxed) == 0) {
        std::clog << "[tpi] vehicle: v_x=" << vx << " below floor " << vx_floor_
                  << ", clamping slip-angle denominator\n";
      }
      vx = vx_floor_;
    }
    Terms t{};
    t.vx = x(0);
    t.vy = x(1);
    t.wr = x(2);
    t.slip_f = (t.vy + p_.a * t.wr) / vx;
    // Slip angles (v_y + aω)/v_x − δ and (v_y − bω)/v_x; with negative
    // stiffnesses the forces oppose the slip.
    t.F_yf = p_.C_f * (t.slip_f - delta);
    t.F_yr = p_.C_r * (t.vy - p_.b * t.wr) / vx;
    return t;
  }

  Mat disturbance_column(const Vec& x) const {
    Mat k = Mat::Zero(kState, 1);
    k(0, 0) = p_.g_grav * std::sin(x(3));
    k(1, 0) = p_.g_grav * std::cos(x(3));
    return k;
  }

  void require_affine() const {
    if (!affine_) throw UnsupportedOperation(name() + " is not input-affine");
  }

  VehicleParams p_;
  bool affine_;
  StateBounds bounds_;
  double vx_floor_;
  mutable std::atomic<std::size_t> clamps_{0};
};

/// Tracking cost for the vehicle: 0.5(v_x-v_des)² + 0.1ω_r² + 36φ² + 20y²
/// + u'diag(0.1, 0.3)u - γ²w².
inline UtilitySpec vehicle_utility(const VehicleParams& p = {}, double gamma = 5.0) {
  Vec q(5);
  q << 0.5, 0.0, 0.1, 36.0, 20.0;
  Vec r(2);
  r << 0.1, 0.3;
  Vec origin = Vec::Zero(5);
  origin(0) = p.v_des;
  return UtilitySpec(q.asDiagonal(), r.asDiagonal(), gamma, origin);
}

/// Periodic double lane change. Within one period the lateral offset rises to
/// `amplitude` over a cosine-blended ramp, holds, and returns to zero.
struct ReferencePath {
  double period = 200.0;         // m
  double amplitude = 3.5;        // m
  double ramp_fraction = 0.15;   // ramp length / period
  double return_start = 0.5;     // start of the return ramp / period

  struct Point {
    double y;    // m
    double phi;  // rad
  };

  void validate() const {
    require(period > 0.0 && std::isfinite(period), "path: period must be positive");
    require(std::isfinite(amplitude), "path: amplitude must be finite");
    require(ramp_fraction > 0.0 && ramp_fraction <= return_start &&
                return_start + ramp_fraction <= 1.0,
            "path: ramps must fit inside one period without overlap");
  }

  Point query(double s) const {
    const double L = ramp_fraction * period;
    double r = std::fmod(s, period);
    if (r < 0.0) r += period;
    const double back = return_start * period;
    double y = 0.0;
    double slope = 0.0;
    if (r < L) {
      y = 0.5 * amplitude * (1.0 - std::cos(std::numbers::pi * r / L));
      slope = 0.5 * amplitude * std::numbers::pi / L * std::sin(std::numbers::pi * r / L);
    } else if (r < back) {
      y = amplitude;
    } else if (r < back + L) {
      const double t = r - back;
      y = 0.5 * amplitude * (1.0 + std::cos(std::numbers::pi * t / L));
      slope = -0.5 * amplitude * std::numbers::pi / L * std::sin(std::numbers::pi * t / L);
    }
    return {y, std::atan(slope)};
  }
};

}  // namespace tpi

#endif  // TPI_PLANTS_HPP_

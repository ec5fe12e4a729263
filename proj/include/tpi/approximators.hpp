#ifndef TPI_APPROXIMATORS_HPP_
#define TPI_APPROXIMATORS_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tpi/types.hpp"

namespace tpi {

/// Named block of a flat parameter array, stored column-major.
struct ParamSegment {
  std::string name;
  int rows = 0;
  int cols = 0;

  int size() const { return rows * cols; }
  bool operator==(const ParamSegment&) const = default;
};

struct ParamLayout {
  std::vector<ParamSegment> segments;

  int total() const {
    int t = 0;
    for (const auto& s : segments) t += s.size();
    return t;
  }
  int offset(std::size_t index) const {
    int o = 0;
    for (std::size_t i = 0; i < index; ++i) o += segments[i].size();
    return o;
  }
  bool operator==(const ParamLayout&) const = default;
};

/// Flat parameter snapshot plus the layout that gives it meaning.
struct ParamVector {
  ParamLayout layout;
  Vec values;

  ParamVector() = default;
  ParamVector(ParamLayout l, Vec v) : layout(std::move(l)), values(std::move(v)) {
    require(layout.total() == values.size(),
            "ParamVector: layout total " + std::to_string(layout.total()) +
                " does not match " + std::to_string(values.size()) + " values");
  }
  static ParamVector zeros(ParamLayout l) {
    const int n = l.total();
    return ParamVector(std::move(l), Vec::Zero(n));
  }

  Eigen::Index size() const { return values.size(); }

  Eigen::Map<const Mat> segment(std::size_t i) const {
    const auto& s = layout.segments.at(i);
    return Eigen::Map<const Mat>(values.data() + layout.offset(i), s.rows, s.cols);
  }
  Eigen::Map<Mat> segment(std::size_t i) {
    const auto& s = layout.segments.at(i);
    return Eigen::Map<Mat>(values.data() + layout.offset(i), s.rows, s.cols);
  }

  bool operator==(const ParamVector& o) const {
    return layout == o.layout && values.size() == o.values.size() &&
           (values.array() == o.values.array()).all();
  }
};

/// Parameterized function y = F(x; p). Parameters are passed in as immutable
/// snapshots; approximator objects only describe the shape.
///
/// Batched methods take states as columns of X (n×N). Gradient methods return
/// sums over the batch columns.
class Approximator {
 public:
  virtual ~Approximator() = default;

  virtual std::string kind() const = 0;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual ParamLayout layout() const = 0;
  virtual ParamVector zero_init(std::uint64_t seed) const = 0;

  /// out×N.
  virtual Mat eval_batch(const ParamVector& p, const Mat& X) const = 0;
  /// Columns ∂(c_i' F(x_i))/∂x_i, n×N.
  virtual Mat input_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const = 0;
  /// Σ_i ∂(c_i' F(x_i))/∂p.
  virtual Vec param_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const = 0;
  /// Σ_i ∂(v_i' ∇_x F(x_i))/∂p for scalar-valued F.
  virtual Vec mixed_grad_batch(const ParamVector& p, const Mat& X, const Mat& dirs) const = 0;

  Vec eval(const ParamVector& p, const Vec& x) const { return eval_batch(p, as_col(x)).col(0); }

  /// ∇_x of a scalar-valued approximator, as columns for a batch.
  Mat value_gradients(const ParamVector& p, const Mat& X) const {
    require(output_dim() == 1, kind() + ": gradient requires scalar output");
    return input_vjp_batch(p, X, Mat::Ones(1, X.cols()));
  }
  Vec grad_x(const ParamVector& p, const Vec& x) const {
    return value_gradients(p, as_col(x)).col(0);
  }
  /// out×n Jacobian.
  Mat jacobian_x(const ParamVector& p, const Vec& x) const {
    Mat J(output_dim(), input_dim());
    for (int k = 0; k < output_dim(); ++k) {
      J.row(k) = input_vjp_batch(p, as_col(x), Mat::Identity(output_dim(), output_dim()).col(k))
                     .col(0)
                     .transpose();
    }
    return J;
  }
  Vec grad_params(const ParamVector& p, const Vec& x, const Vec& upstream) const {
    require_dim(upstream.size(), output_dim(), kind() + " upstream");
    return param_vjp_batch(p, as_col(x), upstream);
  }
  Vec mixed_grad(const ParamVector& p, const Vec& x, const Vec& v) const {
    require_dim(v.size(), input_dim(), kind() + " direction");
    return mixed_grad_batch(p, as_col(x), v);
  }

 protected:
  void check(const ParamVector& p, const Mat& X) const {
    if (!(p.layout == layout())) throw UsageError(kind() + ": parameter layout mismatch");
    require_dim(X.rows(), input_dim(), kind() + " input");
  }
  void check_scalar() const {
    if (output_dim() != 1) throw UsageError(kind() + ": mixed gradient requires scalar output");
  }

 private:
  static Mat as_col(const Vec& x) { return Mat(x); }
};

/// V(x; ω) = ω'σ(x) with σ the upper-triangular quadratic monomials
/// (x_0², x_0x_1, …, x_0x_{n-1}, x_1², …). Equivalent to x'Px with
/// ω = (P_00, 2P_01, …, P_11, …).
class QuadraticValue final : public Approximator {
 public:
  explicit QuadraticValue(int n) : n_(n) { require(n > 0, "QuadraticValue: n must be positive"); }

  std::string kind() const override { return "quadratic"; }
  int input_dim() const override { return n_; }
  int output_dim() const override { return 1; }
  int feature_count() const { return n_ * (n_ + 1) / 2; }
  ParamLayout layout() const override { return {{{"omega", feature_count(), 1}}}; }
  ParamVector zero_init(std::uint64_t) const override { return ParamVector::zeros(layout()); }

  Vec features(const Vec& x) const {
    require_dim(x.size(), n_, "quadratic features");
    Vec s(feature_count());
    int k = 0;
    for (int i = 0; i < n_; ++i)
      for (int j = i; j < n_; ++j) s(k++) = x(i) * x(j);
    return s;
  }

  Mat unpack(const ParamVector& p) const {
    check(p, Mat(n_, 0));
    return unpack_weights(p.values, n_);
  }
  ParamVector pack(const Mat& P) const { return ParamVector(layout(), pack_matrix(P)); }

  static Mat unpack_weights(const Vec& w, int n) {
    require_dim(w.size(), n * (n + 1) / 2, "quadratic weights");
    Mat P(n, n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        const double v = (i == j) ? w(k) : 0.5 * w(k);
        P(i, j) = v;
        P(j, i) = v;
        ++k;
      }
    }
    return P;
  }
  static Vec pack_matrix(const Mat& P) {
    require(P.rows() == P.cols(), "pack: P must be square");
    const int n = static_cast<int>(P.rows());
    Vec w(n * (n + 1) / 2);
    int k = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) w(k++) = (i == j) ? P(i, i) : P(i, j) + P(j, i);
    return w;
  }

  Mat eval_batch(const ParamVector& p, const Mat& X) const override {
    check(p, X);
    const Mat P = unpack_weights(p.values, n_);
    return (X.array() * (P * X).array()).colwise().sum();
  }

  Mat input_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const override {
    check(p, X);
    const Mat P = unpack_weights(p.values, n_);
    return 2.0 * (P * X) * cot.row(0).asDiagonal();
  }

  Vec param_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const override {
    check(p, X);
    Vec g = Vec::Zero(feature_count());
    for (Eigen::Index c = 0; c < X.cols(); ++c) g += cot(0, c) * features(X.col(c));
    return g;
  }

  Vec mixed_grad_batch(const ParamVector& p, const Mat& X, const Mat& dirs) const override {
    check(p, X);
    require_dim(dirs.rows(), n_, "quadratic directions");
    // ∂/∂x(x_i x_j)·v = v_i x_j + x_i v_j.
    Vec g = Vec::Zero(feature_count());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      int k = 0;
      for (int i = 0; i < n_; ++i)
        for (int j = i; j < n_; ++j)
          g(k++) += dirs(i, c) * X(j, c) + X(i, c) * dirs(j, c);
    }
    return g;
  }

 private:
  int n_;
};

/// u(x; θ) = θ'x with θ an n×out gain.
class LinearPolicy final : public Approximator {
 public:
  LinearPolicy(int n, int out) : n_(n), out_(out) {
    require(n > 0 && out > 0, "LinearPolicy: dimensions must be positive");
  }

  std::string kind() const override { return "linear"; }
  int input_dim() const override { return n_; }
  int output_dim() const override { return out_; }
  ParamLayout layout() const override { return {{{"gain", n_, out_}}}; }
  ParamVector zero_init(std::uint64_t) const override { return ParamVector::zeros(layout()); }

  ParamVector from_gain(const Mat& K) const {
    require(K.rows() == n_ && K.cols() == out_, "LinearPolicy: gain shape mismatch");
    return ParamVector(layout(), Eigen::Map<const Vec>(K.data(), K.size()));
  }
  Mat gain(const ParamVector& p) const {
    check(p, Mat(n_, 0));
    return p.segment(0);
  }

  Mat eval_batch(const ParamVector& p, const Mat& X) const override {
    check(p, X);
    return p.segment(0).transpose() * X;
  }
  Mat input_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const override {
    check(p, X);
    return p.segment(0) * cot;
  }
  Vec param_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const override {
    check(p, X);
    const Mat g = X * cot.transpose();
    return Eigen::Map<const Vec>(g.data(), g.size());
  }
  Vec mixed_grad_batch(const ParamVector& p, const Mat& X, const Mat& dirs) const override {
    check(p, X);
    check_scalar();
    return dirs.rowwise().sum();
  }

 private:
  int n_, out_;
};

enum class Activation { kSelu, kSoftplus, kTanh, kIdentity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSelu: return "selu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "selu") return Activation::kSelu;
  if (s == "softplus") return Activation::kSoftplus;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw UsageError("unknown activation '" + s + "'");
}

namespace detail {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

// Value, first and second derivative of an activation, elementwise.
struct ActivationEval {
  Mat f, d1, d2;
};

inline ActivationEval activate(Activation a, const Mat& z, bool want_d2) {
  ActivationEval r;
  switch (a) {
    case Activation::kSelu: {
      const auto pos = (z.array() > 0.0);
      const Eigen::ArrayXXd e = z.array().min(0.0).exp();
      r.f = pos.select(kSeluLambda * z.array(), kSeluLambda * kSeluAlpha * (e - 1.0)).matrix();
      r.d1 = pos.select(Eigen::ArrayXXd::Constant(z.rows(), z.cols(), kSeluLambda),
                        kSeluLambda * kSeluAlpha * e)
                 .matrix();
      if (want_d2) {
        r.d2 = pos.select(Eigen::ArrayXXd::Zero(z.rows(), z.cols()), kSeluLambda * kSeluAlpha * e)
                   .matrix();
      }
      break;
    }
    case Activation::kSoftplus: {
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
      r.f = (z.array().max(0.0) + (-z.array().abs()).exp().log1p()).matrix();
      r.d1 = s.matrix();
      if (want_d2) r.d2 = (s * (1.0 - s)).matrix();
      break;
    }
    case Activation::kTanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      r.f = t.matrix();
      r.d1 = (1.0 - t * t).matrix();
      if (want_d2) r.d2 = (-2.0 * t * (1.0 - t * t)).matrix();
      break;
    }
    case Activation::kIdentity:
      r.f = z;
      r.d1 = Mat::Ones(z.rows(), z.cols());
      if (want_d2) r.d2 = Mat::Zero(z.rows(), z.cols());
      break;
  }
  return r;
}

}  // namespace detail

struct MlpSpec {
  int input_dim = 1;
  int output_dim = 1;
  int hidden_layers = 3;
  int width = 256;
  Activation hidden = Activation::kSelu;
  Activation output = Activation::kTanh;
  Vec output_scale;   // per output channel, defaults to ones
  Vec input_offset;   // x̃ = (x - offset) / input_scale; defaults 0
  Vec input_scale;    // defaults 1

  void finalize() {
    require(input_dim > 0 && output_dim > 0, "MlpSpec: dimensions must be positive");
    require(hidden_layers >= 1, "MlpSpec: need at least one hidden layer");
    require(width > 0, "MlpSpec: width must be positive");
    if (output_scale.size() == 0) output_scale = Vec::Ones(output_dim);
    if (input_offset.size() == 0) input_offset = Vec::Zero(input_dim);
    if (input_scale.size() == 0) input_scale = Vec::Ones(input_dim);
    require_dim(output_scale.size(), output_dim, "MlpSpec output_scale");
    require_dim(input_offset.size(), input_dim, "MlpSpec input_offset");
    require_dim(input_scale.size(), input_dim, "MlpSpec input_scale");
    require((output_scale.array() > 0.0).all(), "MlpSpec: output scale must be positive");
    require((input_scale.array() > 0.0).all(), "MlpSpec: input scale must be positive");
  }
};

/// Fully connected network with a scaled output activation. Derivatives are
/// hand-written: reverse mode for input/parameter gradients and reverse over
/// a forward tangent for the mixed derivative ∂/∂p (v'∇_x y).
class Mlp final : public Approximator {
 public:
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) { spec_.finalize(); }

  const MlpSpec& spec() const { return spec_; }
  std::string kind() const override { return "mlp"; }
  int input_dim() const override { return spec_.input_dim; }
  int output_dim() const override { return spec_.output_dim; }
  int layer_count() const { return spec_.hidden_layers + 1; }

  ParamLayout layout() const override {
    ParamLayout l;
    for (int i = 0; i < layer_count(); ++i) {
      l.segments.push_back({"W" + std::to_string(i), fan_out(i), fan_in(i)});
      l.segments.push_back({"b" + std::to_string(i), fan_out(i), 1});
    }
    return l;
  }

  /// Output layer and every bias zero; hidden weights LeCun-uniform. The
  /// pre-activation of the output is then identically zero.
  ParamVector zero_init(std::uint64_t seed) const override {
    ParamVector p = ParamVector::zeros(layout());
    std::mt19937_64 rng(seed);
    for (int i = 0; i + 1 < layer_count(); ++i) {
      const double lim = std::sqrt(3.0 / fan_in(i));
      std::uniform_real_distribution<double> dist(-lim, lim);
      auto W = p.segment(2 * i);
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = dist(rng);
    }
    return p;
  }

  Mat eval_batch(const ParamVector& p, const Mat& X) const override {
    check(p, X);
    const Forward fw = forward(p, X, nullptr);
    const auto out = detail::activate(spec_.output, fw.Z.back(), false);
    return spec_.output_scale.asDiagonal() * out.f;
  }

  /// Smallest |pre-activation| of a hidden unit over the batch when the
  /// hidden activation is SELU (its slope jumps at 0), else +inf.
  double kink_margin(const ParamVector& p, const Mat& X) const {
    check(p, X);
    if (spec_.hidden != Activation::kSelu) return std::numeric_limits<double>::infinity();
    const Forward fw = forward(p, X, nullptr);
    double m = std::numeric_limits<double>::infinity();
    for (int l = 0; l + 1 < layer_count(); ++l) m = std::min(m, fw.Z[l].cwiseAbs().minCoeff());
    return m;
  }

  Mat input_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const override {
    check(p, X);
    require(cot.rows() == output_dim() && cot.cols() == X.cols(), "mlp: cotangent shape");
    const Forward fw = forward(p, X, nullptr);
    Mat delta = output_delta(fw, cot);
    for (int l = layer_count() - 1; l > 0; --l) {
      delta = (weight(p, l).transpose() * delta).cwiseProduct(fw.hidden[l - 1].d1);
    }
    return input_scale_inv().asDiagonal() * (weight(p, 0).transpose() * delta);
  }

  Vec param_vjp_batch(const ParamVector& p, const Mat& X, const Mat& cot) const override {
    check(p, X);
    require(cot.rows() == output_dim() && cot.cols() == X.cols(), "mlp: cotangent shape");
    const Forward fw = forward(p, X, nullptr);
    ParamVector g = ParamVector::zeros(p.layout);
    Mat delta = output_delta(fw, cot);
    for (int l = layer_count() - 1; l >= 0; --l) {
      const Mat& input = (l == 0) ? fw.input : fw.hidden[l - 1].f;
      g.segment(2 * l) = delta * input.transpose();
      g.segment(2 * l + 1) = delta.rowwise().sum();
      if (l > 0) delta = (weight(p, l).transpose() * delta).cwiseProduct(fw.hidden[l - 1].d1);
    }
    return g.values;
  }

  Vec mixed_grad_batch(const ParamVector& p, const Mat& X, const Mat& dirs) const override {
    check(p, X);
    check_scalar();
    require(dirs.rows() == input_dim() && dirs.cols() == X.cols(), "mlp: direction shape");
    const Mat tangent_in = input_scale_inv().asDiagonal() * dirs;
    const Forward fw = forward(p, X, &tangent_in);
    const int L = layer_count() - 1;
    const auto out = detail::activate(spec_.output, fw.Z[L], true);
    const double s = spec_.output_scale(0);

    // S = Σ s ρ'(z_L) ż_L. Adjoints of z (primal) and ż (tangent) per layer.
    Mat bar_z = s * out.d2.cwiseProduct(fw.Zdot[L]);
    Mat bar_zdot = s * out.d1;
    ParamVector g = ParamVector::zeros(p.layout);
    for (int l = L; l >= 0; --l) {
      const Mat& a_in = (l == 0) ? fw.input : fw.hidden[l - 1].f;
      const Mat& adot_in = (l == 0) ? tangent_in : fw.Adot[l - 1];
      g.segment(2 * l) = bar_z * a_in.transpose() + bar_zdot * adot_in.transpose();
      g.segment(2 * l + 1) = bar_z.rowwise().sum();
      if (l == 0) break;
      const auto W = weight(p, l);
      const Mat bar_a = W.transpose() * bar_z;
      const Mat bar_adot = W.transpose() * bar_zdot;
      const auto& act = fw.hidden[l - 1];
      bar_zdot = bar_adot.cwiseProduct(act.d1);
      bar_z = bar_a.cwiseProduct(act.d1) +
              bar_adot.cwiseProduct(act.d2).cwiseProduct(fw.Zdot[l - 1]);
    }
    return g.values;
  }

 private:
  struct Forward {
    Mat input;                                   // normalized input
    std::vector<Mat> Z;                          // pre-activations, per layer
    std::vector<detail::ActivationEval> hidden;  // hidden activations
    std::vector<Mat> Zdot, Adot;                 // forward tangents (mixed only)
  };

  int fan_in(int layer) const { return layer == 0 ? spec_.input_dim : spec_.width; }
  int fan_out(int layer) const { return layer == layer_count() - 1 ? spec_.output_dim : spec_.width; }
  Eigen::Map<const Mat> weight(const ParamVector& p, int l) const { return p.segment(2 * l); }
  Eigen::Map<const Mat> bias(const ParamVector& p, int l) const { return p.segment(2 * l + 1); }
  Vec input_scale_inv() const { return spec_.input_scale.cwiseInverse(); }

  Forward forward(const ParamVector& p, const Mat& X, const Mat* tangent) const {
    Forward fw;
    fw.input = input_scale_inv().asDiagonal() * (X.colwise() - spec_.input_offset);
    const bool want_d2 = tangent != nullptr;
    fw.Z.reserve(layer_count());
    fw.hidden.reserve(layer_count());
    fw.Zdot.reserve(layer_count());
    fw.Adot.reserve(layer_count());
    const Mat* a = &fw.input;
    const Mat* adot = tangent;
    for (int l = 0; l < layer_count(); ++l) {
      Mat z = weight(p, l) * (*a);
      z.colwise() += bias(p, l).col(0);
      if (tangent) fw.Zdot.push_back(weight(p, l) * (*adot));
      fw.Z.push_back(std::move(z));
      if (l + 1 == layer_count()) break;
      fw.hidden.push_back(detail::activate(spec_.hidden, fw.Z.back(), want_d2));
      a = &fw.hidden.back().f;
      if (tangent) {
        fw.Adot.push_back(fw.hidden.back().d1.cwiseProduct(fw.Zdot.back()));
        adot = &fw.Adot.back();
      }
    }
    return fw;
  }

  Mat output_delta(const Forward& fw, const Mat& cot) const {
    const auto out = detail::activate(spec_.output, fw.Z.back(), false);
    return (spec_.output_scale.asDiagonal() * cot).cwiseProduct(out.d1);
  }

  MlpSpec spec_;
};

}  // namespace tpi

#endif  // TPI_APPROXIMATORS_HPP_

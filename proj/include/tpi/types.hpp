#ifndef TPI_TYPES_HPP_
#define TPI_TYPES_HPP_

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Caller violated a precondition (shapes, ranges, empty batches).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation is not defined for this plant (e.g. greedy policies on a
/// non-affine model).
class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical blow-up during training or simulation.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

inline void require(bool condition, std::string_view message) {
  if (!condition) throw UsageError(std::string(message));
}

inline void require_dim(Eigen::Index got, Eigen::Index expected,
                        std::string_view what) {
  if (got != expected) {
    throw UsageError(std::string(what) + ": expected dimension " +
                     std::to_string(expected) + ", got " +
                     std::to_string(got));
  }
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace tpi

#endif  // TPI_TYPES_HPP_

#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qgk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

// Blow-up, non-convergence, non-finite values. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable/unwritable files or malformed containers. Maps to CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Channel-major, then row-major spatial layout of a multi-channel field.
struct GridShape {
  int channels = 0;
  int ny = 0;
  int nx = 0;

  std::size_t plane() const { return static_cast<std::size_t>(ny) * nx; }
  std::size_t size() const { return plane() * channels; }
  bool operator==(const GridShape&) const = default;
};

}  // namespace qgk

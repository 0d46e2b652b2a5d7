#pragma once

#include <span>

#include "qgk/common.hpp"

namespace qgk {

// Real-to-complex 2D transform on a ny x nx periodic grid. The spectral
// array holds ny x (nx/2 + 1) coefficients, row-major. forward() is
// unnormalised; inverse() divides by nx*ny so inverse(forward(f)) == f.
//
// Plans are created under a global lock; execution only touches the
// instance's own buffers, so distinct instances may run concurrently.
class Fft2d {
 public:
  Fft2d(int ny, int nx);
  ~Fft2d();
  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;
  Fft2d(Fft2d&& other) noexcept;
  Fft2d& operator=(Fft2d&& other) noexcept;

  int ny() const { return ny_; }
  int nx() const { return nx_; }
  int nkx() const { return nx_ / 2 + 1; }
  std::size_t real_size() const { return static_cast<std::size_t>(ny_) * nx_; }
  std::size_t spectral_size() const { return static_cast<std::size_t>(ny_) * nkx(); }

  void forward(std::span<const double> in, std::span<Complex> out);
  void inverse(std::span<const Complex> in, std::span<double> out);
  // Unnormalised inverse (the adjoint of forward() on Hermitian input).
  void inverse_unnormalized(std::span<const Complex> in, std::span<double> out);

 private:
  void release();

  int ny_ = 0;
  int nx_ = 0;
  double* real_buf_ = nullptr;
  void* spec_buf_ = nullptr;
  void* plan_r2c_ = nullptr;
  void* plan_c2r_ = nullptr;
};

// Signed integer wavenumber index for position i of an n-point transform.
inline int wave_index(int i, int n) { return i <= n / 2 ? i : i - n; }

}  // namespace qgk

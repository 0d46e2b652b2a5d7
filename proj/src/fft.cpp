#include "qgk/fft.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <utility>

#include <fftw3.h>

namespace qgk {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

Fft2d::Fft2d(int ny, int nx) : ny_(ny), nx_(nx) {
  if (ny <= 0 || nx <= 0 || nx % 2 != 0) {
    throw std::invalid_argument("Fft2d: grid dimensions must be positive and nx even");
  }
  real_buf_ = static_cast<double*>(fftw_malloc(sizeof(double) * real_size()));
  spec_buf_ = fftw_malloc(sizeof(fftw_complex) * spectral_size());
  auto* spec = static_cast<fftw_complex*>(spec_buf_);
  std::lock_guard lock(planner_mutex());
  // FFTW_ESTIMATE keeps plan selection independent of timing, so results
  // are bit-reproducible run to run.
  plan_r2c_ = fftw_plan_dft_r2c_2d(ny, nx, real_buf_, spec, FFTW_ESTIMATE);
  plan_c2r_ = fftw_plan_dft_c2r_2d(ny, nx, spec, real_buf_, FFTW_ESTIMATE);
}

Fft2d::~Fft2d() { release(); }

Fft2d::Fft2d(Fft2d&& other) noexcept
    : ny_(other.ny_),
      nx_(other.nx_),
      real_buf_(std::exchange(other.real_buf_, nullptr)),
      spec_buf_(std::exchange(other.spec_buf_, nullptr)),
      plan_r2c_(std::exchange(other.plan_r2c_, nullptr)),
      plan_c2r_(std::exchange(other.plan_c2r_, nullptr)) {}

Fft2d& Fft2d::operator=(Fft2d&& other) noexcept {
  if (this != &other) {
    release();
    ny_ = other.ny_;
    nx_ = other.nx_;
    real_buf_ = std::exchange(other.real_buf_, nullptr);
    spec_buf_ = std::exchange(other.spec_buf_, nullptr);
    plan_r2c_ = std::exchange(other.plan_r2c_, nullptr);
    plan_c2r_ = std::exchange(other.plan_c2r_, nullptr);
  }
  return *this;
}

void Fft2d::release() {
  std::lock_guard lock(planner_mutex());
  if (plan_r2c_) fftw_destroy_plan(static_cast<fftw_plan>(plan_r2c_));
  if (plan_c2r_) fftw_destroy_plan(static_cast<fftw_plan>(plan_c2r_));
  if (real_buf_) fftw_free(real_buf_);
  if (spec_buf_) fftw_free(spec_buf_);
  plan_r2c_ = plan_c2r_ = nullptr;
  real_buf_ = nullptr;
  spec_buf_ = nullptr;
}

void Fft2d::forward(std::span<const double> in, std::span<Complex> out) {
  std::copy(in.begin(), in.begin() + real_size(), real_buf_);
  fftw_execute(static_cast<fftw_plan>(plan_r2c_));
  std::memcpy(out.data(), spec_buf_, sizeof(fftw_complex) * spectral_size());
}

void Fft2d::inverse_unnormalized(std::span<const Complex> in, std::span<double> out) {
  // c2r overwrites its input, hence the copy into the owned buffer.
  std::memcpy(spec_buf_, in.data(), sizeof(fftw_complex) * spectral_size());
  fftw_execute(static_cast<fftw_plan>(plan_c2r_));
  std::copy(real_buf_, real_buf_ + real_size(), out.begin());
}

void Fft2d::inverse(std::span<const Complex> in, std::span<double> out) {
  inverse_unnormalized(in, out);
  const double scale = 1.0 / static_cast<double>(real_size());
  for (std::size_t i = 0; i < real_size(); ++i) out[i] *= scale;
}

}  // namespace qgk

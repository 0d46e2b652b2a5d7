#pragma once

#include <array>
#include <cstdint>
#include <deque>

#include "qgk/common.hpp"
#include "qgk/fft.hpp"

namespace qgk {

// Physical and numerical constants of the two-layer model. F1 and F2 are
// derived from kd2 and delta; validate() rejects any set where they have
// been edited independently.
struct QGParams {
  int nx = 128;
  int ny = 128;
  double L = 1.0e6;     // m, square periodic domain
  double dt = 3600.0;   // s
  double beta = 1.5e-11;
  double r_ek = 5.787e-7;
  double U1 = 0.025;
  double U2 = 0.0;
  double H1 = 500.0;
  double H2 = 2000.0;
  double delta = 0.25;
  double kd2 = 1.0 / (15000.0 * 15000.0);
  double F1 = kd2 / (1.0 + delta);
  double F2 = delta * F1;
  double ssd_cutoff_frac = 0.65;
  double ssd_strength = 23.6;
  double ssd_order = 4.0;

  // Recomputes F1, F2 from kd2/delta and delta from H1/H2.
  QGParams& derive();
  void validate() const;
};

struct QGState {
  Eigen::ArrayXd q;        // (2, ny, nx)
  Eigen::ArrayXd psi;      // (2, ny, nx)
  Eigen::ArrayXcd q_hat;   // (2, ny, nx/2+1)
  Eigen::ArrayXcd psi_hat;
  double t = 0.0;
};

struct VelocityField {
  Eigen::ArrayXd u;
  Eigen::ArrayXd v;
};

// Prior tendencies for the multistep integrator, newest first.
struct TendencyHistory {
  std::deque<Eigen::ArrayXcd> previous;
  std::int64_t steps_taken = 0;
};

// Pseudo-spectral two-layer QG solver on a doubly periodic grid.
// Methods that transform fields use the instance's FFT workspace and are
// therefore not const; use one solver per thread.
class QGSolver {
 public:
  static constexpr int kLayers = 2;

  explicit QGSolver(QGParams params);

  const QGParams& params() const { return params_; }
  int nx() const { return params_.nx; }
  int ny() const { return params_.ny; }
  int nkx() const { return params_.nx / 2 + 1; }
  std::size_t plane() const { return static_cast<std::size_t>(ny()) * nx(); }
  std::size_t spectral_plane() const { return static_cast<std::size_t>(ny()) * nkx(); }

  double kx(std::size_t spectral_index) const { return kx_[spectral_index]; }
  double ky(std::size_t spectral_index) const { return ky_[spectral_index]; }
  const Eigen::ArrayXd& k2() const { return k2_; }
  const Eigen::ArrayXd& dealias_mask() const { return dealias_; }
  const Eigen::ArrayXd& ssd_factor() const { return ssd_; }

  // |k| / k_nyquist with k_nyquist = pi / dx per direction.
  double nyquist_fraction(std::size_t spectral_index) const;

  Eigen::ArrayXcd invert_pv(const Eigen::ArrayXcd& q_hat) const;
  Eigen::ArrayXcd pv_from_streamfunction(const Eigen::ArrayXcd& psi_hat) const;
  VelocityField compute_velocity(const Eigen::ArrayXcd& psi_hat);

  // Layerwise J(a, b) = a_x b_y - a_y b_x, dealiased by the 2/3 rule.
  Eigen::ArrayXcd jacobian(const Eigen::ArrayXcd& a_hat, const Eigen::ArrayXcd& b_hat);
  Eigen::ArrayXcd tendency(const QGState& state);
  void ssd_filter(Eigen::ArrayXcd& q_hat) const;

  // Advances one step: Euler, then AB2, then AB3; filter; re-invert.
  void step(QGState& state, TendencyHistory& history);

  QGState state_from_pv(const Eigen::ArrayXd& q, double t = 0.0);
  QGState state_from_spectral_pv(Eigen::ArrayXcd q_hat, double t = 0.0);

  Eigen::ArrayXcd to_spectral(const Eigen::ArrayXd& field);
  Eigen::ArrayXd to_physical(const Eigen::ArrayXcd& field_hat);

  double total_energy(const QGState& state) const;
  std::array<double, 2> layer_enstrophy(const QGState& state) const;

  // Random large-scale PV noise, zero mean, |k| < 1/4 Nyquist.
  QGState random_initial_state(std::uint64_t seed, double amplitude = 1e-7);

 private:
  QGParams params_;
  Fft2d fft_;
  Eigen::ArrayXd kx_, ky_, k2_, dealias_, ssd_;
};

}  // namespace qgk

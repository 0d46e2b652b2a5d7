#include "qgk/qg_model.hpp"

#include <cassert>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace qgk {

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

constexpr Complex kI{0.0, 1.0};

}  // namespace

QGParams& QGParams::derive() {
  delta = H1 / H2;
  F1 = kd2 / (1.0 + delta);
  F2 = delta * F1;
  return *this;
}

void QGParams::validate() const {
  if (!is_power_of_two(nx) || !is_power_of_two(ny)) {
    throw std::invalid_argument("QGParams: nx and ny must be powers of two");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("QGParams: dt must be positive");
  if (!(r_ek >= 0.0)) throw std::invalid_argument("QGParams: r_ek must be non-negative");
  if (!(L > 0.0)) throw std::invalid_argument("QGParams: L must be positive");
  if (!(H1 > 0.0 && H2 > 0.0)) throw std::invalid_argument("QGParams: layer depths must be positive");
  if (!(kd2 >= 0.0) || !(delta > 0.0)) {
    throw std::invalid_argument("QGParams: kd2 must be >= 0 and delta > 0");
  }
  if (std::abs(delta - H1 / H2) > 1e-12 * delta) {
    throw std::invalid_argument("QGParams: delta must equal H1/H2");
  }
  if (F1 != kd2 / (1.0 + delta) || F2 != delta * F1) {
    throw std::invalid_argument("QGParams: F1/F2 inconsistent with kd2 and delta");
  }
  if (ssd_strength < 0.0 || ssd_cutoff_frac < 0.0 || ssd_order <= 0.0) {
    throw std::invalid_argument("QGParams: invalid small-scale filter shape");
  }
}

QGSolver::QGSolver(QGParams params) : params_(params), fft_(params.ny, params.nx) {
  params_.validate();
  const std::size_t n = spectral_plane();
  kx_.resize(n);
  ky_.resize(n);
  k2_.resize(n);
  dealias_.resize(n);
  ssd_.resize(n);

  const double dk = 2.0 * std::numbers::pi / params_.L;
  const double dx = params_.L / nx();
  const double dy = params_.L / ny();
  // Strict 2/3 rule: |index| < n/3 survives the quadratic product unaliased.
  const double cut_x = nx() / 3.0;
  const double cut_y = ny() / 3.0;
  for (int j = 0; j < ny(); ++j) {
    const int jy = wave_index(j, ny());
    for (int i = 0; i < nkx(); ++i) {
      const std::size_t idx = static_cast<std::size_t>(j) * nkx() + i;
      const double kx_true = dk * i;
      const double ky_true = dk * jy;
      // Derivative wavenumbers drop the unpaired Nyquist component so that
      // spectral derivatives of real fields stay real.
      kx_[idx] = (i == nx() / 2) ? 0.0 : kx_true;
      ky_[idx] = (j == ny() / 2) ? 0.0 : ky_true;
      k2_[idx] = kx_true * kx_true + ky_true * ky_true;
      dealias_[idx] = (std::abs(i) < cut_x && std::abs(jy) < cut_y && j != ny() / 2) ? 1.0 : 0.0;
      const double frac =
          std::sqrt(std::pow(kx_true * dx, 2) + std::pow(ky_true * dy, 2)) / std::numbers::pi;
      ssd_[idx] = frac > params_.ssd_cutoff_frac
                      ? std::exp(-params_.ssd_strength *
                                 std::pow(frac - params_.ssd_cutoff_frac, params_.ssd_order))
                      : 1.0;
    }
  }
}

double QGSolver::nyquist_fraction(std::size_t idx) const {
  const int j = static_cast<int>(idx / nkx());
  const int i = static_cast<int>(idx % nkx());
  const double fx = 2.0 * i / nx();
  const double fy = 2.0 * wave_index(j, ny()) / ny();
  return std::sqrt(fx * fx + fy * fy);
}

Eigen::ArrayXcd QGSolver::invert_pv(const Eigen::ArrayXcd& q_hat) const {
  const std::size_t n = spectral_plane();
  if (static_cast<std::size_t>(q_hat.size()) != kLayers * n) {
    throw std::invalid_argument("invert_pv: spectral field has wrong size");
  }
  const double F1 = params_.F1;
  const double F2 = params_.F2;
  Eigen::ArrayXcd psi_hat(q_hat.size());
  psi_hat[0] = 0.0;
  psi_hat[n] = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    const double kk = k2_[k];
    const double det = kk * kk + kk * (F1 + F2);
    assert(det > 0.0);
    const Complex q1 = q_hat[k];
    const Complex q2 = q_hat[n + k];
    psi_hat[k] = (-(kk + F2) * q1 - F1 * q2) / det;
    psi_hat[n + k] = (-F2 * q1 - (kk + F1) * q2) / det;
  }
  return psi_hat;
}

Eigen::ArrayXcd QGSolver::pv_from_streamfunction(const Eigen::ArrayXcd& psi_hat) const {
  const std::size_t n = spectral_plane();
  Eigen::ArrayXcd q_hat(psi_hat.size());
  for (std::size_t k = 0; k < n; ++k) {
    const Complex p1 = psi_hat[k];
    const Complex p2 = psi_hat[n + k];
    q_hat[k] = -k2_[k] * p1 + params_.F1 * (p2 - p1);
    q_hat[n + k] = -k2_[k] * p2 + params_.F2 * (p1 - p2);
  }
  return q_hat;
}

Eigen::ArrayXcd QGSolver::to_spectral(const Eigen::ArrayXd& field) {
  const std::size_t layers = field.size() / plane();
  Eigen::ArrayXcd out(layers * spectral_plane());
  for (std::size_t m = 0; m < layers; ++m) {
    fft_.forward({field.data() + m * plane(), plane()},
                 {out.data() + m * spectral_plane(), spectral_plane()});
  }
  return out;
}

Eigen::ArrayXd QGSolver::to_physical(const Eigen::ArrayXcd& field_hat) {
  const std::size_t layers = field_hat.size() / spectral_plane();
  Eigen::ArrayXd out(layers * plane());
  for (std::size_t m = 0; m < layers; ++m) {
    fft_.inverse({field_hat.data() + m * spectral_plane(), spectral_plane()},
                 {out.data() + m * plane(), plane()});
  }
  return out;
}

VelocityField QGSolver::compute_velocity(const Eigen::ArrayXcd& psi_hat) {
  const std::size_t n = spectral_plane();
  const std::size_t layers = psi_hat.size() / n;
  Eigen::ArrayXcd u_hat(psi_hat.size()), v_hat(psi_hat.size());
  for (std::size_t m = 0; m < layers; ++m) {
    for (std::size_t k = 0; k < n; ++k) {
      u_hat[m * n + k] = -kI * ky_[k] * psi_hat[m * n + k];
      v_hat[m * n + k] = kI * kx_[k] * psi_hat[m * n + k];
    }
  }
  return {to_physical(u_hat), to_physical(v_hat)};
}

Eigen::ArrayXcd QGSolver::jacobian(const Eigen::ArrayXcd& a_hat, const Eigen::ArrayXcd& b_hat) {
  const std::size_t n = spectral_plane();
  const std::size_t np = plane();
  const std::size_t layers = a_hat.size() / n;
  Eigen::ArrayXcd out(a_hat.size());
  Eigen::ArrayXcd work(n);
  Eigen::ArrayXd u(np), v(np), b(np), flux(np);
  Eigen::ArrayXcd fx(n), fy(n);
  for (std::size_t m = 0; m < layers; ++m) {
    const auto a = a_hat.segment(m * n, n);
    const auto bh = b_hat.segment(m * n, n);
    work = -kI * ky_ * dealias_ * a;
    fft_.inverse({work.data(), n}, {u.data(), np});
    work = kI * kx_ * dealias_ * a;
    fft_.inverse({work.data(), n}, {v.data(), np});
    work = dealias_ * bh;
    fft_.inverse({work.data(), n}, {b.data(), np});
    // Flux form: J(a, b) = d/dx(u b) + d/dy(v b) with (u, v) = (-a_y, a_x).
    flux = u * b;
    fft_.forward({flux.data(), np}, {fx.data(), n});
    flux = v * b;
    fft_.forward({flux.data(), np}, {fy.data(), n});
    out.segment(m * n, n) = dealias_ * (kI * kx_ * fx + kI * ky_ * fy);
  }
  return out;
}

Eigen::ArrayXcd QGSolver::tendency(const QGState& state) {
  const std::size_t n = spectral_plane();
  Eigen::ArrayXcd dq = -jacobian(state.psi_hat, state.q_hat);
  const double shear = params_.U1 - params_.U2;
  const std::array<double, 2> qy{params_.F1 * shear, -params_.F2 * shear};
  const std::array<double, 2> U{params_.U1, params_.U2};
  for (int m = 0; m < kLayers; ++m) {
    const double grad = params_.beta + qy[m];
    auto seg = dq.segment(m * n, n);
    seg -= kI * kx_ * (grad * state.psi_hat.segment(m * n, n) + U[m] * state.q_hat.segment(m * n, n));
  }
  // Bottom drag D_2 = -r_ek lap(psi_2).
  dq.segment(n, n) += params_.r_ek * k2_ * state.psi_hat.segment(n, n);
  dq[0] = 0.0;
  dq[n] = 0.0;
  return dq;
}

void QGSolver::ssd_filter(Eigen::ArrayXcd& q_hat) const {
  const std::size_t n = spectral_plane();
  const std::size_t layers = q_hat.size() / n;
  for (std::size_t m = 0; m < layers; ++m) q_hat.segment(m * n, n) *= ssd_;
}

QGState QGSolver::state_from_spectral_pv(Eigen::ArrayXcd q_hat, double t) {
  const std::size_t n = spectral_plane();
  q_hat[0] = 0.0;
  q_hat[n] = 0.0;
  QGState s;
  s.psi_hat = invert_pv(q_hat);
  s.q = to_physical(q_hat);
  s.psi = to_physical(s.psi_hat);
  s.q_hat = std::move(q_hat);
  s.t = t;
  return s;
}

QGState QGSolver::state_from_pv(const Eigen::ArrayXd& q, double t) {
  if (static_cast<std::size_t>(q.size()) != kLayers * plane()) {
    throw std::invalid_argument("state_from_pv: field has wrong size");
  }
  return state_from_spectral_pv(to_spectral(q), t);
}

void QGSolver::step(QGState& state, TendencyHistory& history) {
  Eigen::ArrayXcd f = tendency(state);
  const double dt = params_.dt;
  Eigen::ArrayXcd q_hat = state.q_hat;
  if (history.previous.empty()) {
    q_hat += dt * f;
  } else if (history.previous.size() == 1) {
    q_hat += dt * (1.5 * f - 0.5 * history.previous[0]);
  } else {
    q_hat += dt * ((23.0 / 12.0) * f - (16.0 / 12.0) * history.previous[0] +
                   (5.0 / 12.0) * history.previous[1]);
  }
  ssd_filter(q_hat);
  if (!q_hat.isFinite().all()) {
    std::ostringstream msg;
    msg << "QG solver blow-up: non-finite PV at step " << history.steps_taken + 1;
    throw NumericalError(msg.str());
  }
  history.previous.push_front(std::move(f));
  if (history.previous.size() > 2) history.previous.pop_back();
  ++history.steps_taken;
  state = state_from_spectral_pv(std::move(q_hat), state.t + dt);
}

double QGSolver::total_energy(const QGState& state) const {
  const std::size_t np = plane();
  const double H = params_.H1 + params_.H2;
  const std::array<double, 2> w{params_.H1 / H, params_.H2 / H};
  double e = 0.0;
  for (int m = 0; m < kLayers; ++m) {
    e += w[m] * (state.psi.segment(m * np, np) * state.q.segment(m * np, np)).mean();
  }
  return -0.5 * e;
}

std::array<double, 2> QGSolver::layer_enstrophy(const QGState& state) const {
  const std::size_t np = plane();
  return {0.5 * state.q.segment(0, np).square().mean(), 0.5 * state.q.segment(np, np).square().mean()};
}

QGState QGSolver::random_initial_state(std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::ArrayXd q(kLayers * plane());
  for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = amplitude * dist(rng);
  Eigen::ArrayXcd q_hat = to_spectral(q);
  const std::size_t n = spectral_plane();
  for (int m = 0; m < kLayers; ++m) {
    for (std::size_t k = 0; k < n; ++k) {
      if (nyquist_fraction(k) >= 0.25) q_hat[m * n + k] = 0.0;
    }
  }
  return state_from_spectral_pv(std::move(q_hat), 0.0);
}

}  // namespace qgk

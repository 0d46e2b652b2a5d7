#include "qgk/diagnostics.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace qgk {

double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw std::invalid_argument("rmse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

std::optional<double> acc(std::span<const double> pred, std::span<const double> truth,
                          std::span<const double> climatology) {
  if (pred.size() != truth.size() || pred.size() != climatology.size() || pred.empty()) {
    throw std::invalid_argument("acc: shape mismatch");
  }
  const double n = static_cast<double>(pred.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i] - climatology[i];
    mt += truth[i] - climatology[i];
  }
  mp /= n;
  mt /= n;
  double spt = 0.0, spp = 0.0, stt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - climatology[i] - mp;
    const double b = truth[i] - climatology[i] - mt;
    spt += a * b;
    spp += a * a;
    stt += b * b;
  }
  if (spp == 0.0 || stt == 0.0) return std::nullopt;
  return spt / std::sqrt(spp * stt);
}

double BinnedSpectrum::total() const { return std::accumulate(energy.begin(), energy.end(), 0.0); }

BinnedSpectrum ke_spectrum(const QGSolver& solver, const Eigen::ArrayXcd& psi_hat) {
  const auto& p = solver.params();
  const std::size_t ns = solver.spectral_plane();
  if (static_cast<std::size_t>(psi_hat.size()) != 2 * ns) throw std::invalid_argument("ke_spectrum: size");
  const double dk = 2.0 * std::numbers::pi / p.L;
  const int max_bin = static_cast<int>(std::ceil(std::hypot(p.nx / 2, p.ny / 2))) + 1;
  BinnedSpectrum out;
  out.k.resize(max_bin);
  out.energy.assign(max_bin, 0.0);
  for (int b = 0; b < max_bin; ++b) out.k[b] = b * dk;
  const double H = p.H1 + p.H2;
  const std::array<double, 2> w{p.H1 / H, p.H2 / H};
  const double np = static_cast<double>(solver.plane());
  const double norm = 1.0 / (np * np);
  for (std::size_t idx = 0; idx < ns; ++idx) {
    const int i = static_cast<int>(idx % solver.nkx());
    const double mult = (i == 0 || i == p.nx / 2) ? 1.0 : 2.0;
    // Derivative wavenumbers, so the total matches spectrally computed velocities.
    const double kd2 = solver.kx(idx) * solver.kx(idx) + solver.ky(idx) * solver.ky(idx);
    const int b = static_cast<int>(std::lround(std::sqrt(solver.k2()[idx]) / dk));
    for (int m = 0; m < 2; ++m) {
      out.energy[b] += w[m] * mult * 0.5 * kd2 * std::norm(psi_hat[m * ns + idx]) * norm;
    }
  }
  return out;
}

std::array<double, 2> enstrophy(std::span<const double> q, std::size_t plane) {
  if (q.size() != 2 * plane) throw std::invalid_argument("enstrophy: expected two layers");
  std::array<double, 2> out{};
  for (int m = 0; m < 2; ++m) {
    double s = 0.0;
    for (std::size_t k = 0; k < plane; ++k) s += q[m * plane + k] * q[m * plane + k];
    out[m] = 0.5 * s / static_cast<double>(plane);
  }
  return out;
}

double drift(std::span<const double> series, DriftMode mode, double fraction) {
  if (series.empty()) throw std::invalid_argument("drift: empty series");
  double e0 = series.front();
  double eT = series.back();
  if (mode == DriftMode::kHeadTailMean) {
    const std::size_t w = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(series.size()))));
    e0 = std::accumulate(series.begin(), series.begin() + w, 0.0) / static_cast<double>(w);
    eT = std::accumulate(series.end() - w, series.end(), 0.0) / static_cast<double>(w);
  }
  if (e0 == 0.0) throw std::domain_error("drift: initial value is zero");
  return (eT - e0) / e0;
}

double error_growth_rate(double err_0, double err_T, double T) {
  if (!(err_0 > 0.0)) throw std::domain_error("error_growth_rate: initial error must be positive");
  if (!(T > 0.0)) throw std::invalid_argument("error_growth_rate: T must be positive");
  return std::log(err_T / err_0) / T;
}

Autocorrelation autocorrelation(const Matrix& series, std::size_t max_lag) {
  const auto n = static_cast<std::size_t>(series.rows());
  if (n <= max_lag) throw std::invalid_argument("autocorrelation: series shorter than max_lag + 1");
  Autocorrelation out;
  out.values.assign(max_lag + 1, 0.0);
  std::size_t used = 0;
  for (Eigen::Index p = 0; p < series.cols(); ++p) {
    const Vector x = series.col(p);
    const double mu = x.mean();
    const Vector c = x.array() - mu;
    const double var = c.squaredNorm();
    if (var == 0.0) {
      ++out.excluded_points;
      continue;
    }
    ++used;
    out.values[0] += 1.0;
    for (std::size_t lag = 1; lag <= max_lag; ++lag) {
      const std::size_t m = n - lag;
      // Pearson correlation between the series and its lagged copy.
      const auto a = c.head(m);
      const auto b = c.segment(lag, m);
      const double ma = a.mean(), mb = b.mean();
      const double sab = ((a.array() - ma) * (b.array() - mb)).sum();
      const double saa = (a.array() - ma).square().sum();
      const double sbb = (b.array() - mb).square().sum();
      out.values[lag] += (saa > 0 && sbb > 0) ? sab / std::sqrt(saa * sbb) : 0.0;
    }
  }
  if (used > 0) {
    for (double& v : out.values) v /= static_cast<double>(used);
  }
  return out;
}

}  // namespace qgk

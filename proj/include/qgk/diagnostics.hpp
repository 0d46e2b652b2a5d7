#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "qgk/common.hpp"
#include "qgk/qg_model.hpp"

namespace qgk {

double rmse(std::span<const double> pred, std::span<const double> truth);

// Pearson correlation of (pred - clim) with (truth - clim). Empty when
// either anomaly has zero variance.
std::optional<double> acc(std::span<const double> pred, std::span<const double> truth,
                          std::span<const double> climatology);

struct BinnedSpectrum {
  std::vector<double> k;       // bin centres (rad/m)
  std::vector<double> energy;  // depth-weighted KE per bin (m^2 s^-2)

  double total() const;
};

// Isotropic KE spectrum 0.5 |k|^2 |psi_k|^2 from the solver's spectral
// streamfunction, binned by rounded |k| / (2 pi / L) and combined across
// layers with weights H_m / (H1 + H2). Sums to the domain-mean KE.
BinnedSpectrum ke_spectrum(const QGSolver& solver, const Eigen::ArrayXcd& psi_hat);

// 0.5 * mean(q_m^2) per layer; q is (2, ny, nx).
std::array<double, 2> enstrophy(std::span<const double> q, std::size_t plane);

enum class DriftMode { kHeadTailMean, kEndpoints };

// (E_T - E_0) / E_0 with E_0/E_T averaged over the first/last `fraction`
// of the series (at least one sample), or the raw endpoints.
double drift(std::span<const double> series, DriftMode mode = DriftMode::kHeadTailMean,
             double fraction = 0.05);

// (1/T) log(err_T / err_0).
double error_growth_rate(double err_0, double err_T, double T);

struct Autocorrelation {
  std::vector<double> values;   // lags 0..max_lag
  std::size_t excluded_points = 0;  // constant-in-time grid points
};

// Per-gridpoint temporal Pearson autocorrelation averaged over space.
// series is n_times x n_points.
Autocorrelation autocorrelation(const Matrix& series, std::size_t max_lag);

}  // namespace qgk

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "qgk/common.hpp"
#include "qgk/qg_model.hpp"

namespace qgk {

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;

  void validate() const;
};

// Snapshot container. Channels are (q1, q2, psi1, psi2); the payload is
// stored normalised, channel-major then row-major within each snapshot.
struct Dataset {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t n_snapshots = 0;
  std::uint32_t n_channels = 0;
  std::uint32_t ny = 0;
  std::uint32_t nx = 0;
  double dt_snapshot_seconds = 0.0;
  NormalizationStats stats;
  std::vector<float> payload;

  GridShape shape() const {
    return {static_cast<int>(n_channels), static_cast<int>(ny), static_cast<int>(nx)};
  }
  std::size_t state_dim() const { return shape().size(); }
  std::span<const float> snapshot(std::size_t i) const {
    return {payload.data() + i * state_dim(), state_dim()};
  }
  Vector snapshot_vector(std::size_t i) const;
  // Columns [first, first + count) as a state_dim x count matrix.
  Matrix snapshot_matrix(std::size_t first, std::size_t count) const;
};

struct DatasetOptions {
  double spinup_days = 2000.0;
  double run_days = 0.0;
  int subsample = 5;
  int out_resolution = 64;
  std::uint64_t seed = 0;
};

using ProgressFn = std::function<void(std::int64_t step, std::int64_t total)>;

// Number of snapshots generate_dataset would record for these options.
std::uint32_t expected_snapshots(const QGParams& params, const DatasetOptions& options);

Dataset generate_dataset(const QGParams& params, const DatasetOptions& options,
                         const ProgressFn& progress = {});

// Keeps the modes representable on an n_out x n_out grid (Nyquist row and
// column dropped) and rescales for the unnormalised forward transform.
Eigen::ArrayXcd spectral_truncate(const Eigen::ArrayXcd& field_hat, int layers, int n_in, int n_out);

NormalizationStats compute_stats(const std::vector<double>& raw, GridShape shape,
                                 std::size_t n_snapshots);

// Re-expresses a dataset's payload in units normalised by `target`.
Dataset renormalize(const Dataset& data, const NormalizationStats& target);

// Physical-unit field for one normalised state vector.
Vector denormalize(const Vector& x, const NormalizationStats& stats, GridShape shape);
Vector normalize(const Vector& x, const NormalizationStats& stats, GridShape shape);

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace qgk

#pragma once

#include <filesystem>
#include <optional>

#include "qgk/common.hpp"
#include "qgk/dataset.hpp"

namespace qgk {

// Linear encoder/decoder. Rows of `modes` are orthonormal POD modes over
// the flattened (channel-major, row-major) normalised state.
struct PODBasis {
  Matrix modes;             // d x N
  Vector singular_values;   // descending
  NormalizationStats stats;
  GridShape shape;

  int d() const { return static_cast<int>(modes.rows()); }
  std::size_t state_dim() const { return static_cast<std::size_t>(modes.cols()); }
};

struct LatentState {
  Vector z;
  double t = 0.0;
};

// Top-d left singular vectors of the N x T snapshot matrix (already
// normalised, so no further centering is applied).
PODBasis fit_pod(const Matrix& snapshots, int d, GridShape shape, NormalizationStats stats);

// Fits on the first `n_train` snapshots of a dataset.
PODBasis fit_pod(const Dataset& data, int d, std::size_t n_train);

// Keeps the leading `d` modes.
PODBasis truncate(const PODBasis& basis, int d);

// Fraction of snapshot energy captured by the basis: sum sigma_i^2 / ||X||_F^2.
double captured_energy_fraction(const PODBasis& basis, const Matrix& snapshots);

// Dual-stream encoding: z = (P x_t + P x_prev) / 2. Without history the
// present stream alone is used.
Vector encode(const PODBasis& basis, const Vector& x_t, const std::optional<Vector>& x_prev = std::nullopt);
LatentState encode_state(const PODBasis& basis, const Vector& x_t,
                         const std::optional<Vector>& x_prev, double t);

// Decoded state in normalised units.
Vector decode(const PODBasis& basis, const Vector& z);

void write_basis(const PODBasis& basis, const std::filesystem::path& path);
PODBasis read_basis(const std::filesystem::path& path);

}  // namespace qgk

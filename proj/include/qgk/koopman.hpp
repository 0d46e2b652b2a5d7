#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "qgk/common.hpp"
#include "qgk/pod.hpp"

namespace qgk {

// K = (W - W^T)/2 + (D + D^T)/2. Time is measured in snapshot intervals.
Matrix assemble(const Matrix& W, const Matrix& D);

struct KoopmanOperator {
  Matrix W;
  Matrix D;

  int d() const { return static_cast<int>(W.rows()); }
  Matrix K() const { return assemble(W, D); }
  Matrix skew_part() const { return 0.5 * (W - W.transpose()); }
  Matrix symmetric_part() const { return 0.5 * (D + D.transpose()); }
};

struct OperatorSpectrum {
  std::vector<Complex> eigenvalues;  // sorted by real part, then imaginary part
  double spectral_abscissa = 0.0;
};

// One classical RK4 step of dz/dt = K z, as four products with K.
Vector rk4_step(const Matrix& K, const Vector& z, double h);
// Column-wise RK4 step for a batch of latents (d x B).
Matrix rk4_step_batch(const Matrix& K, const Matrix& Z, double h);

// exp(A) by scaling and squaring with diagonal Pade approximants
// (degrees 3/5/7/9/13 chosen from the 1-norm).
Matrix matrix_exp(const Matrix& A);
Matrix matrix_exp(const Matrix& K, double tau);

// Repeated queries reuse exp(K tau) for the last tau seen.
class Propagator {
 public:
  explicit Propagator(Matrix K);

  const Matrix& K() const { return K_; }
  const Matrix& transition(double tau);
  LatentState propagate(const LatentState& state, double tau);

 private:
  Matrix K_;
  std::optional<double> cached_tau_;
  Matrix cached_;
};

OperatorSpectrum spectrum(const Matrix& K);

// Shifts K so that its spectral abscissa is at most -margin.
Matrix stabilize(const Matrix& K, double margin);
// Same shift applied to the symmetric parameter so assemble() matches.
KoopmanOperator stabilize(const KoopmanOperator& op, double margin);

void write_operator(const KoopmanOperator& op, const std::filesystem::path& path);
KoopmanOperator read_operator(const std::filesystem::path& path);

// CSV with header "re,im", one eigenvalue per row, full precision.
void write_spectrum_csv(const OperatorSpectrum& spec, const std::filesystem::path& path);
std::vector<Complex> read_spectrum_csv(const std::filesystem::path& path);

}  // namespace qgk

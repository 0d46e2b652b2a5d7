#pragma once

#include <vector>

#include "qgk/common.hpp"
#include "qgk/fft.hpp"

namespace qgk {

// Weights of L_total = L_recon + w_pred L_pred + w_latent L_latent + w_phys L_phys.
// w_latent is a loss weight and unrelated to the planetary vorticity gradient.
struct LossWeights {
  double w_pred = 1.0;
  double w_latent = 1e-5;
  double w_phys = 0.1;
  double grad_mask_strength = 1.0;
  double repulsion_scale = 0.1;
  double repulsion_bandwidth = 0.1;

  void validate() const;
};

// Decoded and truth rollouts are N x S matrices of flattened normalised
// states; column 0 is the reconstruction, columns 1.. the predictions.
struct ReconPredLoss {
  double recon = 0.0;
  double pred = 0.0;
  Matrix grad_recon;  // d recon / d decoded
  Matrix grad_pred;   // d pred / d decoded
};

// Error-weighting mask m = 1 + strength * |grad x| / max |grad x| per field,
// with centred periodic differences on the truth.
Matrix gradient_mask(const Matrix& truth, GridShape shape, double strength);

ReconPredLoss loss_recon_pred(const Matrix& decoded, const Matrix& truth, GridShape shape,
                              double mask_strength);

struct LatentLoss {
  double whitening = 0.0;
  double repulsion = 0.0;
  Matrix grad_batch;  // d x n
  Matrix grad_K;      // d x d
  bool repulsion_fd_fallback = false;

  double total() const { return whitening + repulsion; }
};

// ||offdiag(Cov(batch))||_F^2 / d^2 for a d x n batch (n >= 2).
double whitening_loss(const Matrix& batch, Matrix* grad = nullptr);

// scale * sum_{i<j} exp(-|l_i - l_j|^2 / s^2) over the eigenvalues of K.
// The gradient uses first-order eigenvalue perturbation; close or
// ill-conditioned eigenvalues switch to central differences.
double repulsion_loss(const Matrix& K, double scale, double bandwidth, Matrix* grad = nullptr,
                      bool* used_fd = nullptr);

LatentLoss loss_latent(const Matrix& batch, const Matrix& K, const LossWeights& weights);

struct PhysLoss {
  double sobolev = 0.0;
  double spectral = 0.0;
  Matrix grad;

  double total() const { return sobolev + spectral; }
};

// Sobolev (spectral gradients, grid-spacing units) and log-spectrum losses.
// Owns an FFT workspace; use one instance per thread.
class PhysicsLoss {
 public:
  static constexpr double kEpsilon = 1e-12;

  explicit PhysicsLoss(GridShape shape);

  PhysLoss operator()(const Matrix& decoded, const Matrix& truth, bool with_grad = true);

  // Isotropic bin energies of one ny x nx field (bins 0..n/2 by rounded |k|).
  std::vector<double> bin_energy(const double* field);
  int n_bins() const { return n_bins_; }

 private:
  GridShape shape_;
  Fft2d fft_;
  int n_bins_ = 0;
  std::vector<int> bin_;       // per half-spectrum index, -1 if outside
  std::vector<double> mult_;   // conjugate-symmetry multiplicity
  std::vector<double> kappa2_; // squared derivative wavenumber, grid units
};

PhysLoss loss_phys(const Matrix& decoded, const Matrix& truth, GridShape shape);

}  // namespace qgk

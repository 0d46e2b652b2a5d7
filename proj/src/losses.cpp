#include "qgk/losses.hpp"

#include <cmath>
#include <numbers>

namespace qgk {

void LossWeights::validate() const {
  if (w_pred < 0 || w_latent < 0 || w_phys < 0 || grad_mask_strength < 0 || repulsion_scale < 0) {
    throw std::invalid_argument("LossWeights: all weights must be non-negative");
  }
  if (!(repulsion_bandwidth > 0)) throw std::invalid_argument("LossWeights: bandwidth must be positive");
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, GridShape shape, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(who) + ": decoded and truth shapes differ");
  }
  if (static_cast<std::size_t>(a.rows()) != shape.size()) {
    throw std::invalid_argument(std::string(who) + ": rows do not match grid shape");
  }
}

}  // namespace

Matrix gradient_mask(const Matrix& truth, GridShape shape, double strength) {
  Matrix mask = Matrix::Ones(truth.rows(), truth.cols());
  if (strength == 0.0) return mask;
  const int ny = shape.ny, nx = shape.nx;
  const std::size_t np = shape.plane();
  std::vector<double> mag(np);
  for (Eigen::Index s = 0; s < truth.cols(); ++s) {
    for (int c = 0; c < shape.channels; ++c) {
      const double* f = truth.col(s).data() + c * np;
      double peak = 0.0;
      for (int j = 0; j < ny; ++j) {
        const int jp = (j + 1) % ny, jm = (j + ny - 1) % ny;
        for (int i = 0; i < nx; ++i) {
          const int ip = (i + 1) % nx, im = (i + nx - 1) % nx;
          const double gx = 0.5 * (f[j * nx + ip] - f[j * nx + im]);
          const double gy = 0.5 * (f[jp * nx + i] - f[jm * nx + i]);
          mag[j * nx + i] = std::sqrt(gx * gx + gy * gy);
          peak = std::max(peak, mag[j * nx + i]);
        }
      }
      if (peak == 0.0) continue;
      double* m = mask.col(s).data() + c * np;
      for (std::size_t k = 0; k < np; ++k) m[k] = 1.0 + strength * mag[k] / peak;
    }
  }
  return mask;
}

ReconPredLoss loss_recon_pred(const Matrix& decoded, const Matrix& truth, GridShape shape,
                              double mask_strength) {
  check_same_shape(decoded, truth, shape, "loss_recon_pred");
  if (decoded.cols() < 1) throw std::invalid_argument("loss_recon_pred: empty rollout");
  const Matrix mask = gradient_mask(truth, shape, mask_strength);
  const Matrix err = decoded - truth;
  const double n = static_cast<double>(decoded.rows());
  ReconPredLoss out;
  out.grad_recon = Matrix::Zero(decoded.rows(), decoded.cols());
  out.grad_pred = Matrix::Zero(decoded.rows(), decoded.cols());
  out.recon = (mask.col(0).array() * err.col(0).array().square()).sum() / n;
  out.grad_recon.col(0) = 2.0 * mask.col(0).cwiseProduct(err.col(0)) / n;
  const Eigen::Index np = decoded.cols() - 1;
  if (np > 0) {
    const double denom = n * static_cast<double>(np);
    const auto m = mask.rightCols(np).array();
    const auto e = err.rightCols(np).array();
    out.pred = (m * e.square()).sum() / denom;
    out.grad_pred.rightCols(np) = (2.0 * m * e / denom).matrix();
  }
  return out;
}

double whitening_loss(const Matrix& batch, Matrix* grad) {
  const Eigen::Index d = batch.rows();
  const Eigen::Index n = batch.cols();
  if (n < 2) throw std::invalid_argument("whitening_loss: batch must hold at least two vectors");
  const Vector mu = batch.rowwise().mean();
  const Matrix centered = batch.colwise() - mu;
  const Matrix cov = centered * centered.transpose() / static_cast<double>(n - 1);
  Matrix off = cov;
  off.diagonal().setZero();
  const double dd = static_cast<double>(d) * static_cast<double>(d);
  if (grad) {
    // dL/dC = 2 offdiag(C) / d^2; the centering term drops because the
    // centred columns sum to zero.
    *grad = (2.0 * 2.0 / (dd * static_cast<double>(n - 1))) * off * centered;
  }
  return off.squaredNorm() / dd;
}

namespace {

double repulsion_value(const Eigen::VectorXcd& lam, double scale, double s2) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    for (Eigen::Index j = i + 1; j < lam.size(); ++j) r += std::exp(-std::norm(lam[i] - lam[j]) / s2);
  }
  return scale * r;
}

Eigen::VectorXcd eigenvalues_of(const Matrix& K) {
  Eigen::EigenSolver<Matrix> es(K, false);
  if (es.info() != Eigen::Success) throw NumericalError("repulsion: eigen-solver failed");
  return es.eigenvalues();
}

}  // namespace

double repulsion_loss(const Matrix& K, double scale, double bandwidth, Matrix* grad, bool* used_fd) {
  if (used_fd) *used_fd = false;
  const double s2 = bandwidth * bandwidth;
  const Eigen::Index d = K.rows();
  if (!grad || scale == 0.0) {
    if (grad) *grad = Matrix::Zero(d, d);
    return scale == 0.0 ? 0.0 : repulsion_value(eigenvalues_of(K), scale, s2);
  }
  Eigen::EigenSolver<Matrix> es(K, true);
  if (es.info() != Eigen::Success) throw NumericalError("repulsion: eigen-solver failed");
  const Eigen::VectorXcd lam = es.eigenvalues();
  const Eigen::MatrixXcd V = es.eigenvectors();
  const double value = repulsion_value(lam, scale, s2);

  double radius = 1.0;
  double min_gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d; ++i) {
    radius = std::max(radius, std::abs(lam[i]));
    for (Eigen::Index j = i + 1; j < d; ++j) min_gap = std::min(min_gap, std::abs(lam[i] - lam[j]));
  }
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(V);
  const Eigen::MatrixXcd Vinv = lu.inverse();
  const double cond = V.cwiseAbs().colwise().sum().maxCoeff() * Vinv.cwiseAbs().colwise().sum().maxCoeff();
  const bool degenerate = min_gap < 1e-6 * radius || !(cond < 1e8);

  if (!degenerate) {
    // dR/dlambda_i as a complex number (d/dRe + i d/dIm).
    Eigen::VectorXcd g = Eigen::VectorXcd::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        if (i == j) continue;
        const Complex diff = lam[i] - lam[j];
        g[i] += scale * std::exp(-std::norm(diff) / s2) * (-2.0 / s2) * diff;
      }
    }
    // d lambda_i = (V^-1 dK V)_ii
    *grad = (Vinv.transpose() * g.conjugate().asDiagonal() * V.transpose()).real();
    return value;
  }

  if (used_fd) *used_fd = true;
  grad->resize(d, d);
  const double h = 1e-6 * std::max(1.0, K.cwiseAbs().maxCoeff());
  Matrix Kp = K;
  for (Eigen::Index p = 0; p < d; ++p) {
    for (Eigen::Index q = 0; q < d; ++q) {
      const double orig = Kp(p, q);
      Kp(p, q) = orig + h;
      const double fp = repulsion_value(eigenvalues_of(Kp), scale, s2);
      Kp(p, q) = orig - h;
      const double fm = repulsion_value(eigenvalues_of(Kp), scale, s2);
      Kp(p, q) = orig;
      (*grad)(p, q) = (fp - fm) / (2.0 * h);
    }
  }
  return value;
}

LatentLoss loss_latent(const Matrix& batch, const Matrix& K, const LossWeights& weights) {
  if (batch.rows() != K.rows()) throw std::invalid_argument("loss_latent: latent dimension mismatch");
  LatentLoss out;
  out.whitening = whitening_loss(batch, &out.grad_batch);
  out.repulsion = repulsion_loss(K, weights.repulsion_scale, weights.repulsion_bandwidth, &out.grad_K,
                                 &out.repulsion_fd_fallback);
  return out;
}

PhysicsLoss::PhysicsLoss(GridShape shape) : shape_(shape), fft_(shape.ny, shape.nx) {
  const int nkx = fft_.nkx();
  const std::size_t ns = fft_.spectral_size();
  n_bins_ = std::min(shape.nx, shape.ny) / 2 + 1;
  bin_.assign(ns, -1);
  mult_.assign(ns, 0.0);
  kappa2_.assign(ns, 0.0);
  for (int j = 0; j < shape.ny; ++j) {
    const int jy = wave_index(j, shape.ny);
    for (int i = 0; i < nkx; ++i) {
      const std::size_t idx = static_cast<std::size_t>(j) * nkx + i;
      const int b = static_cast<int>(std::lround(std::sqrt(double(i) * i + double(jy) * jy)));
      bin_[idx] = b < n_bins_ ? b : -1;
      mult_[idx] = (i == 0 || i == shape.nx / 2) ? 1.0 : 2.0;
      const double kx = (i == shape.nx / 2) ? 0.0 : 2.0 * std::numbers::pi * i / shape.nx;
      const double ky = (j == shape.ny / 2) ? 0.0 : 2.0 * std::numbers::pi * jy / shape.ny;
      kappa2_[idx] = kx * kx + ky * ky;
    }
  }
}

std::vector<double> PhysicsLoss::bin_energy(const double* field) {
  const std::size_t np = shape_.plane();
  std::vector<Complex> spec(fft_.spectral_size());
  fft_.forward({field, np}, spec);
  std::vector<double> e(n_bins_, 0.0);
  const double norm = 1.0 / (static_cast<double>(np) * static_cast<double>(np));
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (bin_[k] >= 0) e[bin_[k]] += mult_[k] * std::norm(spec[k]) * norm;
  }
  return e;
}

PhysLoss PhysicsLoss::operator()(const Matrix& decoded, const Matrix& truth, bool with_grad) {
  check_same_shape(decoded, truth, shape_, "loss_phys");
  const std::size_t np = shape_.plane();
  const std::size_t ns = fft_.spectral_size();
  const double n_fields = static_cast<double>(decoded.cols()) * shape_.channels;
  const double n_elems = static_cast<double>(decoded.size());
  const double norm = 1.0 / (static_cast<double>(np) * static_cast<double>(np));

  PhysLoss out;
  if (with_grad) out.grad = Matrix::Zero(decoded.rows(), decoded.cols());
  std::vector<Complex> xh(ns), th(ns), work(ns);
  std::vector<double> buf(np);
  std::vector<double> ex(n_bins_), et(n_bins_), dl(n_bins_);
  for (Eigen::Index s = 0; s < decoded.cols(); ++s) {
    for (int c = 0; c < shape_.channels; ++c) {
      const double* xp = decoded.col(s).data() + c * np;
      const double* tp = truth.col(s).data() + c * np;
      fft_.forward({xp, np}, xh);
      fft_.forward({tp, np}, th);

      // Sobolev: sum over the field of |grad r|^2 by Parseval on the residual.
      double sob = 0.0;
      std::fill(ex.begin(), ex.end(), 0.0);
      std::fill(et.begin(), et.end(), 0.0);
      for (std::size_t k = 0; k < ns; ++k) {
        const Complex r = xh[k] - th[k];
        sob += mult_[k] * kappa2_[k] * std::norm(r);
        if (bin_[k] >= 0) {
          ex[bin_[k]] += mult_[k] * std::norm(xh[k]) * norm;
          et[bin_[k]] += mult_[k] * std::norm(th[k]) * norm;
        }
      }
      // Mean over both gradient components and all fields/points.
      out.sobolev += sob / static_cast<double>(np) / (2.0 * n_elems);

      double spec = 0.0;
      for (int b = 0; b < n_bins_; ++b) {
        const double diff = std::log(ex[b] + kEpsilon) - std::log(et[b] + kEpsilon);
        spec += diff * diff;
        dl[b] = 2.0 * diff / (ex[b] + kEpsilon) / (n_bins_ * n_fields);
      }
      out.spectral += spec / (n_bins_ * n_fields);

      if (with_grad) {
        // d/dx of sum_k w_k |X_k|^2 is 2 F^H(w X); the Sobolev adjoint is
        // (Dx^T Dx + Dy^T Dy) r = F^-1(kappa^2 R).
        for (std::size_t k = 0; k < ns; ++k) {
          const double w = bin_[k] >= 0 ? dl[bin_[k]] * 2.0 * norm : 0.0;
          const double sob_w = kappa2_[k] / (n_elems * static_cast<double>(np));
          work[k] = w * xh[k] + sob_w * (xh[k] - th[k]);
        }
        fft_.inverse_unnormalized(work, buf);
        double* g = out.grad.col(s).data() + c * np;
        for (std::size_t k = 0; k < np; ++k) g[k] = buf[k];
      }
    }
  }
  return out;
}

PhysLoss loss_phys(const Matrix& decoded, const Matrix& truth, GridShape shape) {
  PhysicsLoss loss(shape);
  return loss(decoded, truth);
}

}  // namespace qgk

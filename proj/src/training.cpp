#include "qgk/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace qgk {

void TrainConfig::validate() const {
  if (rollout_len < 2) throw std::invalid_argument("TrainConfig: rollout_len must be >= 2");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (lr < 0 || weight_decay < 0 || epochs < 0) {
    throw std::invalid_argument("TrainConfig: lr, weight_decay and epochs must be non-negative");
  }
  if (holdout_fraction < 0 || holdout_fraction >= 1) {
    throw std::invalid_argument("TrainConfig: holdout_fraction must lie in [0, 1)");
  }
  if (stabilize_margin && *stabilize_margin < 0) {
    throw std::invalid_argument("TrainConfig: stabilize_margin must be non-negative");
  }
  if (ridge < 0) throw std::invalid_argument("TrainConfig: ridge must be non-negative");
  if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
}

namespace {

// Least-squares solution of min ||X^T M - Y^T||^2 + ridge ||M||^2, returned
// as A = M^T so that Y ~ A X.
Matrix ridge_regression(const Matrix& X, const Matrix& Y, double ridge) {
  const Eigen::Index d = X.rows();
  const Eigen::Index n = X.cols();
  Matrix lhs(n + (ridge > 0 ? d : 0), d);
  Matrix rhs(lhs.rows(), Y.rows());
  lhs.topRows(n) = X.transpose();
  rhs.topRows(n) = Y.transpose();
  if (ridge > 0) {
    lhs.bottomRows(d) = std::sqrt(ridge) * Matrix::Identity(d, d);
    rhs.bottomRows(d).setZero();
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(lhs);
  return cod.solve(rhs).transpose();
}

struct LogResult {
  Matrix K;
  bool ok = false;
  std::string reason;
};

LogResult principal_log(const Matrix& A, double dt) {
  Eigen::EigenSolver<Matrix> es(A, true);
  if (es.info() != Eigen::Success) return {{}, false, "eigen-solver failed"};
  const Eigen::VectorXcd lam = es.eigenvalues();
  const Eigen::MatrixXcd V = es.eigenvectors();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V);
  const auto& sv = svd.singularValues();
  const double cond = sv[sv.size() - 1] > 0 ? sv[0] / sv[sv.size() - 1] : INFINITY;
  if (!(cond < 1e10)) return {{}, false, "one-step operator not diagonalizable within tolerance"};
  Eigen::VectorXcd loglam(lam.size());
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (std::abs(lam[i]) < 1e-14 * scale ||
        (lam[i].real() <= 0.0 && std::abs(lam[i].imag()) <= 1e-12 * scale)) {
      return {{}, false, "eigenvalue on the logarithm branch cut"};
    }
    loglam[i] = std::log(lam[i]);
  }
  const Eigen::MatrixXcd Kc = V * loglam.asDiagonal() * V.inverse() / dt;
  return {Kc.real(), true, {}};
}

}  // namespace

CtdmdResult fit_ctdmd(const std::vector<Matrix>& trajectories, double dt, double ridge) {
  if (!(dt > 0)) throw std::invalid_argument("fit_ctdmd: dt must be positive");
  if (ridge < 0) throw std::invalid_argument("fit_ctdmd: ridge must be non-negative");
  if (trajectories.empty()) throw std::invalid_argument("fit_ctdmd: no trajectories");
  const Eigen::Index d = trajectories.front().rows();
  Eigen::Index pairs = 0;
  for (const auto& tr : trajectories) {
    if (tr.rows() != d) throw std::invalid_argument("fit_ctdmd: latent dimensions differ");
    pairs += std::max<Eigen::Index>(0, tr.cols() - 1);
  }
  if (pairs < d + 1) throw std::invalid_argument("fit_ctdmd: need at least d+1 snapshot pairs");

  Matrix X(d, pairs), Y(d, pairs);
  Eigen::Index col = 0;
  for (const auto& tr : trajectories) {
    for (Eigen::Index t = 0; t + 1 < tr.cols(); ++t, ++col) {
      X.col(col) = tr.col(t);
      Y.col(col) = tr.col(t + 1);
    }
  }

  CtdmdResult out;
  double r = ridge;
  const double ridge_floor = 1e-10 * X.squaredNorm() / static_cast<double>(d);
  std::string reason;
  for (int attempt = 0; attempt < 8; ++attempt) {
    out.A = ridge_regression(X, Y, r);
    out.ridge = r;
    LogResult lg = principal_log(out.A, dt);
    if (lg.ok) {
      out.W = lg.K;
      out.D = lg.K;
      return out;
    }
    reason = lg.reason;
    if (reason.find("branch cut") == std::string::npos) break;
    // Branch-cut eigenvalues: regularise harder and retry.
    r = std::max(10.0 * r, ridge_floor);
    out.note += "branch-cut eigenvalue, ridge raised to " + std::to_string(r) + "; ";
  }

  // Finite-difference regression on centred derivatives.
  out.used_fallback = true;
  out.note += "fallback to derivative regression (" + reason + ")";
  Eigen::Index interior = 0;
  for (const auto& tr : trajectories) interior += std::max<Eigen::Index>(0, tr.cols() - 2);
  if (interior < d + 1) throw NumericalError("fit_ctdmd: too few interior points for fallback");
  Matrix Zc(d, interior), dZ(d, interior);
  col = 0;
  for (const auto& tr : trajectories) {
    for (Eigen::Index t = 1; t + 1 < tr.cols(); ++t, ++col) {
      Zc.col(col) = tr.col(t);
      dZ.col(col) = (tr.col(t + 1) - tr.col(t - 1)) / (2.0 * dt);
    }
  }
  const Matrix K = ridge_regression(Zc, dZ, ridge);
  out.ridge = ridge;
  out.W = K;
  out.D = K;
  return out;
}

Objective::Objective(const PODBasis& basis, LossWeights weights, int rollout_len, int threads)
    : basis_(basis), weights_(weights), rollout_len_(rollout_len), threads_(std::max(1, threads)) {
  weights_.validate();
  if (rollout_len < 1) throw std::invalid_argument("Objective: rollout_len must be >= 1");
  phys_.reserve(threads_);
  for (int i = 0; i < threads_; ++i) phys_.emplace_back(basis.shape);
}

ObjectiveEval Objective::evaluate(const KoopmanOperator& op, const Matrix& z0, const Matrix& truth,
                                  bool with_grad) {
  const int T = rollout_len_;
  const Eigen::Index S = T + 1;
  const Eigen::Index B = z0.cols();
  const Eigen::Index d = basis_.d();
  const Eigen::Index N = static_cast<Eigen::Index>(basis_.state_dim());
  if (z0.rows() != d || truth.rows() != N || truth.cols() != B * S) {
    throw std::invalid_argument("Objective::evaluate: batch shapes inconsistent with basis/rollout");
  }
  const double h = step();
  const Matrix K = op.K();

  std::vector<Matrix> Zs(S);
  Zs[0] = z0;
  for (int k = 0; k < T; ++k) Zs[k + 1] = rk4_step_batch(K, Zs[k], h);
  Matrix Zall(d, B * S);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index k = 0; k < S; ++k) Zall.col(b * S + k) = Zs[k].col(b);
  }
  const Matrix decoded = basis_.modes.transpose() * Zall;

  struct SegmentTerms {
    double recon = 0, pred = 0, sobolev = 0, spectral = 0;
  };
  std::vector<SegmentTerms> seg(B);
  Matrix Gx = with_grad ? Matrix(N, B * S) : Matrix();
  auto work = [&](int worker, Eigen::Index b0, Eigen::Index b1) {
    for (Eigen::Index b = b0; b < b1; ++b) {
      const Matrix dec = decoded.middleCols(b * S, S);
      const Matrix tru = truth.middleCols(b * S, S);
      const ReconPredLoss rp = loss_recon_pred(dec, tru, basis_.shape, weights_.grad_mask_strength);
      const PhysLoss ph = phys_[worker](dec, tru, with_grad);
      seg[b] = {rp.recon, rp.pred, ph.sobolev, ph.spectral};
      if (with_grad) {
        Gx.middleCols(b * S, S) =
            (rp.grad_recon + weights_.w_pred * rp.grad_pred + weights_.w_phys * ph.grad) / double(B);
      }
    }
  };
  if (threads_ == 1 || B == 1) {
    work(0, 0, B);
  } else {
    std::vector<std::thread> pool;
    const Eigen::Index chunk = (B + threads_ - 1) / threads_;
    for (int w = 0; w < threads_; ++w) {
      const Eigen::Index b0 = w * chunk, b1 = std::min(B, b0 + chunk);
      if (b0 < b1) pool.emplace_back(work, w, b0, b1);
    }
    for (auto& t : pool) t.join();
  }

  ObjectiveEval out;
  ObjectiveTerms& tm = out.terms;
  for (const auto& s : seg) {
    tm.recon += s.recon;
    tm.pred += s.pred;
    tm.sobolev += s.sobolev;
    tm.spectral += s.spectral;
  }
  tm.recon /= double(B);
  tm.pred /= double(B);
  tm.sobolev /= double(B);
  tm.spectral /= double(B);
  tm.phys = tm.sobolev + tm.spectral;

  const LatentLoss lat = with_grad ? loss_latent(Zall, K, weights_) : LatentLoss{};
  if (with_grad) {
    tm.whitening = lat.whitening;
    tm.repulsion = lat.repulsion;
  } else {
    tm.whitening = whitening_loss(Zall);
    tm.repulsion = repulsion_loss(K, weights_.repulsion_scale, weights_.repulsion_bandwidth);
  }
  tm.latent = tm.whitening + tm.repulsion;
  tm.total = tm.recon + weights_.w_pred * tm.pred + weights_.w_latent * tm.latent + weights_.w_phys * tm.phys;
  if (!with_grad) return out;

  const Matrix dZall = basis_.modes * Gx + weights_.w_latent * lat.grad_batch;
  auto gather = [&](Eigen::Index k) {
    Matrix m(d, B);
    for (Eigen::Index b = 0; b < B; ++b) m.col(b) = dZall.col(b * S + k);
    return m;
  };

  Matrix Kbar = weights_.w_latent * lat.grad_K;
  const Matrix Kt = K.transpose();
  Matrix adj = gather(T);
  for (int k = T - 1; k >= 0; --k) {
    const Matrix& z = Zs[k];
    const Matrix k1 = K * z;
    const Matrix a2 = z + 0.5 * h * k1;
    const Matrix k2 = K * a2;
    const Matrix a3 = z + 0.5 * h * k2;
    const Matrix k3 = K * a3;
    const Matrix a4 = z + h * k3;

    Matrix zbar = adj;
    Matrix k4bar = (h / 6.0) * adj;
    Matrix k3bar = (h / 3.0) * adj;
    Matrix k2bar = (h / 3.0) * adj;
    Matrix k1bar = (h / 6.0) * adj;

    Kbar.noalias() += k4bar * a4.transpose();
    const Matrix a4bar = Kt * k4bar;
    zbar += a4bar;
    k3bar += h * a4bar;

    Kbar.noalias() += k3bar * a3.transpose();
    const Matrix a3bar = Kt * k3bar;
    zbar += a3bar;
    k2bar += 0.5 * h * a3bar;

    Kbar.noalias() += k2bar * a2.transpose();
    const Matrix a2bar = Kt * k2bar;
    zbar += a2bar;
    k1bar += 0.5 * h * a2bar;

    Kbar.noalias() += k1bar * z.transpose();
    zbar.noalias() += Kt * k1bar;

    adj = zbar + gather(k);
  }
  out.grad_W = 0.5 * (Kbar - Kbar.transpose());
  out.grad_D = 0.5 * (Kbar + Kbar.transpose());
  return out;
}

Matrix encode_dual_stream(const PODBasis& basis, const Dataset& data, std::size_t count) {
  if (count < 2 || count > data.n_snapshots) throw std::invalid_argument("encode_dual_stream: bad count");
  if (data.shape() != basis.shape) throw std::invalid_argument("encode_dual_stream: grid mismatch");
  Matrix E(basis.d(), count);
  constexpr std::size_t kChunk = 256;
  for (std::size_t first = 0; first < count; first += kChunk) {
    const std::size_t n = std::min(kChunk, count - first);
    E.middleCols(first, n) = basis.modes * data.snapshot_matrix(first, n);
  }
  return 0.5 * (E.rightCols(count - 1) + E.leftCols(count - 1));
}

std::size_t training_split(std::size_t n_snapshots, double holdout_fraction) {
  const auto held = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n_snapshots)));
  return n_snapshots - held;
}

AdamW::AdamW(int d, const TrainConfig& config)
    : lr_(config.lr),
      wd_(config.weight_decay),
      b1_(config.adam_beta1),
      b2_(config.adam_beta2),
      eps_(config.adam_eps),
      mW_(Matrix::Zero(d, d)),
      vW_(Matrix::Zero(d, d)),
      mD_(Matrix::Zero(d, d)),
      vD_(Matrix::Zero(d, d)) {}

void AdamW::update(KoopmanOperator& op, const Matrix& grad_W, const Matrix& grad_D) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto apply = [&](Matrix& p, Matrix& m, Matrix& v, const Matrix& g) {
    m = b1_ * m + (1.0 - b1_) * g;
    v = b2_ * v + (1.0 - b2_) * g.cwiseAbs2();
    const Matrix step = ((m / c1).array() / ((v / c2).array().sqrt() + eps_)).matrix() + wd_ * p;
    p -= lr_ * step;
  };
  apply(op.W, mW_, vW_, grad_W);
  apply(op.D, mD_, vD_, grad_D);
}

namespace {

Matrix gather_truth(const Dataset& data, const std::vector<std::size_t>& starts, int T) {
  const std::size_t S = static_cast<std::size_t>(T) + 1;
  Matrix truth(data.state_dim(), starts.size() * S);
  for (std::size_t b = 0; b < starts.size(); ++b) {
    for (std::size_t k = 0; k < S; ++k) {
      const auto snap = data.snapshot(starts[b] + k);
      auto col = truth.col(static_cast<Eigen::Index>(b * S + k));
      for (std::size_t i = 0; i < snap.size(); ++i) col[i] = snap[i];
    }
  }
  return truth;
}

}  // namespace

TrainResult train_from(const KoopmanOperator& start, const Dataset& data, const PODBasis& basis,
                       const TrainConfig& config, const LossWeights& weights, const EpochCallback& on_epoch) {
  config.validate();
  weights.validate();
  if (data.shape() != basis.shape) throw std::invalid_argument("train: dataset and basis grids differ");
  if (start.d() != basis.d()) throw std::invalid_argument("train: operator and basis dimensions differ");

  TrainResult result;
  result.initial = start;
  result.n_train = training_split(data.n_snapshots, config.holdout_fraction);
  const int T = config.rollout_len;
  if (result.n_train < static_cast<std::size_t>(T) + 2) {
    throw std::invalid_argument("train: training split shorter than one rollout segment");
  }
  // Latent for snapshot t (t >= 1) sits in column t - 1.
  const Matrix latents = encode_dual_stream(basis, data, data.n_snapshots);
  std::vector<std::size_t> starts;
  for (std::size_t t = 1; t + T < result.n_train; ++t) starts.push_back(t);
  std::vector<std::size_t> val_starts;
  for (std::size_t t = result.n_train; t + T < data.n_snapshots; ++t) val_starts.push_back(t);

  Objective objective(basis, weights, T, config.threads);
  KoopmanOperator op = start;
  AdamW optimizer(op.d(), config);
  std::mt19937_64 rng(config.seed);

  auto batch_inputs = [&](const std::vector<std::size_t>& batch) {
    Matrix z0(op.d(), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) z0.col(b) = latents.col(batch[b] - 1);
    return std::make_pair(z0, gather_truth(data, batch, T));
  };
  auto validate = [&](const KoopmanOperator& cand) {
    double sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t first = 0; first < val_starts.size(); first += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, val_starts.size() - first);
      const auto [z0, truth] = batch_inputs({val_starts.begin() + first, val_starts.begin() + first + n});
      sum += objective.evaluate(cand, z0, truth, false).terms.total;
      ++n_batches;
    }
    return sum / static_cast<double>(n_batches);
  };
  std::optional<double> best_val;

  auto run_epoch = [&](int epoch, bool update) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = starts;
    std::shuffle(order.begin(), order.end(), rng);  // batch composition matters for the whitening term
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t n_batches = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - first);
      const auto [z0, truth] = batch_inputs({order.begin() + first, order.begin() + first + n});
      ObjectiveEval ev = objective.evaluate(op, z0, truth, true);
      if (!std::isfinite(ev.terms.total)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << " batch " << n_batches;
        throw NumericalError(msg.str());
      }
      if (ev.terms.total > 1e6) {
        std::ostringstream msg;
        msg << "train: divergence (loss " << ev.terms.total << ") at epoch " << epoch << " batch " << n_batches;
        throw NumericalError(msg.str());
      }
      rec.terms.total += ev.terms.total;
      rec.terms.recon += ev.terms.recon;
      rec.terms.pred += ev.terms.pred;
      rec.terms.latent += ev.terms.latent;
      rec.terms.phys += ev.terms.phys;
      rec.terms.whitening += ev.terms.whitening;
      rec.terms.repulsion += ev.terms.repulsion;
      rec.terms.sobolev += ev.terms.sobolev;
      rec.terms.spectral += ev.terms.spectral;
      rec.grad_norm += std::sqrt(ev.grad_W.squaredNorm() + ev.grad_D.squaredNorm());
      ++n_batches;
      if (update) optimizer.update(op, ev.grad_W, ev.grad_D);
    }
    const double nb = static_cast<double>(n_batches);
    for (double* v : {&rec.terms.total, &rec.terms.recon, &rec.terms.pred, &rec.terms.latent,
                      &rec.terms.phys, &rec.terms.whitening, &rec.terms.repulsion, &rec.terms.sobolev,
                      &rec.terms.spectral, &rec.grad_norm}) {
      *v /= nb;
    }
    if (update && config.stabilize_margin) op = stabilize(op, *config.stabilize_margin);
    rec.spectral_abscissa = spectrum(op.K()).spectral_abscissa;
    const KoopmanOperator cand = (!update && config.stabilize_margin) ? stabilize(op, *config.stabilize_margin) : op;
    if (!val_starts.empty()) {
      rec.val_loss = validate(cand);
      if (!std::isfinite(*rec.val_loss)) rec.val_loss.reset();
    }
    if (epoch == 0 || (rec.val_loss && (!best_val || *rec.val_loss < *best_val))) {
      result.best_op = cand;
      result.best_epoch = epoch;
      if (rec.val_loss) best_val = rec.val_loss;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  };

  run_epoch(0, false);
  for (int e = 1; e <= config.epochs; ++e) run_epoch(e, true);
  result.final_op = op;
  if (val_starts.empty()) {
    result.best_op = op;
    result.best_epoch = config.epochs;
  }
  return result;
}

TrainResult train(const Dataset& data, const PODBasis& basis, const TrainConfig& config,
                  const LossWeights& weights, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n_train = training_split(data.n_snapshots, config.holdout_fraction);
  if (n_train < 3) throw std::invalid_argument("train: too few training snapshots");
  const Matrix latents = encode_dual_stream(basis, data, n_train);
  CtdmdResult init = fit_ctdmd({latents}, 1.0, config.ridge);
  TrainResult result = train_from({init.W, init.D}, data, basis, config, weights, on_epoch);
  result.ctdmd = std::move(init);
  return result;
}

}  // namespace qgk

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qgk/common.hpp"
#include "qgk/dataset.hpp"
#include "qgk/koopman.hpp"
#include "qgk/losses.hpp"
#include "qgk/pod.hpp"

namespace qgk {

struct TrainConfig {
  int rollout_len = 10;
  int batch_size = 32;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  int epochs = 10;
  std::uint64_t seed = 0;
  std::optional<double> stabilize_margin;
  double holdout_fraction = 0.1;
  double ridge = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;

  void validate() const;
};

struct CtdmdResult {
  Matrix W;
  Matrix D;
  Matrix A;              // one-step least-squares operator
  double ridge = 0.0;    // ridge actually used
  bool used_fallback = false;
  std::string note;
};

// Continuous-time DMD: principal matrix logarithm of the ridge-regularised
// one-step map, divided by dt. Each trajectory is d x T_i.
CtdmdResult fit_ctdmd(const std::vector<Matrix>& trajectories, double dt, double ridge);

struct ObjectiveTerms {
  double total = 0.0;
  double recon = 0.0;
  double pred = 0.0;
  double latent = 0.0;
  double phys = 0.0;
  double whitening = 0.0;
  double repulsion = 0.0;
  double sobolev = 0.0;
  double spectral = 0.0;
};

struct ObjectiveEval {
  ObjectiveTerms terms;
  Matrix grad_W;
  Matrix grad_D;
};

// Composite rollout objective over a batch of segments. z0 is d x B; truth
// is N x B(T+1) with segment b occupying columns [b(T+1), (b+1)(T+1)).
// Gradients wrt (W, D) are exact reverse-mode derivatives through the
// unrolled RK4 steps and the linear decoder.
class Objective {
 public:
  Objective(const PODBasis& basis, LossWeights weights, int rollout_len, int threads = 1);

  ObjectiveEval evaluate(const KoopmanOperator& op, const Matrix& z0, const Matrix& truth,
                         bool with_grad = true);

  int rollout_len() const { return rollout_len_; }
  double step() const { return 1.0; }

 private:
  const PODBasis& basis_;
  LossWeights weights_;
  int rollout_len_;
  int threads_;
  std::vector<PhysicsLoss> phys_;
};

struct EpochRecord {
  int epoch = 0;
  ObjectiveTerms terms;
  double grad_norm = 0.0;
  double spectral_abscissa = 0.0;
  std::optional<double> val_loss;  // holdout objective of this epoch's operator
  double wall_ms = 0.0;
};

// Dual-stream latents of every snapshot from index 1 on: column t-1 holds
// (P x_t + P x_{t-1}) / 2.
Matrix encode_dual_stream(const PODBasis& basis, const Dataset& data, std::size_t count);

struct TrainResult {
  KoopmanOperator initial;  // CT-DMD
  KoopmanOperator final_op;
  // Lowest holdout objective among the epoch operators (epoch 0: CT-DMD,
  // stabilized when a margin is set). Equals final_op without a holdout.
  KoopmanOperator best_op;
  int best_epoch = 0;
  std::vector<EpochRecord> log;  // epoch 0 = initial loss, no update
  std::size_t n_train = 0;
  CtdmdResult ctdmd;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

std::size_t training_split(std::size_t n_snapshots, double holdout_fraction);

TrainResult train(const Dataset& data, const PODBasis& basis, const TrainConfig& config,
                  const LossWeights& weights, const EpochCallback& on_epoch = {});

// Refines an explicit starting operator; used by train() after CT-DMD and
// directly by tests.
TrainResult train_from(const KoopmanOperator& start, const Dataset& data, const PODBasis& basis,
                       const TrainConfig& config, const LossWeights& weights,
                       const EpochCallback& on_epoch = {});

// Decoupled-weight-decay adaptive moment update on (W, D).
class AdamW {
 public:
  AdamW(int d, const TrainConfig& config);
  void update(KoopmanOperator& op, const Matrix& grad_W, const Matrix& grad_D);

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  Matrix mW_, vW_, mD_, vD_;
};

}  // namespace qgk

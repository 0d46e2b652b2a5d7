#include <gtest/gtest.h>

#include <cmath>

#include "qgk/koopman.hpp"
#include "qgk/training.hpp"
#include "test_util.hpp"

using namespace qgk;
using test::fd_gradient;
using test::random_matrix;
using test::rel_err;

namespace {

std::vector<Matrix> exact_trajectories(const Matrix& K, int n, int n_traj, std::mt19937_64& rng) {
  const Matrix A = matrix_exp(K, 1.0);
  std::vector<Matrix> out;
  for (int r = 0; r < n_traj; ++r) {
    Matrix Z(K.rows(), n);
    Z.col(0) = random_matrix(static_cast<int>(K.rows()), 1, rng);
    for (int t = 1; t < n; ++t) Z.col(t) = A * Z.col(t - 1);
    out.push_back(Z);
  }
  return out;
}

PODBasis random_basis(int d, GridShape shape, std::mt19937_64& rng) {
  const Matrix G = random_matrix(static_cast<int>(shape.size()), d, rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  PODBasis b;
  b.modes = (qr.householderQ() * Matrix::Identity(shape.size(), d)).transpose();
  b.singular_values = Vector::LinSpaced(d, double(d), 1.0);
  b.stats.mean.assign(shape.channels, 0.0);
  b.stats.std.assign(shape.channels, 1.0);
  b.shape = shape;
  return b;
}

// Dataset whose snapshots are decode(z_t) for a linear latent system.
Dataset linear_dataset(const PODBasis& basis, const Matrix& K, int n, std::mt19937_64& rng, double amp = 1.0) {
  const Matrix Z = exact_trajectories(K, n, 1, rng)[0] * amp;
  Dataset d;
  d.n_snapshots = n;
  d.n_channels = basis.shape.channels;
  d.ny = basis.shape.ny;
  d.nx = basis.shape.nx;
  d.dt_snapshot_seconds = 18000;
  d.stats = basis.stats;
  const Matrix X = basis.modes.transpose() * Z;
  d.payload.resize(X.size());
  for (Eigen::Index t = 0; t < X.cols(); ++t)
    for (Eigen::Index i = 0; i < X.rows(); ++i) d.payload[t * X.rows() + i] = static_cast<float>(X(i, t));
  return d;
}

}  // namespace

TEST(CtDmd, RecoversKnownStableOperator) {
  std::mt19937_64 rng(1);
  const Matrix K = test::random_stable(8, rng, 0.05);
  ASSERT_LE(spectrum(K).spectral_abscissa, -0.05 + 1e-12);
  const auto traj = exact_trajectories(K, 500, 1, rng);
  const CtdmdResult r = fit_ctdmd(traj, 1.0, 0.0);
  EXPECT_FALSE(r.used_fallback);
  EXPECT_LT(rel_err(assemble(r.W, r.D), K), 1e-6);
  EXPECT_EQ(r.W, r.D);
}

TEST(CtDmd, ConstantTrajectoriesGiveZeroGenerator) {
  std::mt19937_64 rng(2);
  std::vector<Matrix> traj;
  for (int i = 0; i < 7; ++i) {
    const Vector z = random_matrix(5, 1, rng);
    traj.push_back(z.replicate(1, 3));
  }
  const CtdmdResult r = fit_ctdmd(traj, 1.0, 0.0);
  EXPECT_LT((r.A - Matrix::Identity(5, 5)).norm(), 1e-10);
  EXPECT_LT(assemble(r.W, r.D).norm(), 1e-10);
}

TEST(CtDmd, RidgeNeverIncreasesNorm) {
  std::mt19937_64 rng(3);
  auto traj = exact_trajectories(test::random_stable(6, rng, 0.1), 60, 2, rng);
  for (auto& t : traj) t += 0.05 * random_matrix(6, static_cast<int>(t.cols()), rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double ridge : {0.0, 1e-4, 1e-2, 1.0, 10.0, 1e3}) {
    const double n = fit_ctdmd(traj, 1.0, ridge).A.norm();
    EXPECT_LE(n, prev * (1 + 1e-12)) << "ridge " << ridge;
    prev = n;
  }
}

TEST(CtDmd, TimeStepScalesGenerator) {
  std::mt19937_64 rng(4);
  const Matrix K = test::random_stable(4, rng, 0.1);
  const auto traj = exact_trajectories(K, 100, 1, rng);
  EXPECT_LT(rel_err(assemble(fit_ctdmd(traj, 0.5, 0.0).W, fit_ctdmd(traj, 0.5, 0.0).D), 2.0 * K), 1e-6);
}

TEST(CtDmd, BranchCutHandled) {
  // A = -I on a 2D rotation by pi has eigenvalues on the negative real axis.
  Matrix A(2, 2);
  A << -1.0, 0.0, 0.0, -0.5;
  Matrix Z(2, 40);
  Z.col(0) << 1.0, 1.0;
  for (int t = 1; t < 40; ++t) Z.col(t) = A * Z.col(t - 1);
  const CtdmdResult r = fit_ctdmd({Z}, 1.0, 0.0);
  EXPECT_FALSE(r.note.empty());
  EXPECT_TRUE(assemble(r.W, r.D).allFinite());
}

TEST(CtDmd, RejectsBadInput) {
  EXPECT_THROW(fit_ctdmd({Matrix::Zero(4, 3)}, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(fit_ctdmd({Matrix::Zero(2, 10)}, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(fit_ctdmd({Matrix::Zero(2, 10)}, 1.0, -1.0), std::invalid_argument);
}

namespace {

struct Instance {
  PODBasis basis;
  KoopmanOperator op;
  Matrix z0;
  Matrix truth;
};

Instance small_instance(std::uint64_t seed, int T = 3, int B = 3) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.basis = random_basis(6, GridShape{2, 8, 8}, rng);
  in.op = KoopmanOperator{random_matrix(6, 6, rng, 0.3), random_matrix(6, 6, rng, 0.3)};
  in.z0 = random_matrix(6, B, rng);
  in.truth = random_matrix(static_cast<int>(in.basis.state_dim()), B * (T + 1), rng);
  return in;
}

}  // namespace

TEST(Objective, FullGradientMatchesFiniteDifferences) {
  Instance in = small_instance(5);
  LossWeights w;
  w.w_pred = 0.8;
  w.w_latent = 0.3;
  w.w_phys = 0.2;
  w.repulsion_scale = 0.05;
  w.repulsion_bandwidth = 0.5;
  Objective obj(in.basis, w, 3);
  const ObjectiveEval ev = obj.evaluate(in.op, in.z0, in.truth);
  const Matrix fw = fd_gradient(
      [&](const Matrix& W) { return obj.evaluate({W, in.op.D}, in.z0, in.truth, false).terms.total; }, in.op.W);
  const Matrix fdd = fd_gradient(
      [&](const Matrix& D) { return obj.evaluate({in.op.W, D}, in.z0, in.truth, false).terms.total; }, in.op.D);
  EXPECT_LT(rel_err(ev.grad_W, fw), 1e-5);
  EXPECT_LT(rel_err(ev.grad_D, fdd), 1e-5);
}

TEST(Objective, EachComponentGradient) {
  // Isolate every weighted term; the recon term alone does not depend on K.
  Instance in = small_instance(6);
  struct Case {
    const char* name;
    LossWeights w;
  };
  std::vector<Case> cases;
  LossWeights base;
  base.w_pred = 0;
  base.w_latent = 0;
  base.w_phys = 0;
  base.repulsion_scale = 0.05;
  base.repulsion_bandwidth = 0.5;
  {
    LossWeights w = base;
    w.w_pred = 1;
    cases.push_back({"pred", w});
  }
  {
    LossWeights w = base;
    w.w_latent = 1;
    w.repulsion_scale = 0;
    cases.push_back({"whitening", w});
  }
  {
    LossWeights w = base;
    w.w_latent = 1;
    cases.push_back({"latent", w});
  }
  {
    LossWeights w = base;
    w.w_phys = 1;
    cases.push_back({"phys", w});
  }
  for (const auto& c : cases) {
    Objective obj(in.basis, c.w, 3);
    const ObjectiveEval ev = obj.evaluate(in.op, in.z0, in.truth);
    const Matrix fw = fd_gradient(
        [&](const Matrix& W) { return obj.evaluate({W, in.op.D}, in.z0, in.truth, false).terms.total; }, in.op.W);
    const Matrix fdd = fd_gradient(
        [&](const Matrix& D) { return obj.evaluate({in.op.W, D}, in.z0, in.truth, false).terms.total; }, in.op.D);
    EXPECT_LT(rel_err(ev.grad_W, fw), 1e-5) << c.name;
    EXPECT_LT(rel_err(ev.grad_D, fdd), 1e-5) << c.name;
  }
}

TEST(Objective, TermsSumToTotal) {
  Instance in = small_instance(7);
  LossWeights w;
  Objective obj(in.basis, w, 3);
  const ObjectiveTerms t = obj.evaluate(in.op, in.z0, in.truth).terms;
  EXPECT_NEAR(t.recon + w.w_pred * t.pred + w.w_latent * t.latent + w.w_phys * t.phys, t.total, 1e-12);
  EXPECT_DOUBLE_EQ(t.latent, t.whitening + t.repulsion);
  EXPECT_DOUBLE_EQ(t.phys, t.sobolev + t.spectral);
}

TEST(Objective, ThreadCountDoesNotChangeResult) {
  Instance in = small_instance(8, 3, 7);
  LossWeights w;
  Objective one(in.basis, w, 3, 1), four(in.basis, w, 3, 4);
  const ObjectiveEval a = one.evaluate(in.op, in.z0, in.truth);
  const ObjectiveEval b = four.evaluate(in.op, in.z0, in.truth);
  EXPECT_EQ(a.terms.total, b.terms.total);
  EXPECT_EQ(a.grad_W, b.grad_W);
  EXPECT_EQ(a.grad_D, b.grad_D);
}

TEST(Objective, LinearSystemIsAtZeroMinimum) {
  // Exactly linear latent system with the CT-DMD operator. The shared linear
  // encoder averages x_t and x_{t-1}, so the decoder reproduces the averaged
  // pair; scored against that target, all data terms and their gradients vanish.
  std::mt19937_64 rng(9);
  const GridShape shape{2, 8, 8};
  const PODBasis basis = random_basis(6, shape, rng);
  const Matrix K = test::random_stable(6, rng, 0.01, 0.05);
  // Targets follow the RK4 map so the training propagator reproduces them exactly.
  Matrix Zx(6, 200);
  Zx.col(0) = random_matrix(6, 1, rng);
  for (int t = 1; t < 200; ++t) Zx.col(t) = rk4_step(K, Zx.col(t - 1), 1.0);
  const Dataset data = linear_dataset(basis, K, 200, rng);
  const Matrix Z = encode_dual_stream(basis, data, 180);
  const CtdmdResult init = fit_ctdmd({Z}, 1.0, 0.0);
  // float32 storage limits the recovery accuracy.
  EXPECT_LT(rel_err(assemble(init.W, init.D), K), 1e-4);

  LossWeights w;
  w.w_latent = 0;
  const int T = 10;
  Objective obj(basis, w, T);
  const int B = 4;
  Matrix z0(6, B), truth(basis.state_dim(), B * (T + 1));
  for (int b = 0; b < B; ++b) {
    const int t0 = 1 + 17 * b;
    z0.col(b) = 0.5 * (Zx.col(t0) + Zx.col(t0 - 1));
    for (int k = 0; k <= T; ++k) {
      truth.col(b * (T + 1) + k) = basis.modes.transpose() * (0.5 * (Zx.col(t0 + k) + Zx.col(t0 + k - 1)));
    }
  }
  const KoopmanOperator exact{K, K};
  const ObjectiveEval ev = obj.evaluate(exact, z0, truth);
  EXPECT_LT(ev.terms.total, 1e-8);
  EXPECT_LT(std::sqrt(ev.grad_W.squaredNorm() + ev.grad_D.squaredNorm()), 1e-6);
}

TEST(AdamW, ZeroLearningRateLeavesParametersBitIdentical) {
  std::mt19937_64 rng(10);
  TrainConfig cfg;
  cfg.lr = 0.0;
  KoopmanOperator op{random_matrix(4, 4, rng), random_matrix(4, 4, rng)};
  const KoopmanOperator before = op;
  AdamW opt(4, cfg);
  opt.update(op, random_matrix(4, 4, rng), random_matrix(4, 4, rng));
  EXPECT_EQ(op.W, before.W);
  EXPECT_EQ(op.D, before.D);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  KoopmanOperator op{Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, -1.0)};
  AdamW opt(1, cfg);
  opt.update(op, Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, -3.0));
  // Bias-corrected first step moves by lr * g / (|g| + eps') plus decoupled decay.
  const double eps = cfg.adam_eps;
  EXPECT_NEAR(op.W(0, 0), 2.0 - 0.01 * 0.1 * 2.0 - 0.01 * 0.5 / (0.5 + eps), 1e-12);
  EXPECT_NEAR(op.D(0, 0), -1.0 + 0.01 * 0.1 * 1.0 + 0.01 * 3.0 / (3.0 + eps), 1e-12);
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.rollout_len, 10);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.lr, 2e-4);
  EXPECT_EQ(c.weight_decay, 1e-5);
  EXPECT_FALSE(c.stabilize_margin.has_value());
  c.rollout_len = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(training_split(100, 0.1), 90u);
}

namespace {

struct TrainSetup {
  PODBasis basis;
  Dataset data;
};

TrainSetup train_setup(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const GridShape shape{2, 8, 8};
  TrainSetup s;
  s.basis = random_basis(5, shape, rng);
  const Matrix K = test::random_stable(5, rng, 0.02, 0.5);
  s.data = linear_dataset(s.basis, K, 150, rng);
  // Add a component the basis cannot represent so the loss is not trivial.
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (auto& v : s.data.payload) v += n(rng);
  return s;
}

}  // namespace

TEST(Train, ZeroEpochsReturnsCtdmdExactly) {
  const TrainSetup s = train_setup(11);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.rollout_len = 5;
  cfg.batch_size = 8;
  const TrainResult r = train(s.data, s.basis, cfg, LossWeights{});
  EXPECT_EQ(r.final_op.W, r.ctdmd.W);
  EXPECT_EQ(r.final_op.D, r.ctdmd.D);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0].epoch, 0);
}

TEST(Train, NoHoldoutSelectsFinalOperator) {
  const TrainSetup s = train_setup(14);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.rollout_len = 4;
  cfg.batch_size = 8;
  cfg.holdout_fraction = 0.0;
  const TrainResult r = train(s.data, s.basis, cfg, LossWeights{});
  EXPECT_EQ(r.best_epoch, 2);
  EXPECT_EQ(r.best_op.W, r.final_op.W);
  EXPECT_EQ(r.best_op.D, r.final_op.D);
  for (const auto& e : r.log) EXPECT_FALSE(e.val_loss.has_value());
}

TEST(Train, HoldoutSelectionMatchesIndependentEvaluation) {
  const TrainSetup s = train_setup(15);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.rollout_len = 4;
  cfg.batch_size = 8;
  cfg.lr = 5e-2;
  cfg.holdout_fraction = 0.2;
  cfg.stabilize_margin = 0.05;
  const LossWeights w;
  const TrainResult r = train(s.data, s.basis, cfg, w);
  ASSERT_EQ(r.log.size(), 5u);
  int argmin = 0;
  for (int e = 0; e < 5; ++e) {
    ASSERT_TRUE(r.log[e].val_loss.has_value());
    if (*r.log[e].val_loss < *r.log[argmin].val_loss) argmin = e;
  }
  EXPECT_EQ(r.best_epoch, argmin);
  EXPECT_LE(spectrum(r.best_op.K()).spectral_abscissa, -0.05 + 1e-9);

  // Recompute the holdout objective of the selected operator segment by segment.
  const std::size_t n_train = training_split(s.data.n_snapshots, cfg.holdout_fraction);
  const Matrix lat = encode_dual_stream(s.basis, s.data, s.data.n_snapshots);
  Objective obj(s.basis, w, cfg.rollout_len);
  double sum = 0.0;
  int batches = 0;
  std::vector<std::size_t> starts;
  for (std::size_t t = n_train; t + cfg.rollout_len < s.data.n_snapshots; ++t) starts.push_back(t);
  for (std::size_t first = 0; first < starts.size(); first += cfg.batch_size) {
    const std::size_t n = std::min<std::size_t>(cfg.batch_size, starts.size() - first);
    Matrix z0(s.basis.d(), n);
    Matrix truth(s.data.state_dim(), n * (cfg.rollout_len + 1));
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t t = starts[first + b];
      z0.col(b) = lat.col(t - 1);
      for (int k = 0; k <= cfg.rollout_len; ++k) {
        const auto snap = s.data.snapshot(t + k);
        for (std::size_t i = 0; i < snap.size(); ++i) truth(i, b * (cfg.rollout_len + 1) + k) = snap[i];
      }
    }
    sum += obj.evaluate(r.best_op, z0, truth, false).terms.total;
    ++batches;
  }
  EXPECT_NEAR(sum / batches, *r.log[argmin].val_loss, 1e-12 * sum / batches);
}

TEST(Train, DeterministicAndLogConsistent) {
  const TrainSetup s = train_setup(12);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.rollout_len = 5;
  cfg.batch_size = 8;
  cfg.seed = 99;
  cfg.stabilize_margin = 0.01;
  LossWeights w;
  std::vector<EpochRecord> seen;
  const TrainResult a = train(s.data, s.basis, cfg, w, [&](const EpochRecord& r) { seen.push_back(r); });
  const TrainResult b = train(s.data, s.basis, cfg, w);
  EXPECT_EQ(a.final_op.W, b.final_op.W);
  EXPECT_EQ(a.final_op.D, b.final_op.D);
  ASSERT_EQ(a.log.size(), 4u);
  ASSERT_EQ(seen.size(), 4u);
  for (const auto& r : a.log) {
    const auto& t = r.terms;
    EXPECT_NEAR(t.recon + w.w_pred * t.pred + w.w_latent * t.latent + w.w_phys * t.phys, t.total,
                1e-12 * std::max(1.0, t.total));
  }
  for (std::size_t e = 1; e < a.log.size(); ++e) EXPECT_LE(a.log[e].spectral_abscissa, -0.01 + 1e-9);
  EXPECT_LE(spectrum(a.final_op.K()).spectral_abscissa, -0.01 + 1e-9);
}

TEST(Train, ThreadedRunMatchesSequential) {
  const TrainSetup s = train_setup(13);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.rollout_len = 4;
  cfg.batch_size = 8;
  const TrainResult a = train(s.data, s.basis, cfg, LossWeights{});
  cfg.threads = 3;
  const TrainResult b = train(s.data, s.basis, cfg, LossWeights{});
  EXPECT_EQ(a.final_op.W, b.final_op.W);
  EXPECT_EQ(a.final_op.D, b.final_op.D);
}

TEST(Train, ImprovesPerturbedInitialisation) {
  const TrainSetup s = train_setup(14);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.rollout_len = 5;
  cfg.batch_size = 8;
  cfg.lr = 2e-3;
  LossWeights w;
  w.w_latent = 0.0;
  const Matrix Z = encode_dual_stream(s.basis, s.data, training_split(s.data.n_snapshots, 0.1));
  const CtdmdResult c = fit_ctdmd({Z}, 1.0, 0.0);
  std::mt19937_64 rng(15);
  KoopmanOperator start{c.W, c.D + 0.05 * random_matrix(5, 5, rng)};
  const TrainResult r = train_from(start, s.data, s.basis, cfg, w);
  EXPECT_LT(r.log[1].terms.total, r.log[0].terms.total);
}

TEST(Train, RejectsIncompatibleInputs) {
  const TrainSetup s = train_setup(16);
  TrainConfig cfg;
  cfg.rollout_len = 200;
  EXPECT_THROW(train(s.data, s.basis, cfg, LossWeights{}), std::invalid_argument);
  PODBasis other = s.basis;
  other.shape.nx = 4;
  cfg.rollout_len = 5;
  EXPECT_THROW(train(s.data, other, cfg, LossWeights{}), std::invalid_argument);
}

TEST(EncodeDualStream, ColumnsAverageConsecutiveSnapshots) {
  const TrainSetup s = train_setup(17);
  const Matrix Z = encode_dual_stream(s.basis, s.data, 10);
  ASSERT_EQ(Z.cols(), 9);
  for (int t = 1; t < 10; ++t) {
    const Vector e = encode(s.basis, s.data.snapshot_vector(t), s.data.snapshot_vector(t - 1));
    EXPECT_LT((Z.col(t - 1) - e).norm(), 1e-12 * e.norm());
  }
}

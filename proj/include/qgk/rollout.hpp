#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qgk/dataset.hpp"
#include "qgk/diagnostics.hpp"
#include "qgk/koopman.hpp"
#include "qgk/pod.hpp"
#include "qgk/qg_model.hpp"

namespace qgk {

enum class PropagationMode { kMatrixExp, kRk4 };

struct RolloutOptions {
  std::size_t start = 1;        // index of the initial snapshot (needs start - 1 as history)
  std::size_t horizon = 0;      // number of query steps
  PropagationMode mode = PropagationMode::kMatrixExp;
  double dt_query = 1.0;        // snapshot intervals per query step
  DriftMode drift_mode = DriftMode::kHeadTailMean;
  double drift_fraction = 0.05;
  std::size_t err0_step = 1;    // step whose error anchors the growth rate
  std::size_t max_lag = 100;
  bool keep_latents = false;
};

struct StepRecord {
  std::size_t step = 0;
  double t_units = 0.0;     // snapshot intervals since the initial state
  double t_seconds = 0.0;
  std::optional<double> rmse;
  std::optional<double> acc;
  std::optional<double> error_norm;  // global L2 over normalised channels
  double ke = 0.0;                   // depth-weighted domain-mean KE, m^2 s^-2
  double enstrophy = 0.0;            // depth-weighted 0.5 <q^2>, s^-2
  std::optional<double> truth_ke;
  std::optional<double> truth_enstrophy;
  double max_abs = 0.0;              // max |decoded| in normalised units
};

struct RolloutReport {
  std::vector<StepRecord> per_step;  // steps 1..horizon
  BinnedSpectrum ke_spectrum;        // time mean over the rollout
  BinnedSpectrum truth_ke_spectrum;  // time mean over steps with truth
  std::vector<double> autocorrelation;
  std::vector<double> truth_autocorrelation;
  std::optional<double> ke_drift;
  std::optional<double> enstrophy_drift;
  std::optional<double> truth_ke_drift;
  std::optional<double> lambda;      // per snapshot interval
  std::optional<double> lambda_T;    // elapsed time used for lambda
  std::size_t horizon_steps = 0;
  double dt_query = 1.0;
  double dt_snapshot_seconds = 0.0;
  std::string mode;
  bool blew_up = false;
  std::optional<std::size_t> blowup_step;
  double max_abs_pred = 0.0;
  double max_abs_truth = 0.0;
  std::string error_norm = "global L2 over normalised channels";
  std::string lambda_time_unit = "snapshot interval";
  std::vector<Vector> latents;       // z at steps 0..horizon when keep_latents
  Vector initial_latent;
};

// Encodes (x_start, x_start-1), propagates the latent `horizon` query
// steps and scores every decoded state against the truth where a truth
// snapshot exists at that time. Truth is renormalised to the basis stats
// when they differ. `physics` supplies L, kd2, delta, H for KE/enstrophy;
// its grid is replaced by the dataset's.
RolloutReport evaluate_rollout(const KoopmanOperator& op, const PODBasis& basis, const Dataset& truth,
                               const QGParams& physics, const RolloutOptions& options);

std::string to_string(PropagationMode mode);
PropagationMode parse_mode(const std::string& name);

}  // namespace qgk

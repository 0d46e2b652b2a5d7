#include "qgk/rollout.hpp"

#include <cmath>

namespace qgk {

std::string to_string(PropagationMode mode) {
  return mode == PropagationMode::kMatrixExp ? "matrix_exp" : "rk4";
}

PropagationMode parse_mode(const std::string& name) {
  if (name == "matrix_exp") return PropagationMode::kMatrixExp;
  if (name == "rk4") return PropagationMode::kRk4;
  throw std::invalid_argument("unknown propagation mode: " + name);
}

namespace {

bool same_stats(const NormalizationStats& a, const NormalizationStats& b) {
  return a.mean == b.mean && a.std == b.std;
}

struct PhysicalDiagnostics {
  double ke = 0.0;
  double enstrophy = 0.0;
  BinnedSpectrum spectrum;
};

PhysicalDiagnostics physical_diagnostics(QGSolver& solver, const Vector& x_norm,
                                         const NormalizationStats& stats, GridShape shape) {
  const Vector x = denormalize(x_norm, stats, shape);
  const std::size_t np = shape.plane();
  const Eigen::ArrayXd q = x.head(2 * np).array();
  Eigen::ArrayXcd q_hat = solver.to_spectral(q);
  q_hat[0] = 0.0;
  q_hat[solver.spectral_plane()] = 0.0;
  PhysicalDiagnostics out;
  out.spectrum = ke_spectrum(solver, solver.invert_pv(q_hat));
  out.ke = out.spectrum.total();
  const auto ens = enstrophy({q.data(), 2 * np}, np);
  const auto& p = solver.params();
  out.enstrophy = (p.H1 * ens[0] + p.H2 * ens[1]) / (p.H1 + p.H2);
  return out;
}

void accumulate(BinnedSpectrum& acc, const BinnedSpectrum& s) {
  if (acc.energy.empty()) {
    acc = s;
    return;
  }
  for (std::size_t b = 0; b < s.energy.size(); ++b) acc.energy[b] += s.energy[b];
}

}  // namespace

RolloutReport evaluate_rollout(const KoopmanOperator& op, const PODBasis& basis, const Dataset& truth_in,
                               const QGParams& physics, const RolloutOptions& options) {
  if (truth_in.shape() != basis.shape) throw std::invalid_argument("evaluate_rollout: grid mismatch");
  if (op.d() != basis.d()) throw std::invalid_argument("evaluate_rollout: operator/basis dimension mismatch");
  if (options.start < 1 || options.start >= truth_in.n_snapshots) {
    throw std::invalid_argument("evaluate_rollout: start must have one snapshot of history");
  }
  if (!(options.dt_query > 0)) throw std::invalid_argument("evaluate_rollout: dt_query must be positive");
  if (basis.shape.channels != 4) throw std::invalid_argument("evaluate_rollout: expected (q1, q2, psi1, psi2)");

  const Dataset renorm = same_stats(truth_in.stats, basis.stats) ? Dataset{} : renormalize(truth_in, basis.stats);
  const Dataset& truth = same_stats(truth_in.stats, basis.stats) ? truth_in : renorm;

  QGParams p = physics;
  p.nx = static_cast<int>(truth.nx);
  p.ny = static_cast<int>(truth.ny);
  QGSolver solver(p);
  const GridShape shape = basis.shape;
  const std::size_t N = shape.size();
  const std::size_t np = shape.plane();

  RolloutReport rep;
  rep.horizon_steps = options.horizon;
  rep.dt_query = options.dt_query;
  rep.dt_snapshot_seconds = truth.dt_snapshot_seconds;
  rep.mode = to_string(options.mode);
  for (std::size_t i = 0; i < truth.payload.size(); ++i) {
    rep.max_abs_truth = std::max(rep.max_abs_truth, static_cast<double>(std::abs(truth.payload[i])));
  }

  LatentState state = encode_state(basis, truth.snapshot_vector(options.start),
                                   truth.snapshot_vector(options.start - 1), 0.0);
  rep.initial_latent = state.z;
  if (options.keep_latents) rep.latents.push_back(state.z);

  const Matrix K = op.K();
  Propagator propagator(K);
  const Vector clim = Vector::Zero(static_cast<Eigen::Index>(N));

  std::vector<Vector> pred_q1, truth_q1;
  std::vector<double> ke_series, ens_series, truth_ke_series;
  std::size_t spectrum_count = 0, truth_spectrum_count = 0;
  std::optional<double> err0;
  std::optional<double> err0_time;

  for (std::size_t j = 1; j <= options.horizon; ++j) {
    if (options.mode == PropagationMode::kMatrixExp) {
      state = propagator.propagate(state, options.dt_query);
    } else {
      state = {rk4_step(K, state.z, options.dt_query), state.t + options.dt_query};
    }
    if (options.keep_latents) rep.latents.push_back(state.z);
    const Vector x = decode(basis, state.z);
    if (!x.allFinite()) {
      rep.blew_up = true;
      rep.blowup_step = j;
      break;
    }
    StepRecord rec;
    rec.step = j;
    rec.t_units = state.t;
    rec.t_seconds = state.t * truth.dt_snapshot_seconds;
    rec.max_abs = x.cwiseAbs().maxCoeff();
    rep.max_abs_pred = std::max(rep.max_abs_pred, rec.max_abs);

    const PhysicalDiagnostics pd = physical_diagnostics(solver, x, basis.stats, shape);
    rec.ke = pd.ke;
    rec.enstrophy = pd.enstrophy;
    accumulate(rep.ke_spectrum, pd.spectrum);
    ++spectrum_count;
    pred_q1.push_back(x.head(np));
    ke_series.push_back(pd.ke);
    ens_series.push_back(pd.enstrophy);

    // Truth exists only at whole snapshot offsets.
    const double offset = state.t;
    const double rounded = std::round(offset);
    const auto idx = static_cast<std::size_t>(rounded) + options.start;
    if (std::abs(offset - rounded) < 1e-9 && idx < truth.n_snapshots) {
      const Vector xt = truth.snapshot_vector(idx);
      rec.rmse = rmse({x.data(), N}, {xt.data(), N});
      rec.acc = acc({x.data(), N}, {xt.data(), N}, {clim.data(), N});
      rec.error_norm = (x - xt).norm();
      const PhysicalDiagnostics td = physical_diagnostics(solver, xt, basis.stats, shape);
      rec.truth_ke = td.ke;
      rec.truth_enstrophy = td.enstrophy;
      accumulate(rep.truth_ke_spectrum, td.spectrum);
      ++truth_spectrum_count;
      truth_q1.push_back(xt.head(np));
      truth_ke_series.push_back(td.ke);
      if (!err0 && j >= options.err0_step) {
        err0 = rec.error_norm;
        err0_time = state.t;
      }
    }
    rep.per_step.push_back(rec);
  }

  if (spectrum_count > 0) {
    for (double& e : rep.ke_spectrum.energy) e /= static_cast<double>(spectrum_count);
  }
  if (truth_spectrum_count > 0) {
    for (double& e : rep.truth_ke_spectrum.energy) e /= static_cast<double>(truth_spectrum_count);
  }
  auto series_autocorr = [&](const std::vector<Vector>& s) -> std::vector<double> {
    if (s.size() < 2) return {};
    const std::size_t lag = std::min(options.max_lag, s.size() - 1);
    Matrix m(s.size(), static_cast<Eigen::Index>(np));
    for (std::size_t i = 0; i < s.size(); ++i) m.row(i) = s[i].transpose();
    return autocorrelation(m, lag).values;
  };
  rep.autocorrelation = series_autocorr(pred_q1);
  rep.truth_autocorrelation = series_autocorr(truth_q1);

  auto safe_drift = [&](const std::vector<double>& s) -> std::optional<double> {
    if (s.empty() || s.front() == 0.0) return std::nullopt;
    try {
      return drift(s, options.drift_mode, options.drift_fraction);
    } catch (const std::domain_error&) {
      return std::nullopt;
    }
  };
  rep.ke_drift = safe_drift(ke_series);
  rep.enstrophy_drift = safe_drift(ens_series);
  rep.truth_ke_drift = safe_drift(truth_ke_series);

  // Growth rate between the anchor step and the last step with truth.
  if (err0 && *err0 > 0.0) {
    for (auto it = rep.per_step.rbegin(); it != rep.per_step.rend(); ++it) {
      if (!it->error_norm) continue;
      const double T = it->t_units - *err0_time;
      if (T > 0) {
        rep.lambda = error_growth_rate(*err0, *it->error_norm, T);
        rep.lambda_T = T;
      }
      break;
    }
  }
  return rep;
}

}  // namespace qgk

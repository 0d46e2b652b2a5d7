#include "qgk/bench.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <json.hpp>

namespace qgk {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TimingStats time_median(const std::function<void()>& fn, std::size_t samples, std::size_t warmup,
                        double min_sample_seconds) {
  if (samples == 0) throw std::invalid_argument("bench: need at least one timed sample");
  for (std::size_t i = 0; i < warmup; ++i) fn();

  std::size_t inner = 1;
  for (;;) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < inner; ++i) fn();
    const double el = seconds_since(t0);
    if (el >= min_sample_seconds || inner >= (std::size_t{1} << 24)) break;
    inner *= 2;
  }

  std::vector<double> t(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < inner; ++i) fn();
    t[s] = seconds_since(t0) / static_cast<double>(inner);
  }
  std::vector<double> sorted = t;
  std::sort(sorted.begin(), sorted.end());
  TimingStats st;
  st.samples = samples;
  st.inner = inner;
  const std::size_t n = sorted.size();
  st.median_s = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  st.min_s = sorted.front();
  st.max_s = sorted.back();
  return st;
}

BenchReport run_bench(const KoopmanOperator& op, const PODBasis& basis, const QGParams& params,
                      const BenchOptions& options) {
  if (options.n_steps == 0) throw std::invalid_argument("bench: n_steps must be positive");
  if (op.d() != basis.d()) throw std::invalid_argument("bench: operator and basis latent sizes differ");
  if (options.solver_substeps < 1) throw std::invalid_argument("bench: solver_substeps must be >= 1");

  BenchReport rep;
  rep.d = op.d();
  rep.decode_shape = basis.shape;
  rep.solver_nx = params.nx;
  rep.solver_ny = params.ny;
  rep.solver_substeps = options.solver_substeps;

  Eigen::setNbThreads(1);
  Propagator prop(op.K());
  const Matrix& A = prop.transition(1.0);
  Vector z = Vector::Ones(op.d()) / std::sqrt(static_cast<double>(op.d()));
  Vector z_next(op.d());
  Vector x(basis.state_dim());
  const double norm0 = z.norm();

  // Renormalise so repeated products neither vanish nor overflow.
  auto latent_step = [&] {
    z_next.noalias() = A * z;
    z.swap(z_next);
    const double n = z.norm();
    if (n > 1e100 || n < 1e-100 || !std::isfinite(n)) z.setConstant(norm0 / std::sqrt(double(z.size())));
  };
  rep.latent = time_median(latent_step, options.n_steps, options.warmup, options.min_sample_seconds);
  if (options.latent_only) return rep;

  auto surrogate_step = [&] {
    latent_step();
    x.noalias() = basis.modes.transpose() * z;
  };
  rep.surrogate = time_median(surrogate_step, options.n_steps, options.warmup, options.min_sample_seconds);

  QGSolver solver(params);
  QGState state = solver.random_initial_state(12345);
  TendencyHistory hist;
  for (int i = 0; i < 3; ++i) solver.step(state, hist);
  auto solver_step = [&] {
    for (int i = 0; i < options.solver_substeps; ++i) solver.step(state, hist);
  };
  rep.solver = time_median(solver_step, options.n_steps, std::min<std::size_t>(options.warmup, 2), 0.0);
  rep.ratio = rep.solver.median_s / rep.surrogate.median_s;
  return rep;
}

std::string bench_to_json(const BenchReport& r, const std::string& config_yaml) {
  using nlohmann::json;
  auto timing = [](const TimingStats& t) {
    return json{{"samples", t.samples}, {"inner", t.inner}, {"median_s", t.median_s},
                {"min_s", t.min_s},     {"max_s", t.max_s}};
  };
  json j = {{"d", r.d},
            {"decode_grid", {r.decode_shape.channels, r.decode_shape.ny, r.decode_shape.nx}},
            {"solver_grid", {r.solver_ny, r.solver_nx}},
            {"solver_substeps", r.solver_substeps},
            {"latent_only", timing(r.latent)},
            {"config", config_yaml}};
  if (r.surrogate.samples > 0) {
    j["surrogate"] = timing(r.surrogate);
    j["solver"] = timing(r.solver);
    j["ratio"] = r.ratio;
  }
  return j.dump(2) + "\n";
}

}  // namespace qgk

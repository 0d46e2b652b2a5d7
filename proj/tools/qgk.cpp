// qgk: command-line front end for the QG Koopman pipeline.
// Exit codes: 0 success, 1 usage, 2 numerical failure, 3 I/O error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>

#include <CLI11.hpp>

#include "qgk/bench.hpp"
#include "qgk/config.hpp"
#include "qgk/dataset.hpp"
#include "qgk/koopman.hpp"
#include "qgk/pod.hpp"
#include "qgk/report_io.hpp"
#include "qgk/rollout.hpp"
#include "qgk/training.hpp"

namespace fs = std::filesystem;
using namespace qgk;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct Globals {
  int threads = 0;
  bool deterministic = false;
  bool quiet = false;
};

int effective_threads(const Globals& g, int from_config) {
  if (g.deterministic) return 1;
  if (g.threads > 0) return g.threads;
  if (const char* env = std::getenv("QGK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("QGK_THREADS must be a positive integer");
  }
  return from_config;
}

RunConfig config_or_default(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  return c.finalize();
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void check_compatible(const RunConfig& cfg, const Dataset& data) {
  if (data.nx != static_cast<std::uint32_t>(cfg.dataset.out_resolution) ||
      data.ny != static_cast<std::uint32_t>(cfg.dataset.out_resolution)) {
    throw std::invalid_argument("dataset grid " + std::to_string(data.ny) + "x" + std::to_string(data.nx) +
                                " does not match config out_resolution " +
                                std::to_string(cfg.dataset.out_resolution));
  }
  if (static_cast<std::size_t>(cfg.model.d) > data.state_dim()) {
    throw std::invalid_argument("latent dimension exceeds state dimension");
  }
}

int cmd_config_init(const std::string& out) {
  RunConfig c;
  c.finalize();
  if (out.empty() || out == "-") {
    std::cout << to_yaml(c);
  } else {
    save_config(c, out);
  }
  return 0;
}

int cmd_generate(const Globals& g, const std::string& cfg_path, const std::string& out,
                 const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = config_or_default(cfg_path);
  if (seed) {
    cfg.seed = *seed;
    cfg.finalize();
  }
  const auto n = expected_snapshots(cfg.physics, cfg.dataset);
  if (n == 0) throw std::invalid_argument("run_days too short to record a single snapshot");
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t last_pct = -1;
  ProgressFn progress;
  if (!g.quiet) {
    progress = [&](std::int64_t step, std::int64_t total) {
      const std::int64_t pct = total > 0 ? (100 * step) / total : 100;
      if (pct / 10 != last_pct / 10) {
        std::cerr << "generate: " << pct << "%\n";
        last_pct = pct;
      }
    };
  }
  const Dataset data = generate_dataset(cfg.physics, cfg.dataset, progress);
  write_dataset(data, out);
  write_config_echo(out, to_yaml(cfg));
  std::cout << "snapshots: " << data.n_snapshots << "\n"
            << "grid: " << data.n_channels << "x" << data.ny << "x" << data.nx << "\n"
            << "dt_snapshot_seconds: " << data.dt_snapshot_seconds << "\n"
            << "wall_seconds: " << ms_since(t0) / 1000.0 << "\n";
  const char* names[] = {"q1", "q2", "psi1", "psi2"};
  std::cout << std::setprecision(9);
  for (std::size_t c = 0; c < data.stats.mean.size(); ++c) {
    std::cout << "stats " << (c < 4 ? names[c] : "ch") << ": mean " << data.stats.mean[c] << " std "
              << data.stats.std[c] << "\n";
  }
  return 0;
}

int cmd_pod(const std::string& cfg_path, const std::string& data_path, const std::string& out) {
  const RunConfig cfg = config_or_default(cfg_path);
  const Dataset data = read_dataset(data_path);
  check_compatible(cfg, data);
  const std::size_t n_train = training_split(data.n_snapshots, cfg.model.train.holdout_fraction);
  const PODBasis basis = fit_pod(data, cfg.model.d, n_train);
  write_basis(basis, out);
  write_config_echo(out, to_yaml(cfg));
  const Matrix X = data.snapshot_matrix(0, n_train);
  std::cout << "d: " << basis.d() << "\n"
            << "state_dim: " << basis.state_dim() << "\n"
            << "captured_energy: " << captured_energy_fraction(basis, X) << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& cfg_path, const std::string& data_path,
              const std::string& out, std::string basis_out, std::string log_out) {
  RunConfig cfg = config_or_default(cfg_path);
  cfg.model.train.threads = effective_threads(g, cfg.model.train.threads);
  const Dataset data = read_dataset(data_path);
  check_compatible(cfg, data);
  if (basis_out.empty()) basis_out = out + ".basis";
  if (log_out.empty()) log_out = out + ".log.jsonl";
  const std::string yaml = to_yaml(cfg);

  const std::size_t n_train = training_split(data.n_snapshots, cfg.model.train.holdout_fraction);
  const PODBasis basis = fit_pod(data, cfg.model.d, n_train);
  write_basis(basis, basis_out);
  write_config_echo(basis_out, yaml);

  std::ofstream log(log_out);
  if (!log) throw IoError("cannot open for writing: " + log_out);
  const auto on_epoch = [&](const EpochRecord& r) {
    log << epoch_record_json(r) << "\n";
    log.flush();
    if (!g.quiet) {
      std::cerr << "epoch " << r.epoch << " loss " << r.terms.total;
      if (r.val_loss) std::cerr << " val " << *r.val_loss;
      std::cerr << " abscissa " << r.spectral_abscissa << "\n";
    }
  };
  const TrainResult res = train(data, basis, cfg.model.train, cfg.model.weights, on_epoch);
  if (!log) throw IoError("write failed: " + log_out);
  write_config_echo(log_out, yaml);
  write_operator(res.best_op, out);
  write_config_echo(out, yaml);
  if (!res.ctdmd.note.empty()) std::cerr << "ctdmd: " << res.ctdmd.note << "\n";
  std::cout << "d: " << res.final_op.d() << "\n"
            << "n_train: " << res.n_train << "\n"
            << "initial_loss: " << res.log.front().terms.total << "\n"
            << "final_loss: " << res.log.back().terms.total << "\n"
            << "best_epoch: " << res.best_epoch << "\n"
            << "spectral_abscissa: " << spectrum(res.best_op.K()).spectral_abscissa << "\n";
  return 0;
}

struct RolloutArgs {
  std::string cfg, op, basis, data, out;
  std::optional<std::size_t> horizon, start;
  std::optional<double> dt_query_hours;
  std::optional<std::string> mode;
  bool save_latents = false;
};

int cmd_rollout(const RolloutArgs& a) {
  RunConfig cfg = config_or_default(a.cfg);
  if (a.horizon) cfg.eval.horizon = *a.horizon;
  if (a.start) cfg.eval.start = *a.start;
  if (a.dt_query_hours) cfg.eval.dt_query_hours = *a.dt_query_hours;
  if (a.mode) cfg.eval.mode = *a.mode;
  cfg.finalize();
  const KoopmanOperator op = read_operator(a.op);
  const PODBasis basis = read_basis(a.basis);
  const Dataset data = read_dataset(a.data);
  RolloutOptions opts = cfg.rollout_options(data.dt_snapshot_seconds);
  opts.keep_latents = a.save_latents;
  const RolloutReport rep = evaluate_rollout(op, basis, data, cfg.physics, opts);
  write_report(rep, a.out, to_yaml(cfg), spectrum(op.K()));
  if (a.save_latents) {
    std::ofstream out(fs::path(a.out) / "latents.csv");
    if (!out) throw IoError("cannot write latents.csv");
    out << std::setprecision(17) << "step,t_units";
    for (int i = 0; i < op.d(); ++i) out << ",z" << i;
    out << "\n";
    for (std::size_t s = 0; s < rep.latents.size(); ++s) {
      out << s << ',' << static_cast<double>(s) * rep.dt_query;
      for (Eigen::Index i = 0; i < rep.latents[s].size(); ++i) out << ',' << rep.latents[s][i];
      out << "\n";
    }
    if (!out) throw IoError("write failed: latents.csv");
  }
  std::cout << "steps: " << rep.per_step.size() << "\n"
            << "blew_up: " << (rep.blew_up ? "true" : "false") << "\n";
  if (rep.lambda) std::cout << "lambda: " << *rep.lambda << "\n";
  if (rep.ke_drift) std::cout << "ke_drift: " << *rep.ke_drift << "\n";
  if (rep.blew_up) {
    std::cerr << "rollout blew up at step " << rep.blowup_step.value_or(0) << "\n";
    return kExitNumerical;
  }
  return 0;
}

int cmd_spectrum(const std::string& op_path, const std::string& out) {
  const KoopmanOperator op = read_operator(op_path);
  const OperatorSpectrum spec = spectrum(op.K());
  if (out.empty() || out == "-") {
    std::cout << "re,im\n" << std::setprecision(17);
    for (const auto& l : spec.eigenvalues) std::cout << l.real() << ',' << l.imag() << "\n";
  } else {
    write_spectrum_csv(spec, out);
  }
  std::cerr << std::setprecision(17) << "spectral_abscissa: " << spec.spectral_abscissa << "\n";
  return 0;
}

int cmd_bench(const std::string& cfg_path, const std::string& op_path, const std::string& basis_path,
              std::size_t n_steps, bool latent_only, const std::string& out) {
  const RunConfig cfg = config_or_default(cfg_path);
  const KoopmanOperator op = read_operator(op_path);
  const PODBasis basis = read_basis(basis_path);
  BenchOptions opts;
  opts.n_steps = n_steps;
  opts.latent_only = latent_only;
  const BenchReport rep = run_bench(op, basis, cfg.physics, opts);
  const std::string json = bench_to_json(rep, to_yaml(cfg));
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f || !(f << json)) throw IoError("cannot write " + out);
  }
  std::cout << std::setprecision(6) << "latent_step_seconds: " << rep.latent.median_s << "\n";
  if (!latent_only) {
    std::cout << "surrogate_step_seconds: " << rep.surrogate.median_s << "\n"
              << "solver_step_seconds: " << rep.solver.median_s << "\n"
              << "ratio: " << rep.ratio << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman surrogate pipeline for two-layer QG turbulence"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (overrides QGK_THREADS and config)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Force sequential reductions");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");

  std::function<int()> action;

  auto* config = app.add_subcommand("config", "Configuration utilities");
  config->require_subcommand(1);
  config->fallthrough();
  auto* init = config->add_subcommand("init", "Print or write the default configuration");
  std::string init_out;
  init->add_option("-o,--out", init_out, "Output path (default stdout)");
  init->callback([&] { action = [&] { return cmd_config_init(init_out); }; });

  std::string cfg_path, data_path, out_path, op_path, basis_path, log_path;

  auto* gen = app.add_subcommand("generate", "Run the QG solver and write a QGK1 dataset");
  std::optional<std::uint64_t> seed;
  gen->add_option("-c,--config", cfg_path, "Config file");
  gen->add_option("-o,--out", out_path, "Dataset path")->required();
  gen->add_option("--seed", seed, "Override the config seed");
  gen->callback([&] { action = [&] { return cmd_generate(g, cfg_path, out_path, seed); }; });

  auto* pod = app.add_subcommand("pod", "Fit a POD basis (QGKB) on the training split");
  pod->add_option("-c,--config", cfg_path, "Config file");
  pod->add_option("-d,--data", data_path, "Dataset path")->required();
  pod->add_option("-o,--out", out_path, "Basis path")->required();
  pod->callback([&] { action = [&] { return cmd_pod(cfg_path, data_path, out_path); }; });

  auto* tr = app.add_subcommand("train", "Fit POD, initialise by CT-DMD and train the operator");
  tr->add_option("-c,--config", cfg_path, "Config file");
  tr->add_option("-d,--data", data_path, "Dataset path")->required();
  tr->add_option("-o,--out", out_path, "Operator path (QGKO)")->required();
  tr->add_option("--basis-out", basis_path, "Basis path (default <out>.basis)");
  tr->add_option("--log", log_path, "Training log (default <out>.log.jsonl)");
  tr->callback([&] { action = [&] { return cmd_train(g, cfg_path, data_path, out_path, basis_path, log_path); }; });

  auto* ro = app.add_subcommand("rollout", "Roll the operator out and write a report");
  RolloutArgs ra;
  ro->add_option("-c,--config", ra.cfg, "Config file");
  ro->add_option("--operator", ra.op, "Operator path")->required();
  ro->add_option("--basis", ra.basis, "Basis path")->required();
  ro->add_option("-d,--data", ra.data, "Truth dataset")->required();
  ro->add_option("-o,--out", ra.out, "Report directory")->required();
  ro->add_option("--horizon", ra.horizon, "Number of query steps");
  ro->add_option("--start", ra.start, "Initial snapshot index (>= 1)");
  ro->add_option("--dt-query-hours", ra.dt_query_hours, "Query step in hours");
  ro->add_option("--mode", ra.mode, "matrix_exp or rk4");
  ro->add_flag("--save-latents", ra.save_latents, "Also write latents.csv");
  ro->callback([&] { action = [&] { return cmd_rollout(ra); }; });

  auto* sp = app.add_subcommand("spectrum", "Eigenvalues of an operator as CSV");
  sp->add_option("--operator", op_path, "Operator path")->required();
  sp->add_option("-o,--out", out_path, "CSV path (default stdout)");
  sp->callback([&] { action = [&] { return cmd_spectrum(op_path, out_path); }; });

  auto* be = app.add_subcommand("bench", "Time surrogate steps against solver steps");
  std::size_t n_steps = 100;
  bool latent_only = false;
  be->add_option("-c,--config", cfg_path, "Config file");
  be->add_option("--operator", op_path, "Operator path")->required();
  be->add_option("--basis", basis_path, "Basis path")->required();
  be->add_option("-n,--n-steps", n_steps, "Timed samples");
  be->add_flag("--latent-only", latent_only, "Time only the latent propagation");
  be->add_option("-o,--out", out_path, "JSON report path");
  be->callback([&] { action = [&] { return cmd_bench(cfg_path, op_path, basis_path, n_steps, latent_only, out_path); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    return action();
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

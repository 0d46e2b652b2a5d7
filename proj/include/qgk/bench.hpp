#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "qgk/koopman.hpp"
#include "qgk/pod.hpp"
#include "qgk/qg_model.hpp"

namespace qgk {

struct TimingStats {
  std::size_t samples = 0;
  std::size_t inner = 1;     // repetitions inside one timed sample
  double median_s = 0.0;     // per repetition
  double min_s = 0.0;
  double max_s = 0.0;
};

struct BenchOptions {
  std::size_t n_steps = 100;      // timed samples per measurement
  std::size_t warmup = 10;
  int solver_substeps = 5;        // solver steps per snapshot interval
  double min_sample_seconds = 1e-3;
  bool latent_only = false;       // skip decode and solver timings
};

struct BenchReport {
  int d = 0;
  GridShape decode_shape;
  int solver_nx = 0;
  int solver_ny = 0;
  int solver_substeps = 0;
  TimingStats latent;     // cached exp(K) matvec only
  TimingStats surrogate;  // matvec + decode
  TimingStats solver;     // solver_substeps inner steps
  double ratio = 0.0;     // solver / surrogate per snapshot interval
};

// Times a callable: warm-up, then `samples` timed runs of `inner` calls
// (inner chosen so one sample lasts at least min_sample_seconds).
TimingStats time_median(const std::function<void()>& fn, std::size_t samples, std::size_t warmup,
                        double min_sample_seconds);

// Single-threaded wall-clock comparison of one surrogate snapshot step with
// one emulated solver snapshot interval. Throws std::invalid_argument for
// n_steps == 0.
BenchReport run_bench(const KoopmanOperator& op, const PODBasis& basis, const QGParams& params,
                      const BenchOptions& options);

std::string bench_to_json(const BenchReport& report, const std::string& config_yaml);

}  // namespace qgk

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "qgk/dataset.hpp"
#include "qgk/losses.hpp"
#include "qgk/qg_model.hpp"
#include "qgk/rollout.hpp"
#include "qgk/training.hpp"

namespace qgk {

struct ModelConfig {
  int d = 128;
  TrainConfig train;
  LossWeights weights;
};

struct EvalConfig {
  std::size_t horizon = 2000;
  std::string mode = "matrix_exp";
  double dt_query_hours = 5.0;
  std::size_t start = 1;
  std::size_t max_lag = 100;
  bool drift_endpoints = false;
};

// Every tunable of the pipeline. The single `seed` drives dataset noise
// (seed) and batch sampling (seed + 1).
struct RunConfig {
  std::uint64_t seed = 0;
  QGParams physics;
  DatasetOptions dataset{.spinup_days = 2000.0,
                         .run_days = 20000.0 / 24.0,
                         .subsample = 5,
                         .out_resolution = 64,
                         .seed = 0};
  ModelConfig model;
  EvalConfig eval;

  // Pushes the top-level seed into the sections and validates everything.
  RunConfig& finalize();
  RolloutOptions rollout_options(double dt_snapshot_seconds) const;
};

// YAML text with every key present; doubles printed with round-trip precision.
std::string to_yaml(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig from_yaml(const std::string& text);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace qgk

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "qgk/koopman.hpp"
#include "qgk/rollout.hpp"
#include "qgk/training.hpp"

namespace qgk {

// One JSON-lines record: epoch, L_total, L_recon, L_pred, L_latent, L_phys,
// grad_norm, spectral_abscissa, wall_ms.
std::string epoch_record_json(const EpochRecord& record);

std::string report_to_json(const RolloutReport& report, const std::string& config_yaml);

// Writes report.json, per_step.csv, spectrum.csv, autocorr.csv and, when a
// spectrum is given, eigs.csv into `dir`.
void write_report(const RolloutReport& report, const std::filesystem::path& dir,
                  const std::string& config_yaml,
                  const std::optional<OperatorSpectrum>& eigs = std::nullopt);

// Config echo stored next to an artifact as "<artifact>.config.yaml".
std::filesystem::path config_echo_path(const std::filesystem::path& artifact);
void write_config_echo(const std::filesystem::path& artifact, const std::string& config_yaml);

}  // namespace qgk

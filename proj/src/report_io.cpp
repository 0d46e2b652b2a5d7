#include "qgk/report_io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>

#include <json.hpp>

namespace qgk {

namespace {

using nlohmann::json;

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

void put_opt(std::ostream& out, const std::optional<double>& v) {
  if (v) out << *v;
}

json spectrum_json(const BinnedSpectrum& s) { return {{"k", s.k}, {"energy", s.energy}}; }

}  // namespace

std::string epoch_record_json(const EpochRecord& r) {
  json j = {{"epoch", r.epoch},
            {"L_total", r.terms.total},
            {"L_recon", r.terms.recon},
            {"L_pred", r.terms.pred},
            {"L_latent", r.terms.latent},
            {"L_phys", r.terms.phys},
            {"grad_norm", r.grad_norm},
            {"spectral_abscissa", r.spectral_abscissa},
            {"L_val", opt(r.val_loss)},
            {"wall_ms", r.wall_ms}};
  return j.dump();
}

std::string report_to_json(const RolloutReport& r, const std::string& config_yaml) {
  json steps = json::array();
  for (const auto& s : r.per_step) {
    steps.push_back({{"step", s.step},
                     {"t_units", s.t_units},
                     {"t_seconds", s.t_seconds},
                     {"rmse", opt(s.rmse)},
                     {"acc", opt(s.acc)},
                     {"error_norm", opt(s.error_norm)},
                     {"ke", s.ke},
                     {"enstrophy", s.enstrophy},
                     {"truth_ke", opt(s.truth_ke)},
                     {"truth_enstrophy", opt(s.truth_enstrophy)},
                     {"max_abs", s.max_abs}});
  }
  json j = {{"mode", r.mode},
            {"horizon_steps", r.horizon_steps},
            {"dt_query", r.dt_query},
            {"dt_snapshot_seconds", r.dt_snapshot_seconds},
            {"blew_up", r.blew_up},
            {"blowup_step", opt(r.blowup_step)},
            {"max_abs_pred", r.max_abs_pred},
            {"max_abs_truth", r.max_abs_truth},
            {"ke_drift", opt(r.ke_drift)},
            {"enstrophy_drift", opt(r.enstrophy_drift)},
            {"truth_ke_drift", opt(r.truth_ke_drift)},
            {"lambda", opt(r.lambda)},
            {"lambda_T", opt(r.lambda_T)},
            {"error_norm", r.error_norm},
            {"lambda_time_unit", r.lambda_time_unit},
            {"ke_spectrum", spectrum_json(r.ke_spectrum)},
            {"truth_ke_spectrum", spectrum_json(r.truth_ke_spectrum)},
            {"autocorrelation", r.autocorrelation},
            {"truth_autocorrelation", r.truth_autocorrelation},
            {"per_step", steps},
            {"config", config_yaml}};
  return j.dump(2) + "\n";
}

void write_report(const RolloutReport& r, const std::filesystem::path& dir, const std::string& config_yaml,
                  const std::optional<OperatorSpectrum>& eigs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir.string());

  {
    const auto path = dir / "report.json";
    auto out = open_out(path);
    out << report_to_json(r, config_yaml);
    close_out(out, path);
  }
  {
    const auto path = dir / "per_step.csv";
    auto out = open_out(path);
    out << "step,t_units,t_seconds,rmse,acc,error_norm,ke,enstrophy,truth_ke,truth_enstrophy,max_abs\n";
    for (const auto& s : r.per_step) {
      out << s.step << ',' << s.t_units << ',' << s.t_seconds << ',';
      put_opt(out, s.rmse);
      out << ',';
      put_opt(out, s.acc);
      out << ',';
      put_opt(out, s.error_norm);
      out << ',' << s.ke << ',' << s.enstrophy << ',';
      put_opt(out, s.truth_ke);
      out << ',';
      put_opt(out, s.truth_enstrophy);
      out << ',' << s.max_abs << '\n';
    }
    close_out(out, path);
  }
  {
    const auto path = dir / "spectrum.csv";
    auto out = open_out(path);
    out << "k,energy,truth_energy\n";
    for (std::size_t i = 0; i < r.ke_spectrum.k.size(); ++i) {
      out << r.ke_spectrum.k[i] << ',' << r.ke_spectrum.energy[i] << ',';
      if (i < r.truth_ke_spectrum.energy.size()) out << r.truth_ke_spectrum.energy[i];
      out << '\n';
    }
    close_out(out, path);
  }
  {
    const auto path = dir / "autocorr.csv";
    auto out = open_out(path);
    out << "lag,pred,truth\n";
    const std::size_t n = std::max(r.autocorrelation.size(), r.truth_autocorrelation.size());
    for (std::size_t i = 0; i < n; ++i) {
      out << i << ',';
      if (i < r.autocorrelation.size()) out << r.autocorrelation[i];
      out << ',';
      if (i < r.truth_autocorrelation.size()) out << r.truth_autocorrelation[i];
      out << '\n';
    }
    close_out(out, path);
  }
  if (eigs) write_spectrum_csv(*eigs, dir / "eigs.csv");
}

std::filesystem::path config_echo_path(const std::filesystem::path& artifact) {
  return std::filesystem::path(artifact.string() + ".config.yaml");
}

void write_config_echo(const std::filesystem::path& artifact, const std::string& config_yaml) {
  const auto path = config_echo_path(artifact);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << config_yaml;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace qgk

#include "qgk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "binary_io.hpp"

namespace qgk {

namespace {

float ulp_up(float f) { return std::nextafter(std::abs(f), std::numeric_limits<float>::infinity()) - std::abs(f); }

// Rounds y to float keeping sum and sum of squares at double precision:
// error-feedback rounding for the sum, then paired one-ulp moves of a
// positive and a negative value of equal ulp for the squares.
std::vector<float> quantize_moments(const std::vector<double>& y) {
  std::vector<float> f(y.size());
  double carry = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = y[i] + carry;
    f[i] = static_cast<float>(v);
    carry = v - f[i];
  }
  long double target = 0, have = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    target += static_cast<long double>(y[i]) * y[i];
    have += static_cast<long double>(f[i]) * f[i];
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < f.size(); ++i) (f[i] > 0 ? pos : neg).push_back(i);
  const auto by_mag = [&](std::size_t a, std::size_t b) { return std::abs(f[a]) > std::abs(f[b]); };
  std::sort(pos.begin(), pos.end(), by_mag);
  std::sort(neg.begin(), neg.end(), by_mag);
  std::size_t ip = 0, in = 0;
  while (ip < pos.size() && in < neg.size()) {
    const float a = f[pos[ip]], b = f[neg[in]];
    const float ua = ulp_up(a), ub = ulp_up(b);
    if (ua != ub) {
      (ua > ub ? ip : in)++;
      continue;
    }
    const long double deficit = target - have;
    const long double sign = deficit > 0 ? 1 : -1;
    // Moving both away from (or towards) zero keeps the sum fixed.
    const long double na = std::abs(a) + sign * ua, nb = std::abs(b) + sign * ub;
    const long double delta = na * na + nb * nb - static_cast<long double>(a) * a - static_cast<long double>(b) * b;
    if (std::abs(deficit - delta) >= std::abs(deficit)) break;
    f[pos[ip]] = static_cast<float>(na);
    f[neg[in]] = static_cast<float>(-nb);
    have += delta;
    ++ip;
    ++in;
  }
  return f;
}

}  // namespace

void NormalizationStats::validate() const {
  if (mean.size() != std.size()) throw std::invalid_argument("NormalizationStats: size mismatch");
  for (double s : std) {
    if (!(s > 0.0)) throw std::invalid_argument("NormalizationStats: std must be positive");
  }
}

Vector Dataset::snapshot_vector(std::size_t i) const {
  const auto s = snapshot(i);
  Vector v(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) v[k] = s[k];
  return v;
}

Matrix Dataset::snapshot_matrix(std::size_t first, std::size_t count) const {
  if (first + count > n_snapshots) throw std::out_of_range("snapshot_matrix: range past end");
  Matrix m(state_dim(), count);
  for (std::size_t c = 0; c < count; ++c) {
    const auto s = snapshot(first + c);
    for (std::size_t k = 0; k < s.size(); ++k) m(k, c) = s[k];
  }
  return m;
}

Eigen::ArrayXcd spectral_truncate(const Eigen::ArrayXcd& field_hat, int layers, int n_in, int n_out) {
  if (n_out > n_in) throw std::invalid_argument("spectral_truncate: output grid larger than input");
  if (n_out == n_in) return field_hat;
  const int nk_in = n_in / 2 + 1;
  const int nk_out = n_out / 2 + 1;
  const double scale = std::pow(static_cast<double>(n_out) / n_in, 2);
  const std::size_t plane_in = static_cast<std::size_t>(n_in) * nk_in;
  const std::size_t plane_out = static_cast<std::size_t>(n_out) * nk_out;
  Eigen::ArrayXcd out = Eigen::ArrayXcd::Zero(layers * plane_out);
  for (int m = 0; m < layers; ++m) {
    for (int j = 0; j < n_out; ++j) {
      const int jy = wave_index(j, n_out);
      if (std::abs(jy) >= n_out / 2) continue;
      const int j_in = jy >= 0 ? jy : jy + n_in;
      for (int i = 0; i < nk_out - 1; ++i) {
        out[m * plane_out + static_cast<std::size_t>(j) * nk_out + i] =
            scale * field_hat[m * plane_in + static_cast<std::size_t>(j_in) * nk_in + i];
      }
    }
  }
  return out;
}

NormalizationStats compute_stats(const std::vector<double>& raw, GridShape shape,
                                 std::size_t n_snapshots) {
  const std::size_t np = shape.plane();
  const std::size_t dim = shape.size();
  NormalizationStats stats;
  stats.mean.assign(shape.channels, 0.0);
  stats.std.assign(shape.channels, 0.0);
  const double count = static_cast<double>(np * n_snapshots);
  for (int c = 0; c < shape.channels; ++c) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n_snapshots; ++s) {
      const double* p = raw.data() + s * dim + c * np;
      for (std::size_t k = 0; k < np; ++k) sum += p[k];
    }
    const double mu = sum / count;
    double ss = 0.0;
    for (std::size_t s = 0; s < n_snapshots; ++s) {
      const double* p = raw.data() + s * dim + c * np;
      for (std::size_t k = 0; k < np; ++k) ss += (p[k] - mu) * (p[k] - mu);
    }
    stats.mean[c] = mu;
    stats.std[c] = std::sqrt(ss / count);
  }
  return stats;
}

std::uint32_t expected_snapshots(const QGParams& params, const DatasetOptions& options) {
  if (options.subsample < 1) throw std::invalid_argument("subsample must be >= 1");
  const auto run_steps = static_cast<std::int64_t>(std::llround(options.run_days * 86400.0 / params.dt));
  return static_cast<std::uint32_t>(std::max<std::int64_t>(0, run_steps / options.subsample));
}

Dataset generate_dataset(const QGParams& params, const DatasetOptions& options, const ProgressFn& progress) {
  params.validate();
  if (options.out_resolution > params.nx || options.out_resolution > params.ny ||
      options.out_resolution < 2 || params.nx != params.ny) {
    throw std::invalid_argument("generate_dataset: out_resolution must not exceed a square simulation grid");
  }
  if (options.spinup_days < 0.0) throw std::invalid_argument("generate_dataset: negative spinup");
  const std::uint32_t n_snap = expected_snapshots(params, options);
  if (n_snap == 0) {
    throw std::invalid_argument("generate_dataset: run_days too short to record a single snapshot");
  }

  QGSolver solver(params);
  const int n_out = options.out_resolution;
  Fft2d out_fft(n_out, n_out);
  const GridShape shape{4, n_out, n_out};
  const std::size_t np = shape.plane();
  const std::size_t spec_out = static_cast<std::size_t>(n_out) * (n_out / 2 + 1);

  const auto spinup_steps =
      static_cast<std::int64_t>(std::llround(options.spinup_days * 86400.0 / params.dt));
  const std::int64_t total = spinup_steps + static_cast<std::int64_t>(n_snap) * options.subsample;

  QGState state = solver.random_initial_state(options.seed);
  TendencyHistory history;
  std::vector<double> raw(static_cast<std::size_t>(n_snap) * shape.size());
  std::int64_t done = 0;
  for (std::int64_t s = 0; s < spinup_steps; ++s) {
    solver.step(state, history);
    if (progress && (++done % 1000 == 0)) progress(done, total);
  }
  done = spinup_steps;
  for (std::uint32_t snap = 0; snap < n_snap; ++snap) {
    for (int s = 0; s < options.subsample; ++s) {
      solver.step(state, history);
      if (progress && (++done % 1000 == 0)) progress(done, total);
    }
    const Eigen::ArrayXcd q_out = spectral_truncate(state.q_hat, 2, params.nx, n_out);
    const Eigen::ArrayXcd psi_out = spectral_truncate(state.psi_hat, 2, params.nx, n_out);
    double* dst = raw.data() + static_cast<std::size_t>(snap) * shape.size();
    for (int m = 0; m < 2; ++m) {
      out_fft.inverse({q_out.data() + m * spec_out, spec_out}, {dst + m * np, np});
      out_fft.inverse({psi_out.data() + m * spec_out, spec_out}, {dst + (2 + m) * np, np});
    }
  }

  Dataset data;
  data.n_snapshots = n_snap;
  data.n_channels = static_cast<std::uint32_t>(shape.channels);
  data.ny = data.nx = static_cast<std::uint32_t>(n_out);
  data.dt_snapshot_seconds = params.dt * options.subsample;
  data.stats = compute_stats(raw, shape, n_snap);
  data.stats.validate();
  data.payload.resize(raw.size());
  const std::size_t per_channel = static_cast<std::size_t>(n_snap) * np;
  std::vector<double> y(per_channel);
  for (int c = 0; c < shape.channels; ++c) {
    for (std::uint32_t snap = 0; snap < n_snap; ++snap) {
      const std::size_t off = static_cast<std::size_t>(snap) * shape.size() + c * np;
      for (std::size_t k = 0; k < np; ++k) {
        y[snap * np + k] = (raw[off + k] - data.stats.mean[c]) / data.stats.std[c];
      }
    }
    const std::vector<float> f = quantize_moments(y);
    for (std::uint32_t snap = 0; snap < n_snap; ++snap) {
      const std::size_t off = static_cast<std::size_t>(snap) * shape.size() + c * np;
      std::copy_n(f.begin() + snap * np, np, data.payload.begin() + off);
    }
  }
  return data;
}

Dataset renormalize(const Dataset& data, const NormalizationStats& target) {
  target.validate();
  if (target.mean.size() != data.n_channels) throw std::invalid_argument("renormalize: channel mismatch");
  Dataset out = data;
  out.stats = target;
  const std::size_t np = data.shape().plane();
  for (std::size_t s = 0; s < data.n_snapshots; ++s) {
    for (std::uint32_t c = 0; c < data.n_channels; ++c) {
      const std::size_t off = s * data.state_dim() + c * np;
      for (std::size_t k = 0; k < np; ++k) {
        const double phys = data.payload[off + k] * data.stats.std[c] + data.stats.mean[c];
        out.payload[off + k] = static_cast<float>((phys - target.mean[c]) / target.std[c]);
      }
    }
  }
  return out;
}

Vector denormalize(const Vector& x, const NormalizationStats& stats, GridShape shape) {
  Vector out(x.size());
  const std::size_t np = shape.plane();
  for (int c = 0; c < shape.channels; ++c) {
    out.segment(c * np, np) = x.segment(c * np, np).array() * stats.std[c] + stats.mean[c];
  }
  return out;
}

Vector normalize(const Vector& x, const NormalizationStats& stats, GridShape shape) {
  Vector out(x.size());
  const std::size_t np = shape.plane();
  for (int c = 0; c < shape.channels; ++c) {
    out.segment(c * np, np) = (x.segment(c * np, np).array() - stats.mean[c]) / stats.std[c];
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  if (data.payload.size() != static_cast<std::size_t>(data.n_snapshots) * data.state_dim() ||
      data.stats.mean.size() != data.n_channels) {
    throw std::invalid_argument("write_dataset: inconsistent dataset");
  }
  binary::Writer w(path);
  w.magic("QGK1");
  w.put<std::uint32_t>(Dataset::kVersion);
  w.put<std::uint32_t>(data.n_snapshots);
  w.put<std::uint32_t>(data.n_channels);
  w.put<std::uint32_t>(data.ny);
  w.put<std::uint32_t>(data.nx);
  w.put<double>(data.dt_snapshot_seconds);
  for (std::uint32_t c = 0; c < data.n_channels; ++c) {
    w.put<double>(data.stats.mean[c]);
    w.put<double>(data.stats.std[c]);
  }
  w.put_array(data.payload.data(), data.payload.size());
  w.finish();
}

Dataset read_dataset(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("QGK1");
  const auto version = r.get<std::uint32_t>();
  if (version != Dataset::kVersion) {
    throw IoError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  Dataset data;
  data.n_snapshots = r.get<std::uint32_t>();
  data.n_channels = r.get<std::uint32_t>();
  data.ny = r.get<std::uint32_t>();
  data.nx = r.get<std::uint32_t>();
  data.dt_snapshot_seconds = r.get<double>();
  if (data.n_channels == 0 || data.n_channels > 64 || data.ny == 0 || data.nx == 0) {
    throw IoError(path.string() + ": implausible dataset header");
  }
  data.stats.mean.resize(data.n_channels);
  data.stats.std.resize(data.n_channels);
  for (std::uint32_t c = 0; c < data.n_channels; ++c) {
    data.stats.mean[c] = r.get<double>();
    data.stats.std[c] = r.get<double>();
  }
  data.payload.resize(static_cast<std::size_t>(data.n_snapshots) * data.state_dim());
  r.get_array(data.payload.data(), data.payload.size());
  r.expect_end();
  return data;
}

}  // namespace qgk

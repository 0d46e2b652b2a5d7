#include "qgk/pod.hpp"

#include <algorithm>
#include <numeric>

#include "binary_io.hpp"

namespace qgk {

namespace {

// Thin orthonormalisation that keeps each column's orientation.
Matrix orthonormalize_columns(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (q.col(j).dot(a.col(j)) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

}  // namespace

PODBasis fit_pod(const Matrix& snapshots, int d, GridShape shape, NormalizationStats stats) {
  const Eigen::Index n = snapshots.rows();
  const Eigen::Index t = snapshots.cols();
  if (static_cast<std::size_t>(n) != shape.size()) {
    throw std::invalid_argument("fit_pod: snapshot rows do not match grid shape");
  }
  if (d < 1 || d > t || d > n) {
    throw std::invalid_argument("fit_pod: latent dimension exceeds snapshot count or state dimension");
  }
  stats.validate();

  Matrix u(n, d);
  Vector sigma(d);
  if (n * t <= 4'000'000) {
    Eigen::BDCSVD<Matrix> svd(snapshots, Eigen::ComputeThinU);
    u = svd.matrixU().leftCols(d);
    sigma = svd.singularValues().head(d);
  } else if (t <= n) {
    // Method of snapshots on the T x T Gram matrix.
    Matrix gram(t, t);
    gram.setZero();
    gram.selfadjointView<Eigen::Lower>().rankUpdate(snapshots.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericalError("fit_pod: eigen-solver failed");
    for (int i = 0; i < d; ++i) {
      const Eigen::Index col = t - 1 - i;
      const double lam = std::max(0.0, eig.eigenvalues()[col]);
      sigma[i] = std::sqrt(lam);
      if (sigma[i] > 0.0) {
        u.col(i) = snapshots * eig.eigenvectors().col(col) / sigma[i];
      } else {
        u.col(i).setZero();
      }
    }
  } else {
    Matrix cov(n, n);
    cov.setZero();
    cov.selfadjointView<Eigen::Lower>().rankUpdate(snapshots);
    cov = cov.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("fit_pod: eigen-solver failed");
    for (int i = 0; i < d; ++i) {
      const Eigen::Index col = n - 1 - i;
      sigma[i] = std::sqrt(std::max(0.0, eig.eigenvalues()[col]));
      u.col(i) = eig.eigenvectors().col(col);
    }
  }

  PODBasis basis;
  basis.modes = orthonormalize_columns(u).transpose();
  basis.singular_values = sigma;
  basis.stats = std::move(stats);
  basis.shape = shape;
  return basis;
}

PODBasis fit_pod(const Dataset& data, int d, std::size_t n_train) {
  if (n_train == 0 || n_train > data.n_snapshots) {
    throw std::invalid_argument("fit_pod: training split out of range");
  }
  return fit_pod(data.snapshot_matrix(0, n_train), d, data.shape(), data.stats);
}

PODBasis truncate(const PODBasis& basis, int d) {
  if (d < 1 || d > basis.d()) throw std::invalid_argument("truncate: invalid latent dimension");
  PODBasis out = basis;
  out.modes = basis.modes.topRows(d);
  out.singular_values = basis.singular_values.head(d);
  return out;
}

double captured_energy_fraction(const PODBasis& basis, const Matrix& snapshots) {
  const double total = snapshots.squaredNorm();
  if (total == 0.0) throw std::invalid_argument("captured_energy_fraction: zero snapshot energy");
  return basis.singular_values.squaredNorm() / total;
}

Vector encode(const PODBasis& basis, const Vector& x_t, const std::optional<Vector>& x_prev) {
  if (static_cast<std::size_t>(x_t.size()) != basis.state_dim() ||
      (x_prev && static_cast<std::size_t>(x_prev->size()) != basis.state_dim())) {
    throw std::invalid_argument("encode: state does not match basis grid");
  }
  if (!x_prev) return basis.modes * x_t;
  return 0.5 * (basis.modes * x_t + basis.modes * (*x_prev));
}

LatentState encode_state(const PODBasis& basis, const Vector& x_t, const std::optional<Vector>& x_prev,
                         double t) {
  return {encode(basis, x_t, x_prev), t};
}

Vector decode(const PODBasis& basis, const Vector& z) {
  if (z.size() != basis.d()) throw std::invalid_argument("decode: latent length mismatch");
  return basis.modes.transpose() * z;
}

void write_basis(const PODBasis& basis, const std::filesystem::path& path) {
  binary::Writer w(path);
  w.magic("QGKB");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(basis.d()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(basis.state_dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(basis.shape.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(basis.shape.ny));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(basis.shape.nx));
  w.put_array(basis.singular_values.data(), basis.singular_values.size());
  for (int c = 0; c < basis.shape.channels; ++c) {
    w.put<double>(basis.stats.mean[c]);
    w.put<double>(basis.stats.std[c]);
  }
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = basis.modes;
  w.put_array(rows.data(), rows.size());
  w.finish();
}

PODBasis read_basis(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("QGKB");
  const auto d = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  PODBasis basis;
  basis.shape.channels = static_cast<int>(r.get<std::uint32_t>());
  basis.shape.ny = static_cast<int>(r.get<std::uint32_t>());
  basis.shape.nx = static_cast<int>(r.get<std::uint32_t>());
  if (basis.shape.size() != n || d == 0 || d > n) throw IoError(path.string() + ": inconsistent basis header");
  basis.singular_values.resize(d);
  r.get_array(basis.singular_values.data(), d);
  basis.stats.mean.resize(basis.shape.channels);
  basis.stats.std.resize(basis.shape.channels);
  for (int c = 0; c < basis.shape.channels; ++c) {
    basis.stats.mean[c] = r.get<double>();
    basis.stats.std[c] = r.get<double>();
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(d, n);
  r.get_array(rows.data(), rows.size());
  r.expect_end();
  basis.modes = rows;
  return basis;
}

}  // namespace qgk

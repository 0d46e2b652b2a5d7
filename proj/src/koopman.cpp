#include "qgk/koopman.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "binary_io.hpp"

namespace qgk {

Matrix assemble(const Matrix& W, const Matrix& D) {
  if (W.rows() != W.cols() || D.rows() != D.cols() || W.rows() != D.rows()) {
    throw std::invalid_argument("assemble: W and D must be square and of equal shape");
  }
  return 0.5 * (W - W.transpose()) + 0.5 * (D + D.transpose());
}

Vector rk4_step(const Matrix& K, const Vector& z, double h) {
  const Vector k1 = K * z;
  const Vector k2 = K * (z + 0.5 * h * k1);
  const Vector k3 = K * (z + 0.5 * h * k2);
  const Vector k4 = K * (z + h * k3);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Matrix rk4_step_batch(const Matrix& K, const Matrix& Z, double h) {
  const Matrix k1 = K * Z;
  const Matrix k2 = K * (Z + 0.5 * h * k1);
  const Matrix k3 = K * (Z + 0.5 * h * k2);
  const Matrix k4 = K * (Z + h * k3);
  return Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {

// Higham (2005) degree thresholds for unit-roundoff backward error.
constexpr std::array<double, 5> kTheta{1.495585217958292e-2, 2.539398330063230e-1,
                                       9.504178996162932e-1, 2.097847961257068e0,
                                       5.371920351148152e0};

Matrix pade_solve(const Matrix& U, const Matrix& V) {
  Eigen::PartialPivLU<Matrix> lu(V - U);
  return lu.solve(V + U);
}

Matrix pade_low(const Matrix& A, int m) {
  static const std::array<double, 4> b3{120., 60., 12., 1.};
  static const std::array<double, 6> b5{30240., 15120., 3360., 420., 30., 1.};
  static const std::array<double, 8> b7{17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
  static const std::array<double, 10> b9{17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                                         2162160.,     110880.,      3960.,       90.,         1.};
  const double* b = m == 3 ? b3.data() : m == 5 ? b5.data() : m == 7 ? b7.data() : b9.data();
  const Eigen::Index n = A.rows();
  const Matrix I = Matrix::Identity(n, n);
  const Matrix A2 = A * A;
  // Even powers A^0, A^2, ..., A^(m-1).
  std::vector<Matrix> pw{I, A2};
  for (int k = 4; k <= m - 1; k += 2) pw.push_back(pw.back() * A2);
  Matrix u = Matrix::Zero(n, n);
  Matrix v = Matrix::Zero(n, n);
  for (int k = 0; k <= m; ++k) {
    if (k % 2 == 1) {
      u += b[k] * pw[k / 2];
    } else {
      v += b[k] * pw[k / 2];
    }
  }
  return pade_solve(A * u, v);
}

Matrix pade13(const Matrix& A) {
  static const std::array<double, 14> b{64764752532480000., 32382376266240000., 7771770303897600.,
                                        1187353796428800.,  129060195264000.,   10559470521600.,
                                        670442572800.,      33522128640.,       1323241920.,
                                        40840800.,          960960.,            16380.,
                                        182.,               1.};
  const Eigen::Index n = A.rows();
  const Matrix I = Matrix::Identity(n, n);
  const Matrix A2 = A * A;
  const Matrix A4 = A2 * A2;
  const Matrix A6 = A4 * A2;
  const Matrix u_inner = A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 +
                         b[3] * A2 + b[1] * I;
  const Matrix U = A * u_inner;
  const Matrix V = A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 +
                   b[0] * I;
  return pade_solve(U, V);
}

}  // namespace

Matrix matrix_exp(const Matrix& A) {
  if (A.rows() != A.cols()) throw std::invalid_argument("matrix_exp: matrix must be square");
  if (!A.allFinite()) throw NumericalError("matrix_exp: non-finite entries");
  const Eigen::Index n = A.rows();
  if (n == 0) return A;
  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  constexpr std::array<int, 4> low_degrees{3, 5, 7, 9};
  for (std::size_t i = 0; i < low_degrees.size(); ++i) {
    if (norm1 <= kTheta[i]) return pade_low(A, low_degrees[i]);
  }
  int s = 0;
  if (norm1 > kTheta[4]) s = static_cast<int>(std::ceil(std::log2(norm1 / kTheta[4])));
  Matrix X = pade13(A / std::ldexp(1.0, s));
  for (int k = 0; k < s; ++k) X = X * X;
  if (!X.allFinite()) throw NumericalError("matrix_exp: overflow");
  return X;
}

Matrix matrix_exp(const Matrix& K, double tau) {
  if (!std::isfinite(tau)) throw NumericalError("matrix_exp: non-finite time");
  return matrix_exp(K * tau);
}

Propagator::Propagator(Matrix K) : K_(std::move(K)) {}

const Matrix& Propagator::transition(double tau) {
  if (!cached_tau_ || *cached_tau_ != tau) {
    cached_ = matrix_exp(K_, tau);
    cached_tau_ = tau;
  }
  return cached_;
}

LatentState Propagator::propagate(const LatentState& state, double tau) {
  if (tau == 0.0) return state;
  return {transition(tau) * state.z, state.t + tau};
}

OperatorSpectrum spectrum(const Matrix& K) {
  if (!K.allFinite()) throw NumericalError("spectrum: non-finite operator");
  Eigen::EigenSolver<Matrix> es(K, false);
  if (es.info() != Eigen::Success) {
    throw NumericalError("spectrum: eigenvalue iteration did not converge");
  }
  OperatorSpectrum out;
  out.eigenvalues.assign(es.eigenvalues().begin(), es.eigenvalues().end());
  std::sort(out.eigenvalues.begin(), out.eigenvalues.end(), [](const Complex& a, const Complex& b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  out.spectral_abscissa = -std::numeric_limits<double>::infinity();
  for (const auto& l : out.eigenvalues) out.spectral_abscissa = std::max(out.spectral_abscissa, l.real());
  return out;
}

Matrix stabilize(const Matrix& K, double margin) {
  if (margin < 0.0) throw std::invalid_argument("stabilize: margin must be non-negative");
  const double a = spectrum(K).spectral_abscissa;
  if (a <= -margin) return K;
  Matrix out = K;
  out.diagonal().array() -= (a + margin);
  return out;
}

KoopmanOperator stabilize(const KoopmanOperator& op, double margin) {
  if (margin < 0.0) throw std::invalid_argument("stabilize: margin must be non-negative");
  const double a = spectrum(op.K()).spectral_abscissa;
  if (a <= -margin) return op;
  KoopmanOperator out = op;
  out.D.diagonal().array() -= (a + margin);
  return out;
}

void write_operator(const KoopmanOperator& op, const std::filesystem::path& path) {
  if (op.W.rows() != op.W.cols() || op.D.rows() != op.W.rows() || op.D.cols() != op.W.cols()) {
    throw std::invalid_argument("write_operator: W and D must be square and equal");
  }
  binary::Writer w(path);
  w.magic("QGKO");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(op.d()));
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor W = op.W;
  const RowMajor D = op.D;
  w.put_array(W.data(), W.size());
  w.put_array(D.data(), D.size());
  w.finish();
}

KoopmanOperator read_operator(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("QGKO");
  const auto d = r.get<std::uint32_t>();
  if (d == 0 || d > 1u << 14) throw IoError(path.string() + ": implausible operator dimension");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> W(d, d), D(d, d);
  r.get_array(W.data(), W.size());
  r.get_array(D.data(), D.size());
  r.expect_end();
  return {W, D};
}

void write_spectrum_csv(const OperatorSpectrum& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "re,im\n" << std::setprecision(17);
  for (const auto& l : spec.eigenvalues) out << l.real() << ',' << l.imag() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Complex> read_spectrum_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "re,im") throw IoError(path.string() + ": expected header re,im");
  std::vector<Complex> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double re = 0.0, im = 0.0;
    char comma = 0;
    if (!(row >> re >> comma >> im) || comma != ',') throw IoError(path.string() + ": malformed row");
    out.emplace_back(re, im);
  }
  return out;
}

}  // namespace qgk

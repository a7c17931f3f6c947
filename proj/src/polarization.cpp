#include "qnet/polarization.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace qnet::pol {

namespace {
const cd kI{0.0, 1.0};
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
}  // namespace

Vec2 basis_state(char label) {
  switch (std::toupper(static_cast<unsigned char>(label))) {
    case 'H': return Vec2(1.0, 0.0);
    case 'V': return Vec2(0.0, 1.0);
    case 'D': return Vec2(kInvSqrt2, kInvSqrt2);
    case 'A': return Vec2(kInvSqrt2, -kInvSqrt2);
    case 'R': return Vec2(kInvSqrt2, kI * kInvSqrt2);
    case 'L': return Vec2(kInvSqrt2, -kI * kInvSqrt2);
    default:
      throw std::invalid_argument(std::string("basis_state: unknown label '") + label + "'");
  }
}

Vec2 basis_state(std::string_view label) {
  if (label.size() != 1) {
    throw std::invalid_argument("basis_state: label must be one of H,V,D,A,R,L");
  }
  return basis_state(label[0]);
}

Mat2 rotation(double phi) {
  Mat2 r;
  r << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  return r;
}

Mat2 waveplate_unitary(double axis, double retardance) {
  Mat2 d = Mat2::Zero();
  d(0, 0) = 1.0;
  d(1, 1) = std::exp(kI * retardance);
  return rotation(axis) * d * rotation(-axis);
}

Mat2 analyzer_unitary(const std::array<double, 4>& retardances) {
  Mat2 u = Mat2::Identity();
  for (int k = 0; k < 4; ++k) {
    // WP0 is traversed first, so it multiplies from the right.
    u = waveplate_unitary(kAnalyzerAxes[static_cast<size_t>(k)],
                          retardances[static_cast<size_t>(k)]) *
        u;
  }
  return u;
}

double projection_probability(const Mat2& u, const Vec2& psi) {
  const cd amp = (u * psi)(0);
  return std::norm(amp);
}

Mat4 kron(const Mat2& a, const Mat2& b) {
  Mat4 out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

Mat4 apply_local(const Mat2& ua, const Mat2& ub, const Mat4& rho) {
  const Mat4 u = kron(ua, ub);
  return u * rho * u.adjoint();
}

Mat2 analyzer_projector(const Mat2& u) {
  const Vec2 accepted = u.adjoint() * Vec2(1.0, 0.0);
  return accepted * accepted.adjoint();
}

double coincidence_probability(const Mat4& rho, const Mat2& ua, const Mat2& ub) {
  const Mat4 proj = kron(analyzer_projector(ua), analyzer_projector(ub));
  return (rho * proj).trace().real();
}

Vec4 bell_state(std::string_view label) {
  Vec4 psi = Vec4::Zero();
  if (label == "phi+") {
    psi(0) = kInvSqrt2; psi(3) = kInvSqrt2;
  } else if (label == "phi-") {
    psi(0) = kInvSqrt2; psi(3) = -kInvSqrt2;
  } else if (label == "psi+") {
    psi(1) = kInvSqrt2; psi(2) = kInvSqrt2;
  } else if (label == "psi-") {
    psi(1) = kInvSqrt2; psi(2) = -kInvSqrt2;
  } else {
    throw std::invalid_argument("bell_state: unknown label '" + std::string(label) + "'");
  }
  return psi;
}

Mat4 pure_dm(const Vec4& psi) { return psi * psi.adjoint(); }

Mat4 werner_state(double p) {
  if (p < 0.0 || p > 1.0) {
    throw std::invalid_argument("werner_state: p must lie in [0,1]");
  }
  return p * pure_dm(bell_state("phi+")) + (1.0 - p) * 0.25 * Mat4::Identity();
}

double fidelity(const Mat4& rho, const Vec4& target) {
  return (target.adjoint() * rho * target)(0).real();
}

namespace {
Mat4 matrix_sqrt_psd(const Mat4& m) {
  Eigen::SelfAdjointEigenSolver<Mat4> es(m);
  Eigen::Vector4d ev = es.eigenvalues();
  for (int i = 0; i < 4; ++i) ev(i) = std::sqrt(std::max(ev(i), 0.0));
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}
}  // namespace

double concurrence(const Mat4& rho) {
  Mat2 sy;
  sy << 0.0, -kI, kI, 0.0;
  const Mat4 yy = kron(sy, sy);
  const Mat4 rho_tilde = yy * rho.conjugate() * yy;
  const Mat4 sqrt_rho = matrix_sqrt_psd(rho);
  const Mat4 r2 = sqrt_rho * rho_tilde * sqrt_rho;
  Eigen::SelfAdjointEigenSolver<Mat4> es(r2);
  Eigen::Vector4d ev = es.eigenvalues();  // ascending
  double lam[4];
  for (int i = 0; i < 4; ++i) lam[i] = std::sqrt(std::max(ev(3 - i), 0.0));
  return std::max(0.0, lam[0] - lam[1] - lam[2] - lam[3]);
}

double trace_distance(const Mat4& a, const Mat4& b) {
  Eigen::SelfAdjointEigenSolver<Mat4> es(a - b);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

Mat4 dephase_hv(const Mat4& rho, double q) {
  if (q < 0.0 || q > 1.0) {
    throw std::invalid_argument("dephase_hv: q must lie in [0,1]");
  }
  Mat2 z;
  z << 1.0, 0.0, 0.0, -1.0;
  const Mat4 zi = kron(z, Mat2::Identity());
  const double gamma = 0.5 * (1.0 - q);
  return (1.0 - gamma) * rho + gamma * zi * rho * zi;
}

bool is_unitary(const Mat2& u, double tol) {
  return ((u.adjoint() * u) - Mat2::Identity()).cwiseAbs().maxCoeff() <= tol;
}

bool is_density_matrix(const Mat4& rho, double tol) {
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(rho.trace().real() - 1.0) > tol || std::abs(rho.trace().imag()) > tol) return false;
  Eigen::SelfAdjointEigenSolver<Mat4> es(rho);
  return es.eigenvalues().minCoeff() >= -tol;
}

}  // namespace qnet::pol

#pragma once

#include <array>
#include <complex>
#include <string_view>

#include <Eigen/Dense>

// Jones calculus for polarization qubits and two-photon states.
//
// Conventions used throughout:
//   |H> = (1,0), |V> = (0,1), D/A = (|H> +- |V>)/sqrt2,
//   R = (|H> + i|V>)/sqrt2, L = (|H> - i|V>)/sqrt2.
//   A variable retarder with fast axis at angle phi and retardance delta acts as
//   R(phi) diag(1, e^{i delta}) R(-phi).
//   The analyzer stack is four retarders at fixed axes {0, pi/4, 0, pi/4}
//   (light traverses WP0 first) followed by a polarizer transmitting H.

namespace qnet::pol {

using cd = std::complex<double>;
using Vec2 = Eigen::Vector2cd;
using Mat2 = Eigen::Matrix2cd;
using Vec4 = Eigen::Vector4cd;
using Mat4 = Eigen::Matrix4cd;

inline constexpr double kPi = 3.14159265358979323846;

// Fast-axis angles of the four analyzer waveplates, WP0..WP3.
inline constexpr std::array<double, 4> kAnalyzerAxes{0.0, kPi / 4.0, 0.0, kPi / 4.0};

// One of H,V,D,A,R,L (case-insensitive). Throws std::invalid_argument otherwise.
Vec2 basis_state(char label);
Vec2 basis_state(std::string_view label);

Mat2 rotation(double phi);

// R(phi) diag(1, e^{i delta}) R(-phi). Unitary for all inputs.
Mat2 waveplate_unitary(double axis, double retardance);

// J(WP3) J(WP2) J(WP1) J(WP0) at the fixed axes above.
Mat2 analyzer_unitary(const std::array<double, 4>& retardances);

// |<H| U |psi>|^2 for a normalized psi; in [0,1].
double projection_probability(const Mat2& u, const Vec2& psi);

Mat4 kron(const Mat2& a, const Mat2& b);
Mat4 apply_local(const Mat2& ua, const Mat2& ub, const Mat4& rho);

// Projector onto the state transmitted by an analyzer set to U: U^dag |H><H| U.
Mat2 analyzer_projector(const Mat2& u);

// Tr[rho (Pa x Pb)] with Pa/Pb the transmitted-port projectors of the two analyzers.
double coincidence_probability(const Mat4& rho, const Mat2& ua, const Mat2& ub);

// label in {"phi+","phi-","psi+","psi-"}; default the pair source target phi+.
Vec4 bell_state(std::string_view label = "phi+");
Mat4 pure_dm(const Vec4& psi);

// p |phi+><phi+| + (1-p) I/4, p in [0,1].
Mat4 werner_state(double p);

// <target| rho |target> for a pure target.
double fidelity(const Mat4& rho, const Vec4& target);

// Wootters concurrence; negative eigenvalues of the spectral intermediate are
// clamped to zero before the square root.
double concurrence(const Mat4& rho);

double trace_distance(const Mat4& a, const Mat4& b);

// Phase-flip channel on the first qubit with coherence retention q in [0,1]:
// rho -> (1+q)/2 rho + (1-q)/2 (Z x I) rho (Z x I). q=1 is the identity.
Mat4 dephase_hv(const Mat4& rho, double q);

bool is_unitary(const Mat2& u, double tol = 1e-10);
bool is_density_matrix(const Mat4& rho, double tol = 1e-9);

}  // namespace qnet::pol

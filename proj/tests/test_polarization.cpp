#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "qnet/polarization.hpp"

using namespace qnet::pol;

namespace {

// Independent construction of a retarder by the defining formula, with the
// matrix product expanded by hand. Used as the oracle for waveplate_unitary.
Mat2 retarder_oracle(double phi, double delta) {
  const cd e = std::exp(cd(0.0, delta));
  const double c = std::cos(phi), s = std::sin(phi);
  Mat2 m;
  m(0, 0) = c * c + e * s * s;
  m(0, 1) = c * s - e * s * c;
  m(1, 0) = s * c - e * c * s;
  m(1, 1) = s * s + e * c * c;
  return m;
}

bool equal_up_to_phase(const Vec2& a, const Vec2& b, double tol = 1e-12) {
  // |<a|b>| = 1 for normalized states equal up to a global phase.
  return std::abs(std::abs(cd((a.adjoint() * b)(0))) - 1.0) < tol;
}

Mat2 random_su2(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector4d v(n(rng), n(rng), n(rng), n(rng));
  v.normalize();
  Mat2 u;
  u << cd(v(0), v(1)), cd(v(2), v(3)), cd(-v(2), v(3)), cd(v(0), -v(1));
  return u;
}

Mat4 random_density_matrix(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat4 g;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) g(i, j) = cd(n(rng), n(rng));
  Mat4 rho = g * g.adjoint();
  return rho / rho.trace().real();
}

}  // namespace

TEST_SUITE_BEGIN("polarization");

TEST_CASE("basis states match the declared convention") {
  CHECK(basis_state('H')(0) == cd(1.0, 0.0));
  CHECK(basis_state('V')(1) == cd(1.0, 0.0));
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(basis_state('D').isApprox(Vec2(r, r), 1e-15));
  CHECK(basis_state('A').isApprox(Vec2(r, -r), 1e-15));
  CHECK(basis_state('R').isApprox(Vec2(cd(r, 0), cd(0, r)), 1e-15));
  CHECK(basis_state('L').isApprox(Vec2(cd(r, 0), cd(0, -r)), 1e-15));
  CHECK(basis_state("h").isApprox(basis_state('H')));
  CHECK_THROWS_AS((void)basis_state('X'), std::invalid_argument);
  CHECK_THROWS_AS((void)basis_state("HV"), std::invalid_argument);
  for (char b : {'H', 'V', 'D', 'A', 'R', 'L'}) {
    CHECK(std::abs(basis_state(b).norm() - 1.0) < 1e-15);
  }
}

TEST_CASE("waveplate_unitary equals the expanded formula and is unitary") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0 * kPi, 2.0 * kPi);
  for (int k = 0; k < 100; ++k) {
    const double phi = u(rng), delta = u(rng);
    const Mat2 w = waveplate_unitary(phi, delta);
    CHECK(w.isApprox(retarder_oracle(phi, delta), 1e-12));
    CHECK(is_unitary(w, 1e-10));
  }
}

TEST_CASE("quarter-wave at 45 degrees sends H to circular") {
  const Mat2 w = waveplate_unitary(kPi / 4.0, kPi / 2.0);
  const Vec2 out = w * basis_state('H');
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(equal_up_to_phase(out, Vec2(cd(r, 0), cd(0, -r))));
}

TEST_CASE("analyzer_unitary composes WP3*WP2*WP1*WP0 and stays unitary") {
  CHECK(analyzer_unitary({0, 0, 0, 0}).isApprox(Mat2::Identity(), 1e-15));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  for (int k = 0; k < 100; ++k) {
    std::array<double, 4> d{u(rng), u(rng), u(rng), u(rng)};
    // Oracle: explicit product in the documented order.
    const Mat2 expect = retarder_oracle(kPi / 4.0, d[3]) * retarder_oracle(0.0, d[2]) *
                        retarder_oracle(kPi / 4.0, d[1]) * retarder_oracle(0.0, d[0]);
    const Mat2 got = analyzer_unitary(d);
    CHECK(got.isApprox(expect, 1e-12));
    CHECK(is_unitary(got, 1e-10));
  }
}

TEST_CASE("projection probabilities: frozen cases and complement sum") {
  // |<H| QWP(45deg) |D>|^2 = 1/2.
  const Mat2 qwp = waveplate_unitary(kPi / 4.0, kPi / 2.0);
  CHECK(projection_probability(qwp, basis_state('D')) == doctest::Approx(0.5).epsilon(1e-12));

  // Transmitted plus orthogonal port sums to one for any unitary and state.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  for (int k = 0; k < 50; ++k) {
    const Mat2 w = analyzer_unitary({u(rng), u(rng), u(rng), u(rng)});
    for (char b : {'H', 'V', 'D', 'A', 'R', 'L'}) {
      const Vec2 psi = basis_state(b);
      const cd a0 = (w * psi)(0), a1 = (w * psi)(1);
      CHECK(std::norm(a0) + std::norm(a1) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(projection_probability(w, psi) >= 0.0);
      CHECK(projection_probability(w, psi) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("coincidence probabilities of phi+ in the standard bases") {
  const Mat4 rho = pure_dm(bell_state("phi+"));

  auto analyzer_for = [](const Vec2& target) {
    // Direct projector construction, bypassing analyzer_unitary: a unitary
    // sending target -> H is the adjoint of the column matrix [target, orth].
    Vec2 orth(-std::conj(target(1)), std::conj(target(0)));
    Mat2 m;
    m.col(0) = target;
    m.col(1) = orth;
    return Mat2(m.adjoint());
  };

  auto p = [&](char a, char b) {
    return coincidence_probability(rho, analyzer_for(basis_state(a)), analyzer_for(basis_state(b)));
  };

  CHECK(p('H', 'H') == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p('H', 'V') == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p('V', 'V') == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p('D', 'D') == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p('D', 'A') == doctest::Approx(0.0).epsilon(1e-12));
  // With R = (H + iV)/sqrt2 the phi+ correlations are anticorrelated in the
  // circular basis: RR vanishes, RL is maximal.
  CHECK(p('R', 'R') == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p('R', 'L') == doctest::Approx(0.5).epsilon(1e-12));

  // The four outcomes of a complete local basis pair always sum to 1.
  std::mt19937_64 rng(17);
  for (int k = 0; k < 25; ++k) {
    const Mat4 any = random_density_matrix(rng);
    const Mat2 ua = random_su2(rng), ub = random_su2(rng);
    Mat2 flip;  // swaps the analyzer ports
    flip << 0, 1, 1, 0;
    const double s = coincidence_probability(any, ua, ub) +
                     coincidence_probability(any, flip * ua, ub) +
                     coincidence_probability(any, ua, flip * ub) +
                     coincidence_probability(any, flip * ua, flip * ub);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("werner family: analytic fidelity and concurrence") {
  const Vec4 phi = bell_state("phi+");
  for (double p : {0.0, 0.25, 1.0 / 3.0, 0.5, 0.75, 0.8, 1.0}) {
    const Mat4 w = werner_state(p);
    CHECK(is_density_matrix(w));
    CHECK(fidelity(w, phi) == doctest::Approx((3.0 * p + 1.0) / 4.0).epsilon(1e-10));
    const double expect_c = std::max(0.0, (3.0 * p - 1.0) / 2.0);
    CHECK(concurrence(w) == doctest::Approx(expect_c).epsilon(1e-9));
  }
  CHECK(concurrence(werner_state(1.0 / 3.0)) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS((void)werner_state(1.5), std::invalid_argument);
}

TEST_CASE("concurrence: pure states, separable states, local-unitary invariance") {
  CHECK(concurrence(pure_dm(bell_state("phi+"))) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(concurrence(pure_dm(bell_state("psi-"))) == doctest::Approx(1.0).epsilon(1e-9));

  Vec4 hh = Vec4::Zero();
  hh(0) = 1.0;
  CHECK(concurrence(pure_dm(hh)) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(concurrence(Mat4::Identity() * 0.25) == doctest::Approx(0.0).epsilon(1e-9));

  std::mt19937_64 rng(23);
  for (int k = 0; k < 20; ++k) {
    const Mat4 rho = werner_state(0.9);
    const Mat4 rot = apply_local(random_su2(rng), random_su2(rng), rho);
    CHECK(concurrence(rot) == doctest::Approx(concurrence(rho)).epsilon(1e-8));
    CHECK(fidelity(rot, bell_state("phi+")) <= 1.0 + 1e-12);
  }
}

TEST_CASE("dephase_hv keeps populations, scales circular correlations") {
  const Mat4 rho = pure_dm(bell_state("phi+"));
  for (double q : {0.0, 0.3, 0.7, 1.0}) {
    const Mat4 d = dephase_hv(rho, q);
    CHECK(is_density_matrix(d));
    CHECK(d(0, 0).real() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d(3, 3).real() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d(0, 3).real() == doctest::Approx(0.5 * q).epsilon(1e-12));
  }
  CHECK(dephase_hv(rho, 1.0).isApprox(rho, 1e-14));
}

TEST_CASE("fidelity is linear and bounded") {
  std::mt19937_64 rng(29);
  const Vec4 t = bell_state("phi+");
  for (int k = 0; k < 20; ++k) {
    const Mat4 a = random_density_matrix(rng), b = random_density_matrix(rng);
    const double fa = fidelity(a, t), fb = fidelity(b, t);
    CHECK(fidelity(0.5 * a + 0.5 * b, t) == doctest::Approx(0.5 * fa + 0.5 * fb).epsilon(1e-10));
    CHECK(fa >= -1e-12);
    CHECK(fa <= 1.0 + 1e-12);
  }
}

TEST_CASE("trace_distance basic properties") {
  const Mat4 a = werner_state(1.0), b = werner_state(0.0);
  CHECK(trace_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(trace_distance(a, b) == doctest::Approx(0.75).epsilon(1e-10));
  CHECK(trace_distance(a, b) == doctest::Approx(trace_distance(b, a)).epsilon(1e-12));
}

TEST_SUITE_END();

#include "qnet/sim_model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace qnet::sim {

using qnet::pol::Mat2;
using qnet::pol::Mat4;

std::string to_string(EpsMode mode) {
  switch (mode) {
    case EpsMode::off:
      return "off";
    case EpsMode::entangled:
      return "entangled";
    case EpsMode::alignment:
      return "alignment";
  }
  return "off";
}

EpsMode eps_mode_from_string(const std::string& s) {
  if (s == "off") return EpsMode::off;
  if (s == "entangled") return EpsMode::entangled;
  if (s == "alignment") return EpsMode::alignment;
  throw std::invalid_argument("unknown EPS mode '" + s + "'");
}

double pair_rate(const EpsModel& eps) {
  return eps.rep_rate_hz * eps.mu0 * std::pow(10.0, -eps.attenuation_db / 10.0);
}

FiberChannel make_fiber(double length_km, double extra_loss_db, double drift_rate,
                        uint64_t seed) {
  FiberChannel f;
  f.length_km = length_km;
  f.extra_loss_db = extra_loss_db;
  f.propagation_delay_ps = length_km * 4.895e6;  // ~1.468 refractive index
  f.drift_rate = drift_rate;
  f.seed = seed;
  return f;
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  // splitmix64 finalizer chained over the words
  uint64_t x = seed;
  for (uint64_t w : {a, b, c}) {
    x += 0x9e3779b97f4a7c15ULL + w;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x = x ^ (x >> 31);
  }
  return x;
}

namespace {

Mat2 axis_rotation(double angle, double nx, double ny, double nz) {
  using namespace std::complex_literals;
  const double c = std::cos(angle / 2.0), s = std::sin(angle / 2.0);
  Mat2 u;
  u << c - 1i * s * nz, -s * ny - 1i * s * nx,  //
      s * ny - 1i * s * nx, c + 1i * s * nz;
  return u;
}

}  // namespace

qnet::pol::Mat2 drift_unitary(const FiberChannel& fiber, double elapsed_s) {
  Mat2 u = Mat2::Identity();
  if (fiber.drift_rate <= 0.0 || elapsed_s <= 0.0) return u;

  const uint64_t full_steps = static_cast<uint64_t>(std::floor(elapsed_s));
  const double remainder = elapsed_s - static_cast<double>(full_steps);
  for (uint64_t k = 1; k <= full_steps + (remainder > 0.0 ? 1 : 0); ++k) {
    const double step = (k <= full_steps) ? 1.0 : remainder;
    std::mt19937_64 rng(mix_seed(fiber.seed, k, 0x66696265u));  // per-step stream
    std::uniform_real_distribution<double> uz(-1.0, 1.0);
    std::uniform_real_distribution<double> uphi(0.0, 2.0 * qnet::pol::kPi);
    std::normal_distribution<double> angle(0.0, fiber.drift_rate);
    const double z = uz(rng);
    const double phi = uphi(rng);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = angle(rng) * std::sqrt(step);
    u = axis_rotation(a, r * std::cos(phi), r * std::sin(phi), z) * u;
  }
  return u;
}

qnet::pol::Mat2 drift_event_unitary(const DriftEvent& ev) {
  std::mt19937_64 rng(ev.axis_seed);
  std::uniform_real_distribution<double> uz(-1.0, 1.0);
  std::uniform_real_distribution<double> uphi(0.0, 2.0 * qnet::pol::kPi);
  const double z = uz(rng);
  const double phi = uphi(rng);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return axis_rotation(ev.angle_rad, r * std::cos(phi), r * std::sin(phi), z);
}

double SiteModel::arm_efficiency() const {
  return std::pow(10.0, -fiber.total_loss_db() / 10.0) * detector.efficiency;
}

Mat4 Scenario::emitted_state() const {
  if (state_override.has_value()) return *state_override;
  const double w = eps.intrinsic_visibility;
  const Mat4 target = qnet::pol::pure_dm(qnet::pol::bell_state());
  const Mat4 core = qnet::pol::dephase_hv(target, eps.dephasing);
  return w * core + (1.0 - w) * Mat4::Identity() / 4.0;
}

ModelRates model_rates(const Scenario& scn) {
  ModelRates r;
  const double tau = scn.coincidence_window_ps * 1e-12;
  const double eta_a = scn.site_a.arm_efficiency();
  const double eta_b = scn.site_b.arm_efficiency();
  const double dark_a = scn.site_a.detector.dark_rate_cps;
  const double dark_b = scn.site_b.detector.dark_rate_cps;

  if (scn.eps.mode == EpsMode::entangled) {
    r.pair = pair_rate(scn.eps);
    const Mat4 rho = scn.emitted_state();
    const Mat2 ident = Mat2::Identity();
    const double p_joint = qnet::pol::coincidence_probability(rho, ident, ident);
    const Mat4 proj_a = qnet::pol::kron(qnet::pol::analyzer_projector(ident), Mat2::Identity());
    const Mat4 proj_b = qnet::pol::kron(Mat2::Identity(), qnet::pol::analyzer_projector(ident));
    const double p_marg_a = (rho * proj_a).trace().real();
    const double p_marg_b = (rho * proj_b).trace().real();
    r.singles_a = r.pair * eta_a * p_marg_a + dark_a;
    r.singles_b = r.pair * eta_b * p_marg_b + dark_b;
    r.coincidences = r.pair * eta_a * eta_b * p_joint;
  } else if (scn.eps.mode == EpsMode::alignment) {
    const auto ket = qnet::pol::basis_state(scn.eps.alignment_basis);
    const double p = std::norm(ket(0));  // H-analyzer transmission of |b>
    r.singles_a = scn.eps.alignment_rate_hz * eta_a * p + dark_a;
    r.singles_b = scn.eps.alignment_rate_hz * eta_b * p + dark_b;
  } else {
    r.singles_a = dark_a;
    r.singles_b = dark_b;
  }

  r.accidentals = r.singles_a * r.singles_b * tau;
  if (r.accidentals > 0.0) {
    r.car = (r.coincidences + r.accidentals) / r.accidentals;
  } else {
    r.car = r.coincidences > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return r;
}

double accidental_rate(const Scenario& scn) { return model_rates(scn).accidentals; }

std::vector<double> car_curve(Scenario scn, const std::vector<double>& grid_db) {
  std::vector<double> out;
  out.reserve(grid_db.size());
  for (double a : grid_db) {
    scn.eps.attenuation_db = a;
    out.push_back(model_rates(scn).car);
  }
  return out;
}

namespace {

Scenario ideal_profile() {
  Scenario s;
  s.profile = "ideal";
  s.eps.mu0 = 4e-4;  // 1e5 pairs/s at 0 dB
  s.eps.attenuation_db = 0.0;
  s.eps.intrinsic_visibility = 1.0;
  s.eps.dephasing = 1.0;
  s.site_a.fiber = make_fiber(0.0, 0.0, 0.0, 101);
  s.site_b.fiber = make_fiber(0.0, 0.0, 0.0, 202);
  s.site_a.detector = {1.0, 0.0, 0.0};
  s.site_b.detector = {1.0, 0.0, 0.0};
  s.site_a.clock = {0, 0.0, 0.0, true};
  s.site_b.clock = {0, 0.0, 0.0, true};
  s.coincidence_window_ps = 500;
  return s;
}

// Deployed two-node testbed: 3.19 km and 5.28 km arms from the source site.
// Constants solve, at window 10 ns and the f = 0.85 operating point of the
// 0..15.5 dB sweep: CAR peak 47.0 at 12.5 dB, operating point 9.0 dB with
// A ~ 140 cps and counted C ~ 5640 cps, H-basis fringe visibility ~ 0.92 and
// Bell-state fidelity ~ 0.833 of the delivered state.
Scenario remote_profile() {
  Scenario s;
  s.profile = "remote";
  s.eps.mu0 = 0.0759908;
  s.eps.attenuation_db = 9.0;
  s.eps.intrinsic_visibility = 0.9657;
  s.eps.dephasing = 0.7674;
  s.site_a.fiber = make_fiber(3.19, 10.0971, 0.0015, 101);
  s.site_b.fiber = make_fiber(5.28, 10.0971, 0.0015, 202);
  s.site_a.detector = {0.85, 36534.0, 60.0};
  s.site_b.detector = {0.85, 36534.0, 60.0};
  s.site_a.clock = {0, 0.5, 8.62, false};
  s.site_b.clock = {41'000'000, -0.8, 8.62, false};
  s.coincidence_window_ps = 10'000;
  return s;
}

// Same hardware on short patch fibers; brighter link, so less accidental
// admixture and higher visibilities.
Scenario colocated_profile() {
  Scenario s = remote_profile();
  s.profile = "colocated";
  s.eps.attenuation_db = 18.36;
  s.eps.intrinsic_visibility = 0.96;
  s.eps.dephasing = 0.96278;
  s.site_a.fiber = make_fiber(0.05, 1.5275, 0.0015, 101);
  s.site_b.fiber = make_fiber(0.05, 1.5275, 0.0015, 202);
  s.site_b.clock.offset_ps = 5'000'000;
  return s;
}

}  // namespace

Scenario profile_scenario(const std::string& name) {
  if (name == "ideal") return ideal_profile();
  if (name == "default" || name == "remote") {
    Scenario s = remote_profile();
    s.profile = name;
    return s;
  }
  if (name == "colocated") return colocated_profile();
  throw std::invalid_argument("unknown profile '" + name + "'");
}

std::vector<std::string> profile_names() { return {"ideal", "default", "colocated", "remote"}; }

}  // namespace qnet::sim

#pragma once

// Analytic models of the simulated photonic infrastructure: the pulsed
// entangled-pair source, fiber channels with loss/delay/polarization drift,
// detectors, and time-tagger clocks. Everything here is a pure value type or
// a pure function; the event-level realization lives in sim_engine.
//
// Rate model (used both by the generator and as the closed-form oracle):
//   pair rate        lambda(alpha) = rep_rate * mu0 * 10^(-alpha/10)
//   arm efficiency   eta_i = 10^(-fiber_loss_db/10) * detector_efficiency
//   singles          S_i = lambda * eta_i * P_marginal_i + dark_i
//   coincidences     C   = lambda * eta_a * eta_b * P_joint(state, settings)
//   accidentals      A   = S_a * S_b * window
// The counted rate in the signal window is C + A; CAR = (C + A) / A.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qnet/polarization.hpp"

namespace qnet::sim {

enum class EpsMode { off, entangled, alignment };

std::string to_string(EpsMode mode);
EpsMode eps_mode_from_string(const std::string& s);

struct EpsModel {
  double rep_rate_hz = 250e6;  // pulsed pump, 50-1250 MHz supported range
  double mu0 = 0.076;          // mean pairs per pulse at 0 dB attenuation
  double attenuation_db = 0.0;
  // Source-intrinsic state quality: weight of the (dephased) Bell component
  // versus white noise, and the residual H/V coherence after transmission.
  double intrinsic_visibility = 1.0;
  double dephasing = 1.0;
  std::string channel_pair = "CH45/CH23";
  EpsMode mode = EpsMode::entangled;
  char alignment_basis = 'H';        // pure state emitted in alignment mode
  double alignment_rate_hz = 5e6;    // alignment photon rate, not attenuated
};

// Pairs per second leaving the source at the current pump attenuation.
double pair_rate(const EpsModel& eps);

struct FiberChannel {
  double length_km = 0.0;
  double loss_db_per_km = 0.2;
  double extra_loss_db = 0.0;  // connectors, analyzer insertion, WDM
  double propagation_delay_ps = 0.0;
  double drift_rate = 0.0;  // radians/sqrt(s) of polarization random walk
  uint64_t seed = 0;

  double total_loss_db() const { return length_km * loss_db_per_km + extra_loss_db; }
};

FiberChannel make_fiber(double length_km, double extra_loss_db, double drift_rate,
                        uint64_t seed);

// Polarization transform accumulated by the fiber after `elapsed_s` seconds.
// Random walk in 1 s micro-steps, each a rotation about a random axis with
// angle ~ N(0, drift_rate); reproducible for a fixed (seed, elapsed_s) and
// consistent under extension (the first k steps are shared by all later
// times). Identity when drift_rate == 0 or elapsed_s == 0.
qnet::pol::Mat2 drift_unitary(const FiberChannel& fiber, double elapsed_s);

struct DetectorModel {
  double efficiency = 1.0;  // in [0,1]
  double dark_rate_cps = 0.0;
  double jitter_sigma_ps = 0.0;
};

struct ClockModel {
  int64_t offset_ps = 0;
  double drift_ppm = 0.0;  // frequency error while free-running
  double jitter_sigma_ps = 0.0;
  bool locked_to_reference = false;  // locked => drift frozen, jitter remains
};

struct SiteModel {
  FiberChannel fiber;
  DetectorModel detector;
  ClockModel clock;

  // Fraction of photons entering the fiber that produce a detector click,
  // before polarization projection.
  double arm_efficiency() const;
};

// Scripted polarization kick applied to one site's fiber at a fixed virtual
// time, on top of the continuous random walk. Used to exercise the drift
// compensation path deterministically.
struct DriftEvent {
  double time_s = 0.0;
  int site = 0;  // 0 = site A, 1 = site B
  double angle_rad = 0.0;
  uint64_t axis_seed = 0;
};

// Rotation by angle_rad about the axis drawn uniformly from axis_seed.
qnet::pol::Mat2 drift_event_unitary(const DriftEvent& ev);

// One source site feeding exactly two measurement sites.
struct Scenario {
  std::string profile = "ideal";
  EpsModel eps;
  SiteModel site_a;
  SiteModel site_b;
  double coincidence_window_ps = 500;
  double pps_interval_s = 1.0;
  double ref_rate_hz = 10e6;     // nominal reference oscillator
  double ref_tag_rate_hz = 1e4;  // decimated logging rate of reference edges
  uint64_t seed = 1;
  std::optional<qnet::pol::Mat4> state_override;
  std::vector<DriftEvent> drift_events;

  // Two-photon state leaving the source: intrinsic_visibility * dephased
  // |Phi+> plus white noise, or the explicit override when set.
  qnet::pol::Mat4 emitted_state() const;
};

struct ModelRates {
  double pair = 0.0;          // pairs/s leaving the source
  double singles_a = 0.0;     // counts/s at each site, darks included
  double singles_b = 0.0;
  double coincidences = 0.0;  // true pair coincidences/s at matched H/H
  double accidentals = 0.0;   // S_a * S_b * window
  double car = 0.0;           // (C + A) / A, the counted-window convention
};

// Closed-form rates for a drift-compensated link with both analyzers at H.
ModelRates model_rates(const Scenario& scn);

double accidental_rate(const Scenario& scn);

// Model CAR evaluated over an attenuation grid (scenario copied per point).
std::vector<double> car_curve(Scenario scn, const std::vector<double>& grid_db);

// Named hardware profiles. "default" and "remote" describe the deployed
// two-node testbed (3.19 km and 5.28 km arms); "colocated" is the same
// hardware on short patch fibers; "ideal" is lossless and noiseless.
Scenario profile_scenario(const std::string& name);
std::vector<std::string> profile_names();

// Counter-based seed mixing: deterministic independent of thread count and
// call order. splitmix64 over the concatenated words.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

}  // namespace qnet::sim

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qnet/control.hpp"
#include "qnet/polarization.hpp"

// Service-plane experiments built on the orchestration routines: two-photon
// interference fringes, full state tomography, and the continuously
// monitored entanglement-distribution loop.

namespace qnet::services {

using nlohmann::json;

struct FringeDataset {
  char basis = 'H';           // analysis basis both sites share
  std::vector<double> theta;  // swept retardance of the site-b back plate
  std::vector<uint64_t> counts;
  double dwell_s = 0.0;
  bool complete = true;  // false when an agent failed mid-sweep
};

// y(theta) = amplitude * sin(frequency * theta + phase) + offset, after
// normalization amplitude >= 0 and phase in [0, 2pi).
struct FringeFit {
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
  double offset = 0.0;
  double visibility = 0.0;  // amplitude / offset; NaN when offset <= 0
  double rms_residual = 0.0;
  bool converged = false;
};

// Damped least-squares sinusoid fit. Needs at least 8 samples; the frequency
// is seeded from the strongest discrete tone. A diverged fit reports
// visibility NaN.
FringeFit fit_fringe(const std::vector<double>& theta,
                     const std::vector<double>& counts);

struct TpiParams {
  std::string bases = "HVRL";
  int points = 24;
  double dwell_s = 0.5;
  int64_t window_ps = tags::kDefaultWindowPs;
  int64_t peak_delay_ps = 0;
  int sweep_plate = 3;
};

struct TpiRun {
  std::vector<FringeDataset> fringes;  // one per requested basis
  bool complete = true;
  std::string error;  // first agent failure, empty when complete
};

// Two-photon interference: the site-a analyzer is parked on each basis while
// the site-b back plate sweeps a full turn. An agent failure mid-sweep flags
// the affected dataset and returns the partial run instead of throwing;
// resume_tpi picks up at the first missing point.
TpiRun run_tpi(control::Session& s, const TpiParams& p);
void resume_tpi(control::Session& s, const TpiParams& p, TpiRun& run);

// Convenience: fit every complete-enough dataset, NaN visibility otherwise.
std::map<char, FringeFit> fit_tpi(const TpiRun& run);

struct TomographySetting {
  char basis_a = 'H';
  char basis_b = 'H';
  uint64_t counts = 0;
};

struct Tomography {
  std::vector<TomographySetting> settings;  // 36 analyzer combinations
  pol::Mat4 rho = pol::Mat4::Zero();
  double fidelity_phi_plus = 0.0;
  double concurrence = 0.0;
  double pairs_per_setting = 0.0;  // normalization estimate
  int reconfigurations = 0;        // analyzer plate moves during collection
  double dwell_s = 0.0;
};

struct QstParams {
  double dwell_s = 0.5;
  int64_t window_ps = tags::kDefaultWindowPs;
  int64_t peak_delay_ps = 0;
};

// Full 36-setting polarization state tomography over both analyzers.
Tomography run_qst(control::Session& s, const QstParams& p);

// Linear-inversion reconstruction over the Hermitian unit-trace
// parameterization, followed by eigenvalue clamping (negative part removed,
// deficit taken proportionally out of the positive part) and trace
// renormalization. The normalization is estimated from complete
// basis-family groups. Throws when the settings do not span the state space
// (for example, duplicated settings crowding out needed ones).
pol::Mat4 reconstruct_density_matrix(
    const std::vector<std::pair<char, char>>& settings,
    const std::vector<double>& counts);

struct ServiceConfig {
  double run_time_s = 43200.0;  // nominal wall span of the service
  double delta_t_s = 3600.0;    // nominal visibility-check cadence
  double time_compression = 3600.0;  // divides both nominal spans
  std::string threshold_mode = "per_basis";  // or "average"
  double visibility_threshold = 0.0;  // <= 0 selects auto (0.9 x initial avg)
  control::DarkCountBounds dark_bounds{1000.0, 100000.0};
  std::string bases = "HVRL";
  int fringe_points = 24;
  double tpi_dwell_s = 0.15;
  double calibration_dwell_s = 1.0;
  double calibration_fraction = 0.85;
  std::vector<double> calibration_grid = control::default_attenuation_grid();
  control::CompensationParams compensation{};
  int64_t window_ps = 10000;
  std::function<void(int)> on_iteration_start;  // observability hook
};

struct IterationRecord {
  int index = 0;
  double vtime_s = 0.0;
  std::map<char, double> visibility;
  double average_visibility = 0.0;
  double threshold = 0.0;
  bool recalibrated = false;
  bool complete = true;
};

struct ServiceRun {
  bool aborted = false;
  std::string abort_reason;
  control::SyncReport sync;
  control::DarkReport dark;
  control::CompensationReport compensation;
  control::CalibrationScan calibration;
  double accidental_cps = 0.0;  // background at the operating point
  std::string threshold_mode;
  double threshold = 0.0;
  int planned_iterations = 0;
  std::vector<IterationRecord> iterations;
};

// Continuous entanglement distribution: synchronize, gate on dark counts,
// compensate, calibrate, then monitor fringe visibilities every delta_t and
// recompensate instead of waiting whenever the threshold trips (any tracked
// basis below threshold or NaN in per_basis mode, the mean in average mode).
// The first iteration seeds the auto threshold and never triggers. Reported
// visibilities are raw; the accidental floor is reported alongside, never
// subtracted.
ServiceRun entanglement_service(control::Session& s, const ServiceConfig& cfg);

// Artifact serialization helpers shared by the CLI and tests.
json sync_to_json(const control::SyncReport& r);
json dark_to_json(const control::DarkReport& r);
json calibration_to_json(const control::CalibrationScan& c);
json compensation_to_json(const control::CompensationReport& r);
json fit_to_json(const FringeFit& f);
json fringe_to_json(const FringeDataset& d);
json rho_to_json(const pol::Mat4& rho);
pol::Mat4 rho_from_json(const json& j);
json tomography_to_json(const Tomography& t);
json iteration_to_json(const IterationRecord& r);
json service_run_to_json(const ServiceRun& r);
void write_fringe_csv(const std::string& path,
                      const std::vector<FringeDataset>& fringes);

}  // namespace qnet::services

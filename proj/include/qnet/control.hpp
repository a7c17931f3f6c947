#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qnet/agents.hpp"
#include "qnet/polarization.hpp"
#include "qnet/rpc.hpp"
#include "qnet/timetags.hpp"

// Link orchestration. Every routine in here drives the instruments purely
// through agent RPC; none of them touch the simulation engine directly, so
// they would run unchanged against real hardware agents speaking the same
// methods.

namespace qnet::control {

using nlohmann::json;

class ControlError : public std::runtime_error {
 public:
  enum class Kind { lock, sync, dark_abort, calibration, scan };
  ControlError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind(kind) {}
  Kind kind;
};

// Client bundle for one orchestrated link plus dwell helpers. The engine
// keeps a single virtual clock for both sites; advance() goes through ttu_a
// but moves time for everyone.
class Session {
 public:
  explicit Session(const agents::AgentEndpoints& ep,
                   rpc::ProvenanceLog* log = nullptr,
                   rpc::RetryPolicy policy = {});

  rpc::Client& eps() { return eps_; }
  rpc::Client& pa(int site);
  rpc::Client& ttu(int site);
  const rpc::RetryPolicy& policy() const { return policy_; }

  json call(rpc::Client& c, const std::string& method,
            json params = json::object());

  double advance(double seconds);
  uint64_t acquire(int site, double duration_s);
  tags::StreamSet fetch(int site, uint64_t handle);

  // acquire + advance + fetch for one dwell.
  std::pair<tags::StreamSet, tags::StreamSet> acquire_both(double dwell_s);
  tags::StreamSet acquire_one(int site, double dwell_s);

 private:
  rpc::Client eps_, pa_a_, pa_b_, ttu_a_, ttu_b_;
  rpc::RetryPolicy policy_;
};

struct SyncReport {
  int64_t offset_ps = 0;       // median PPS arrival difference, site b - site a
  double rms_jitter_ps = 0.0;  // two-sided jitter of the shared reference channel
  size_t pps_count = 0;        // PPS marks per site that entered the estimate
  int lock_attempts_a = 1;
  int lock_attempts_b = 1;
};

// Locks both TTUs to the external reference (a refusing agent is retried up
// to lock_attempts times), then measures the residual inter-site offset from
// PPS marks and the link timing jitter from the reference channel. Fails if
// fewer than 3 PPS marks land on either side.
SyncReport synchronize_sites(Session& s, double acquire_s = 5.0,
                             int lock_attempts = 3);

struct DarkCountBounds {
  double min_cps = 0.0;
  double max_cps = 0.0;
};

struct DarkReport {
  double signal_cps = 0.0;  // site a detector
  double idler_cps = 0.0;   // site b detector
  bool pass = false;
  std::string offender;  // "signal" or "idler" when pass is false
  double offending_cps = 0.0;
};

// Blocks the source (max attenuation, emission off), measures the residual
// per-detector rate, restores the previous source state. Violations are
// reported, not thrown; callers decide whether to abort.
DarkReport check_dark_counts(Session& s, DarkCountBounds bounds,
                             double dwell_s = 1.0);

struct CalibrationScan {
  std::vector<double> attenuation_db;
  std::vector<double> coincidences_cps;
  std::vector<double> accidentals_cps;
  std::vector<double> car;      // NaN where excluded (zero accidentals)
  std::vector<double> car_fit;  // fitted response sampled on the grid
  double car_max = 0.0;         // fitted response maximum
  double peak_db = 0.0;         // attenuation of the fitted maximum
  double target_fraction = 0.0;
  size_t chosen_index = 0;
  double alpha_star_db = 0.0;
  int64_t peak_delay_ps = 0;
};

std::vector<double> default_attenuation_grid();  // 0, 0.5, ..., 15.5 dB

// Pure operating-point rule: index minimizing |car - f * max(car)|, ties to
// the lower index (lower attenuation). NaN entries are skipped; throws when
// every entry is NaN.
size_t select_operating_point(const std::vector<double>& car,
                              double target_fraction);

// Pump-attenuation sweep. Measures coincidence and accidental rates per grid
// point at the propagation-delay peak, fits a smooth unimodal response to
// the noisy CAR table and applies the operating-point rule to the fit, then
// parks the EPS at alpha_star. Points with zero accidentals are excluded; a
// fully excluded table is a calibration failure.
CalibrationScan calibrate_eps(Session& s, int64_t window_ps,
                              const std::vector<double>& grid = default_attenuation_grid(),
                              double target_fraction = 0.85,
                              double dwell_s = 2.0);

inline constexpr double kDefaultScanStepRad = pol::kPi / 90.0;       // 2 deg
inline constexpr double kDefaultScanHalfWindowRad = pol::kPi / 6.0;  // 30 deg

struct ScanParams {
  double center_rad = 0.0;
  double step_rad = kDefaultScanStepRad;
  double half_window_rad = kDefaultScanHalfWindowRad;
};

struct MinimizeResult {
  double theta_star = 0.0;
  double min_cps = 0.0;
  std::vector<double> grid;      // commanded retardances, center - w ... center + w
  std::vector<double> rate_cps;  // transmitted singles per grid point
};

// Scans one analyzer waveplate over center +- half_window and leaves it at
// the grid point with the fewest transmitted singles. The alignment source
// is prepared in prep_basis for the duration of the scan. Count ties break
// toward the grid point nearest the center; on agent failure the plate is
// restored to the center before the error propagates. The plate is never
// commanded outside the scan window.
MinimizeResult minimize_waveplate(Session& s, int site, int plate,
                                  const ScanParams& params, char prep_basis,
                                  double dwell_s = 0.1);

struct CompensationParams {
  double step_rad = kDefaultScanStepRad;
  double half_window_rad = kDefaultScanHalfWindowRad;
  double dwell_s = 0.1;
  double epsilon_sigma = 3.0;  // round-to-round minimum change tolerance
  int max_rounds = 5;
};

struct SiteCompensation {
  int site = 0;
  int rounds = 0;
  bool converged = false;
  bool changed = false;  // any plate moved more than one scan step
  std::vector<double> d_min_cps;  // per-round circular-stage minimum
  std::vector<double> h_min_cps;  // per-round linear-stage minimum
  std::array<double, 4> baseline{};
  double orthogonal_cps = 0.0;  // V-analyzed singles with H prepared, after
};

struct CompensationReport {
  SiteCompensation site_a;
  SiteCompensation site_b;
};

// Polarization drift compensation for both analyzers. Per round and site:
// with D prepared and WP3 held at quarter wave, WP2 is scanned to null the
// transmitted port; with H prepared and WP3 at half wave, WP1 then WP0 are
// scanned the same way. Rounds repeat until both stage minima stop moving
// (within epsilon_sigma Poisson sigmas) or max_rounds is reached. The
// winning settings become the analyzer baseline, with the quarter-wave
// offset folded into WP2 so that basis selection on the compensated stack
// analyzes the canonical states through the fiber.
CompensationReport compensate_polarization_drift(Session& s,
                                                 const CompensationParams& p = {});

}  // namespace qnet::control

#pragma once

// Event-level realization of a Scenario: a shared virtual clock, mutable
// device state (EPS attenuation/mode, analyzer retardances, TTU clock locks)
// and time-tag generation for acquisition windows.
//
// Semantics:
//   - One engine-wide virtual clock, advanced only by advance(). acquire()
//     registers a window [now, now + duration) without advancing time;
//     fetch() requires the window to have elapsed. This lets the control
//     plane start coordinated acquisitions on both sites over the same
//     virtual interval, the way a synchronized-measurement context would.
//   - In entangled mode the two sites' events for identically-timed windows
//     come from one joint realization, so cross-site coincidences are real.
//     Device settings are snapshotted when the window is registered.
//   - In alignment/off mode windows are generated per site independently.
//   - Generation is deterministic for a fixed scenario seed regardless of
//     thread count or acquisition order: every random stream is seeded by
//     counters (window start, block index, category, site).
//
// Channel numbering is per-TTU: photons on 1, PPS on 5, the decimated
// reference clock on 6, identical at both sites. Cross-site merges therefore
// need a channel remap, which is representative of the real hardware.

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <utility>

#include "qnet/sim_model.hpp"
#include "qnet/timetags.hpp"

namespace qnet::sim {

using tags::kPhotonChannel;
using tags::kPpsChannel;
using tags::kRefChannel;

struct EpsStatus {
  double attenuation_db = 0.0;
  EpsMode mode = EpsMode::off;
  char alignment_basis = 'H';
  std::string channel_pair;
  double pair_rate_hz = 0.0;
};

class SimEngine {
 public:
  explicit SimEngine(Scenario scn);

  int64_t vtime_ps() const;
  double vtime_s() const;
  void advance(double seconds);

  // EPS controls.
  void set_attenuation(double db);
  double attenuation() const;
  void set_mode(EpsMode mode, char alignment_basis);
  EpsStatus eps_status() const;

  // Analyzer controls; site is 0 (A) or 1 (B), plate 0..3.
  void set_waveplate(int site, int plate, double retardance);
  std::array<double, 4> waveplates(int site) const;
  void set_baseline(int site, const std::array<double, 4>& retardances);
  std::array<double, 4> baseline(int site) const;
  // Compose a canonical analysis setting onto the stored baseline: WP0/WP1
  // stay at the baseline, WP2 gets a basis-dependent offset, WP3 is set
  // absolutely. With a baseline that undoes the fiber, the transmitted state
  // is the requested basis state.
  void set_basis(int site, char basis);

  // TTU controls.
  void lock_clock(int site, bool locked);
  bool clock_locked(int site) const;
  uint64_t acquire(int site, double duration_s);
  // Idempotent; throws if the window has not elapsed yet or the handle has
  // been evicted (only the two most recent acquisitions per site are kept).
  qnet::tags::StreamSet fetch(int site, uint64_t handle) const;

  const Scenario& scenario() const { return scn_; }
  // Current fiber polarization transform of one arm (random walk plus any
  // scripted events up to the present virtual time). Exposed for tests.
  qnet::pol::Mat2 link_unitary(int site) const;
  // Appends a scripted polarization kick taking effect at the current
  // virtual time, as if the fiber had been disturbed mid-run.
  void inject_drift_event(int site, double angle_rad, uint64_t axis_seed);

 private:
  struct ClockSnapshot {
    int64_t offset_ps = 0;
    double drift_ppm = 0.0;
    double jitter_sigma_ps = 0.0;
    bool locked = false;
    int64_t frozen_drift_ps = 0;  // phase accumulated before locking
  };
  struct Acquisition {
    int site = 0;
    int64_t t0_ps = 0;
    int64_t dur_ps = 0;
    qnet::tags::StreamSet streams;
  };
  struct JointRealization {
    int64_t t0_ps = 0;
    int64_t dur_ps = 0;
    std::array<std::vector<int64_t>, 2> arrivals;  // true times, photons only
  };

  const SiteModel& site_model(int site) const;
  ClockSnapshot clock_snapshot(int site) const;
  qnet::pol::Mat2 link_unitary_unlocked(int site, double at_s) const;
  std::vector<int64_t> photon_arrivals(int site, int64_t t0, int64_t dur) const;
  const JointRealization& joint_window(int64_t t0, int64_t dur);
  qnet::tags::StreamSet build_streams(int site, int64_t t0, int64_t dur,
                                      std::vector<int64_t> photons) const;

  mutable std::mutex mu_;
  Scenario scn_;
  int64_t vtime_ps_ = 0;
  std::array<std::array<double, 4>, 2> plates_{};
  std::array<std::array<double, 4>, 2> baseline_{};
  std::array<bool, 2> locked_{};
  std::array<int64_t, 2> lock_time_ps_{};
  uint64_t next_handle_ = 1;
  std::map<uint64_t, Acquisition> acqs_;
  std::map<int64_t, JointRealization> joint_cache_;
};

// One synchronized two-site acquisition of `duration_s` on a fresh engine,
// starting at virtual time zero.
std::pair<qnet::tags::StreamSet, qnet::tags::StreamSet> simulate_acquisition(
    const Scenario& scn, double duration_s, uint64_t seed);

}  // namespace qnet::sim

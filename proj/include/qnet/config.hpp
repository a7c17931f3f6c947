#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qnet/agents.hpp"
#include "qnet/control.hpp"
#include "qnet/sim_model.hpp"

// Operator-facing run configuration: strict JSON schema with unknown-key
// rejection, scenario materialization from a named profile plus overrides,
// and a stable digest that every output artifact embeds next to the seed.

namespace qnet::config {

using nlohmann::json;

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DriftEventSpec {
  double time_s = 0.0;
  int site = 0;
  double angle_rad = 0.0;
  uint64_t axis_seed = 0;
};

// Scenario knobs layered on top of the named profile. Absent fields keep the
// profile value.
struct Overrides {
  std::optional<double> attenuation_db;
  std::optional<double> intrinsic_visibility;
  std::optional<double> dephasing;
  std::optional<double> werner_p;  // replace the emitted state outright
  std::optional<int64_t> clock_offset_b_ps;
  std::optional<double> clock_jitter_ps;  // applied to both site clocks
  std::optional<double> dark_rate_cps;    // applied to both detectors
  std::optional<double> drift_rate;       // applied to both fibers
  std::vector<DriftEventSpec> drift_events;
};

struct SyncParams {
  double acquire_s = 5.0;
  int lock_attempts = 3;
};

struct DarkParams {
  double min_cps = 1000.0;
  double max_cps = 100000.0;
  double dwell_s = 1.0;
};

struct CalibrationParams {
  double grid_start_db = 0.0;
  double grid_stop_db = 15.5;
  double grid_step_db = 0.5;
  double target_fraction = 0.85;
  double dwell_s = 2.0;
};

struct TpiCliParams {
  std::string bases = "HVRL";
  int points = 24;
  double dwell_s = 0.5;
};

struct QstCliParams {
  double dwell_s = 1.0;
};

struct ServiceCliParams {
  double run_time_s = 43200.0;
  double delta_t_s = 3600.0;
  std::string threshold_mode = "per_basis";
  double visibility_threshold = 0.0;  // <= 0 means auto
  std::string bases = "HVRL";
  int fringe_points = 24;
  double tpi_dwell_s = 0.15;
  double calibration_dwell_s = 1.0;
  double calibration_fraction = 0.85;
  // Scripted mid-run kick, applied when the given iteration starts. Needs
  // self-hosted agents; there is no way to reach into remote hardware.
  std::optional<int> drift_at_iteration;
  double drift_angle_rad = 0.0;
  uint64_t drift_axis_seed = 0;
};

struct RunConfig {
  std::string profile = "default";
  uint64_t seed = 1;
  std::string out_dir = "out";
  double time_compression = 1.0;
  bool self_hosted = true;
  agents::AgentEndpoints endpoints;  // port 0 = ephemeral when self-hosting
  rpc::RetryPolicy rpc;
  Overrides overrides;
  SyncParams sync;
  DarkParams dark;
  CalibrationParams calibration;
  control::CompensationParams compensation;
  TpiCliParams tpi;
  QstCliParams qst;
  ServiceCliParams service;

  std::string digest;  // hex digest of canonical(), set by finalize()

  // Full config with defaults filled in, keys sorted; digest input.
  json canonical() const;
  // Named profile with overrides and the run seed applied.
  sim::Scenario scenario() const;
  std::vector<double> attenuation_grid() const;

  void finalize();  // recompute the digest after any mutation
};

// Strict parse: unknown keys are rejected naming the dotted path, wrong
// types are rejected naming the key, endpoint collisions are rejected.
RunConfig parse_config(const json& j);
RunConfig load_config(const std::string& path);

// QNET_EPS / QNET_PA_A / QNET_PA_B / QNET_TTU_A / QNET_TTU_B ("host:port")
// override the configured endpoints; setting any of them switches the run to
// remote agents.
void apply_endpoint_env(RunConfig& cfg);

}  // namespace qnet::config

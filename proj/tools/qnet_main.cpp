// qnet: single binary covering both roles of the link. It either hosts the
// simulated instrument agents in-process and orchestrates them (default), or
// orchestrates remote agents reachable over TCP, or only serves agents for
// another orchestrator (serve-agents). All measurement results land as JSON
// artifacts in the output directory, each stamped with the config digest and
// seed so runs can be matched to their configuration later.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "qnet/agents.hpp"
#include "qnet/config.hpp"
#include "qnet/control.hpp"
#include "qnet/rpc.hpp"
#include "qnet/services.hpp"
#include "qnet/sim_engine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qnet;

namespace {

// Exit codes, also documented in the README.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;      // routine failed for a non-classified reason
constexpr int kExitConfig = 2;       // bad config file, flags, or usage
constexpr int kExitDarkAbort = 3;    // dark-count gate violated / service aborted
constexpr int kExitCalibration = 4;  // calibration produced no usable table
constexpr int kExitTransport = 5;    // agent unreachable, refused, or sync lost

struct Runtime {
  config::RunConfig cfg;
  std::shared_ptr<sim::SimEngine> engine;  // null when talking to remote agents
  std::unique_ptr<agents::AgentHost> host;
  rpc::ProvenanceLog log;
  std::unique_ptr<control::Session> session;
  std::vector<std::string> reports;  // artifact filenames written so far

  void write_artifact(const std::string& name, json j) {
    j["config_digest"] = cfg.digest;
    j["seed"] = cfg.seed;
    std::ofstream out(fs::path(cfg.out_dir) / name);
    out << j.dump(2) << "\n";
    reports.push_back(name);
  }
};

void start_runtime(Runtime& rt) {
  fs::create_directories(rt.cfg.out_dir);
  agents::AgentEndpoints ep = rt.cfg.endpoints;
  if (rt.cfg.self_hosted) {
    rt.engine = std::make_shared<sim::SimEngine>(rt.cfg.scenario());
    rt.host = std::make_unique<agents::AgentHost>(rt.engine);
    ep = rt.host->start(rt.cfg.endpoints);
    auto engine = rt.engine;
    rt.log.set_virtual_time_source([engine] { return engine->vtime_s(); });
  }
  rt.session = std::make_unique<control::Session>(ep, &rt.log, rt.cfg.rpc);
}

json provenance_summary(const Runtime& rt) {
  return {{"file", "provenance.jsonl"},
          {"calls", rt.log.size()},
          {"errors", rt.log.count_outcome("error")},
          {"timeouts", rt.log.count_outcome("timeout")}};
}

void write_provenance(const Runtime& rt) {
  std::ofstream out(fs::path(rt.cfg.out_dir) / "provenance.jsonl");
  for (const rpc::ProvenanceRecord& r : rt.log.snapshot()) {
    json line = {{"wall_time_s", r.wall_time_s},
                 {"virtual_time_s", r.virtual_time_s},
                 {"agent", r.agent},
                 {"method", r.method},
                 {"params_digest", r.params_digest},
                 {"outcome", r.outcome},
                 {"attempt", r.attempt}};
    out << line.dump() << "\n";
  }
}

void write_run_record(Runtime& rt, const std::string& command, int exit_code) {
  write_provenance(rt);
  json run = {{"command", command},
              {"exit_code", exit_code},
              {"config", rt.cfg.canonical()},
              {"config_digest", rt.cfg.digest},
              {"seed", rt.cfg.seed},
              {"reports", rt.reports},
              {"provenance", provenance_summary(rt)}};
  std::ofstream out(fs::path(rt.cfg.out_dir) / "run.json");
  out << run.dump(2) << "\n";
}

control::SyncReport do_sync(Runtime& rt) {
  control::SyncReport r = control::synchronize_sites(
      *rt.session, rt.cfg.sync.acquire_s, rt.cfg.sync.lock_attempts);
  rt.write_artifact("sync.json", services::sync_to_json(r));
  return r;
}

control::CalibrationScan do_calibration(Runtime& rt) {
  const int64_t window =
      static_cast<int64_t>(rt.cfg.scenario().coincidence_window_ps);
  control::CalibrationScan cal = control::calibrate_eps(
      *rt.session, window, rt.cfg.attenuation_grid(),
      rt.cfg.calibration.target_fraction, rt.cfg.calibration.dwell_s);
  rt.write_artifact("calibration.json", services::calibration_to_json(cal));
  return cal;
}

int cmd_sync(Runtime& rt) {
  do_sync(rt);
  return kExitOk;
}

int cmd_darkcheck(Runtime& rt) {
  control::DarkReport r = control::check_dark_counts(
      *rt.session, {rt.cfg.dark.min_cps, rt.cfg.dark.max_cps},
      rt.cfg.dark.dwell_s);
  rt.write_artifact("dark.json", services::dark_to_json(r));
  if (!r.pass) {
    std::cerr << "dark-count gate violated: " << r.offender << " at "
              << r.offending_cps << " cps outside [" << rt.cfg.dark.min_cps
              << ", " << rt.cfg.dark.max_cps << "]\n";
    return kExitDarkAbort;
  }
  return kExitOk;
}

int cmd_calibrate(Runtime& rt) {
  do_sync(rt);
  do_calibration(rt);
  return kExitOk;
}

int cmd_compensate(Runtime& rt) {
  control::CompensationReport r =
      control::compensate_polarization_drift(*rt.session, rt.cfg.compensation);
  rt.write_artifact("compensation.json", services::compensation_to_json(r));
  return kExitOk;
}

int cmd_tpi(Runtime& rt) {
  do_sync(rt);
  control::CalibrationScan cal = do_calibration(rt);
  services::TpiParams p;
  p.bases = rt.cfg.tpi.bases;
  p.points = rt.cfg.tpi.points;
  p.dwell_s = rt.cfg.tpi.dwell_s;
  p.window_ps = static_cast<int64_t>(rt.cfg.scenario().coincidence_window_ps);
  p.peak_delay_ps = cal.peak_delay_ps;
  services::TpiRun run = services::run_tpi(*rt.session, p);
  if (!run.complete) services::resume_tpi(*rt.session, p, run);
  auto fits = services::fit_tpi(run);

  json fringes = json::array();
  for (const services::FringeDataset& d : run.fringes)
    fringes.push_back(services::fringe_to_json(d));
  json jfits = json::object();
  for (const auto& [basis, fit] : fits)
    jfits[std::string(1, basis)] = services::fit_to_json(fit);
  rt.write_artifact("tpi.json", {{"bases", p.bases},
                                 {"points", p.points},
                                 {"dwell_s", p.dwell_s},
                                 {"window_ps", p.window_ps},
                                 {"peak_delay_ps", p.peak_delay_ps},
                                 {"complete", run.complete},
                                 {"error", run.error},
                                 {"fringes", fringes},
                                 {"fits", jfits}});
  services::write_fringe_csv((fs::path(rt.cfg.out_dir) / "fringes.csv").string(),
                             run.fringes);
  rt.reports.push_back("fringes.csv");
  if (!run.complete) {
    std::cerr << "interference scan incomplete: " << run.error << "\n";
    return kExitTransport;
  }
  return kExitOk;
}

int cmd_qst(Runtime& rt) {
  do_sync(rt);
  control::CalibrationScan cal = do_calibration(rt);
  services::QstParams p;
  p.dwell_s = rt.cfg.qst.dwell_s;
  p.window_ps = static_cast<int64_t>(rt.cfg.scenario().coincidence_window_ps);
  p.peak_delay_ps = cal.peak_delay_ps;
  services::Tomography t = services::run_qst(*rt.session, p);
  rt.write_artifact("qst.json", services::tomography_to_json(t));
  rt.write_artifact("density_matrix.json",
                    {{"rho", services::rho_to_json(t.rho)},
                     {"fidelity_phi_plus", t.fidelity_phi_plus},
                     {"concurrence", t.concurrence}});
  return kExitOk;
}

int cmd_service(Runtime& rt) {
  services::ServiceConfig svc;
  svc.run_time_s = rt.cfg.service.run_time_s;
  svc.delta_t_s = rt.cfg.service.delta_t_s;
  svc.time_compression = rt.cfg.time_compression;
  svc.threshold_mode = rt.cfg.service.threshold_mode;
  svc.visibility_threshold = rt.cfg.service.visibility_threshold;
  svc.dark_bounds = {rt.cfg.dark.min_cps, rt.cfg.dark.max_cps};
  svc.bases = rt.cfg.service.bases;
  svc.fringe_points = rt.cfg.service.fringe_points;
  svc.tpi_dwell_s = rt.cfg.service.tpi_dwell_s;
  svc.calibration_dwell_s = rt.cfg.service.calibration_dwell_s;
  svc.calibration_fraction = rt.cfg.service.calibration_fraction;
  svc.calibration_grid = rt.cfg.attenuation_grid();
  svc.compensation = rt.cfg.compensation;
  svc.window_ps = static_cast<int64_t>(rt.cfg.scenario().coincidence_window_ps);
  if (rt.cfg.service.drift_at_iteration) {
    if (!rt.engine)
      throw config::ConfigError(
          "scripted service drift requires self-hosted agents; there is no "
          "way to reach into remote hardware");
    auto engine = rt.engine;
    const int at = *rt.cfg.service.drift_at_iteration;
    const double angle = rt.cfg.service.drift_angle_rad;
    const uint64_t axis = rt.cfg.service.drift_axis_seed;
    svc.on_iteration_start = [engine, at, angle, axis](int it) {
      if (it == at) engine->inject_drift_event(0, angle, axis);
    };
  }
  services::ServiceRun run = services::entanglement_service(*rt.session, svc);
  rt.write_artifact("service.json", services::service_run_to_json(run));
  if (run.aborted) {
    std::cerr << "service aborted: " << run.abort_reason << "\n";
    return kExitDarkAbort;
  }
  return kExitOk;
}

int cmd_serve_agents(config::RunConfig& cfg) {
  auto engine = std::make_shared<sim::SimEngine>(cfg.scenario());
  agents::AgentHost host(engine);
  agents::AgentEndpoints ep = host.start(cfg.endpoints);
  json bound = {{"eps", {{"host", ep.eps.host}, {"port", ep.eps.port}}},
                {"pa_a", {{"host", ep.pa_a.host}, {"port", ep.pa_a.port}}},
                {"pa_b", {{"host", ep.pa_b.host}, {"port", ep.pa_b.port}}},
                {"ttu_a", {{"host", ep.ttu_a.host}, {"port", ep.ttu_a.port}}},
                {"ttu_b", {{"host", ep.ttu_b.host}, {"port", ep.ttu_b.port}}}};
  std::cout << bound.dump() << std::endl;
  // Serve until the controlling process closes stdin.
  std::string line;
  while (std::getline(std::cin, line)) {
  }
  host.stop();
  return kExitOk;
}

int classify_error(const std::exception& e) {
  if (dynamic_cast<const config::ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const rpc::TransportError*>(&e)) return kExitTransport;
  if (dynamic_cast<const rpc::AgentError*>(&e)) return kExitTransport;
  if (dynamic_cast<const rpc::FrameError*>(&e)) return kExitTransport;
  if (const auto* c = dynamic_cast<const control::ControlError*>(&e)) {
    switch (c->kind) {
      case control::ControlError::Kind::dark_abort:
        return kExitDarkAbort;
      case control::ControlError::Kind::calibration:
        return kExitCalibration;
      case control::ControlError::Kind::lock:
      case control::ControlError::Kind::sync:
        return kExitTransport;
      case control::ControlError::Kind::scan:
        return kExitFailure;
    }
  }
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"software-defined entanglement distribution orchestrator"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  long long seed_flag = 0;
  std::string out_flag;
  double compress_flag = 1.0;
  auto* opt_config =
      app.add_option("--config", config_path, "configuration file (JSON)");
  auto* opt_seed = app.add_option("--seed", seed_flag, "override random seed");
  auto* opt_out = app.add_option("--out", out_flag, "override output directory");
  auto* opt_compress = app.add_option("--compress", compress_flag,
                                      "override time compression factor");

  CLI::App* sub_sync = app.add_subcommand(
      "sync", "lock both time taggers to the reference and measure the offset");
  CLI::App* sub_dark = app.add_subcommand(
      "darkcheck", "verify detector background rates against the bounds");
  CLI::App* sub_cal = app.add_subcommand(
      "calibrate-eps", "sweep pump attenuation and park at the operating point");
  CLI::App* sub_comp = app.add_subcommand(
      "compensate", "null polarization drift on both analyzers");
  CLI::App* sub_tpi = app.add_subcommand(
      "tpi", "record two-photon interference fringes in the configured bases");
  CLI::App* sub_qst = app.add_subcommand(
      "qst", "full 36-setting polarization state tomography");
  CLI::App* sub_service = app.add_subcommand(
      "service", "continuous entanglement distribution with drift monitoring");
  CLI::App* sub_serve = app.add_subcommand(
      "serve-agents", "host the simulated instrument agents and wait");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version land here with exit code 0
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Runtime rt;
  std::string command = "?";
  try {
    rt.cfg = opt_config->count() ? config::load_config(config_path)
                                 : config::RunConfig{};
    config::apply_endpoint_env(rt.cfg);
    if (opt_seed->count()) rt.cfg.seed = static_cast<uint64_t>(seed_flag);
    if (opt_out->count()) rt.cfg.out_dir = out_flag;
    if (opt_compress->count()) {
      if (compress_flag < 1.0)
        throw config::ConfigError("--compress must be >= 1");
      rt.cfg.time_compression = compress_flag;
    }
    rt.cfg.finalize();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  if (sub_serve->parsed()) return cmd_serve_agents(rt.cfg);

  int code = kExitOk;
  try {
    start_runtime(rt);
    if (sub_sync->parsed()) {
      command = "sync";
      code = cmd_sync(rt);
    } else if (sub_dark->parsed()) {
      command = "darkcheck";
      code = cmd_darkcheck(rt);
    } else if (sub_cal->parsed()) {
      command = "calibrate-eps";
      code = cmd_calibrate(rt);
    } else if (sub_comp->parsed()) {
      command = "compensate";
      code = cmd_compensate(rt);
    } else if (sub_tpi->parsed()) {
      command = "tpi";
      code = cmd_tpi(rt);
    } else if (sub_qst->parsed()) {
      command = "qst";
      code = cmd_qst(rt);
    } else if (sub_service->parsed()) {
      command = "service";
      code = cmd_service(rt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = classify_error(e);
  }
  try {
    write_run_record(rt, command, code);
  } catch (const std::exception& e) {
    std::cerr << "error writing run record: " << e.what() << "\n";
    if (code == kExitOk) code = kExitFailure;
  }
  return code;
}

#include "qnet/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace qnet::config {

namespace {

std::string join_path(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError("config key '" + path + "' must be an object");
  for (const auto& item : obj.items()) {
    const std::string& key = item.key();
    const bool known =
        std::any_of(allowed.begin(), allowed.end(),
                    [&](const char* a) { return key == a; });
    if (!known)
      throw ConfigError("unknown config key '" +
                        (path.empty() ? key : path + "." + key) + "'");
  }
}

template <typename T>
void read_field(const json& obj, const std::string& path, const char* key,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + join_path(path, key) +
                      "' has the wrong type");
  }
}

template <typename T>
void read_optional(const json& obj, const std::string& path, const char* key,
                   std::optional<T>& out) {
  if (!obj.contains(key)) return;
  T v{};
  read_field(obj, path, key, v);
  out = v;
}

void read_endpoint(const json& obj, const std::string& path, const char* key,
                   agents::Endpoint& ep) {
  if (!obj.contains(key)) return;
  const std::string sub = join_path(path, key);
  const json& e = obj.at(key);
  check_keys(e, sub, {"host", "port"});
  read_field(e, sub, "host", ep.host);
  int port = ep.port;
  read_field(e, sub, "port", port);
  if (port < 0 || port > 65535)
    throw ConfigError("config key '" + sub + ".port' out of range");
  ep.port = static_cast<uint16_t>(port);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void check_bases(const std::string& bases, const std::string& key) {
  require(!bases.empty(), "config key '" + key + "' must not be empty");
  for (char b : bases)
    require(std::string("HVDARL").find(b) != std::string::npos,
            "config key '" + key + "' contains unknown basis '" +
                std::string(1, b) + "'");
}

json endpoint_json(const agents::Endpoint& e) {
  return {{"host", e.host}, {"port", e.port}};
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  check_keys(j, "",
             {"profile", "seed", "out_dir", "time_compression", "self_hosted",
              "endpoints", "rpc", "overrides", "sync", "dark", "calibration",
              "compensation", "tpi", "qst", "service"});

  read_field(j, "", "profile", cfg.profile);
  {
    const auto names = sim::profile_names();
    require(std::find(names.begin(), names.end(), cfg.profile) != names.end(),
            "config key 'profile' names no known profile: '" + cfg.profile + "'");
  }
  read_field(j, "", "seed", cfg.seed);
  read_field(j, "", "out_dir", cfg.out_dir);
  read_field(j, "", "time_compression", cfg.time_compression);
  require(cfg.time_compression >= 1.0,
          "config key 'time_compression' must be >= 1");
  read_field(j, "", "self_hosted", cfg.self_hosted);

  if (j.contains("endpoints")) {
    const json& e = j.at("endpoints");
    check_keys(e, "endpoints", {"eps", "pa_a", "pa_b", "ttu_a", "ttu_b"});
    read_endpoint(e, "endpoints", "eps", cfg.endpoints.eps);
    read_endpoint(e, "endpoints", "pa_a", cfg.endpoints.pa_a);
    read_endpoint(e, "endpoints", "pa_b", cfg.endpoints.pa_b);
    read_endpoint(e, "endpoints", "ttu_a", cfg.endpoints.ttu_a);
    read_endpoint(e, "endpoints", "ttu_b", cfg.endpoints.ttu_b);
  }
  {
    const std::pair<const char*, const agents::Endpoint*> eps[5] = {
        {"eps", &cfg.endpoints.eps},
        {"pa_a", &cfg.endpoints.pa_a},
        {"pa_b", &cfg.endpoints.pa_b},
        {"ttu_a", &cfg.endpoints.ttu_a},
        {"ttu_b", &cfg.endpoints.ttu_b}};
    for (int a = 0; a < 5; ++a) {
      for (int b = a + 1; b < 5; ++b) {
        // ephemeral ports cannot collide, the OS hands out distinct ones
        if (eps[a].second->port != 0 &&
            eps[a].second->port == eps[b].second->port &&
            eps[a].second->host == eps[b].second->host) {
          throw ConfigError(std::string("agents '") + eps[a].first + "' and '" +
                            eps[b].first + "' share endpoint " +
                            eps[a].second->host + ":" +
                            std::to_string(eps[a].second->port));
        }
      }
    }
  }

  if (j.contains("rpc")) {
    const json& r = j.at("rpc");
    check_keys(r, "rpc", {"max_attempts", "timeout_ms", "backoff_ms"});
    read_field(r, "rpc", "max_attempts", cfg.rpc.max_attempts);
    read_field(r, "rpc", "timeout_ms", cfg.rpc.timeout_ms);
    read_field(r, "rpc", "backoff_ms", cfg.rpc.backoff_ms);
    require(cfg.rpc.max_attempts >= 1, "config key 'rpc.max_attempts' must be >= 1");
    require(cfg.rpc.timeout_ms > 0, "config key 'rpc.timeout_ms' must be positive");
    require(cfg.rpc.backoff_ms >= 0, "config key 'rpc.backoff_ms' must be >= 0");
  }

  if (j.contains("overrides")) {
    const json& o = j.at("overrides");
    check_keys(o, "overrides",
               {"attenuation_db", "intrinsic_visibility", "dephasing",
                "werner_p", "clock_offset_b_ps", "clock_jitter_ps",
                "dark_rate_cps", "drift_rate", "drift_events"});
    read_optional(o, "overrides", "attenuation_db", cfg.overrides.attenuation_db);
    read_optional(o, "overrides", "intrinsic_visibility",
                  cfg.overrides.intrinsic_visibility);
    read_optional(o, "overrides", "dephasing", cfg.overrides.dephasing);
    read_optional(o, "overrides", "werner_p", cfg.overrides.werner_p);
    read_optional(o, "overrides", "clock_offset_b_ps",
                  cfg.overrides.clock_offset_b_ps);
    read_optional(o, "overrides", "clock_jitter_ps", cfg.overrides.clock_jitter_ps);
    read_optional(o, "overrides", "dark_rate_cps", cfg.overrides.dark_rate_cps);
    read_optional(o, "overrides", "drift_rate", cfg.overrides.drift_rate);
    if (cfg.overrides.attenuation_db)
      require(*cfg.overrides.attenuation_db >= 0.0 &&
                  *cfg.overrides.attenuation_db <= 60.0,
              "config key 'overrides.attenuation_db' outside [0, 60]");
    for (const char* k : {"intrinsic_visibility", "dephasing", "werner_p"}) {
      const std::optional<double>& v =
          std::string(k) == "intrinsic_visibility" ? cfg.overrides.intrinsic_visibility
          : std::string(k) == "dephasing"          ? cfg.overrides.dephasing
                                                   : cfg.overrides.werner_p;
      if (v)
        require(*v >= 0.0 && *v <= 1.0,
                std::string("config key 'overrides.") + k + "' outside [0, 1]");
    }
    if (cfg.overrides.clock_jitter_ps)
      require(*cfg.overrides.clock_jitter_ps >= 0.0,
              "config key 'overrides.clock_jitter_ps' must be >= 0");
    if (cfg.overrides.dark_rate_cps)
      require(*cfg.overrides.dark_rate_cps >= 0.0,
              "config key 'overrides.dark_rate_cps' must be >= 0");
    if (cfg.overrides.drift_rate)
      require(*cfg.overrides.drift_rate >= 0.0,
              "config key 'overrides.drift_rate' must be >= 0");
    if (o.contains("drift_events")) {
      const json& evs = o.at("drift_events");
      require(evs.is_array(), "config key 'overrides.drift_events' must be an array");
      for (size_t i = 0; i < evs.size(); ++i) {
        const std::string sub = "overrides.drift_events[" + std::to_string(i) + "]";
        check_keys(evs[i], sub, {"time_s", "site", "angle_rad", "axis_seed"});
        DriftEventSpec ev;
        read_field(evs[i], sub, "time_s", ev.time_s);
        read_field(evs[i], sub, "site", ev.site);
        read_field(evs[i], sub, "angle_rad", ev.angle_rad);
        read_field(evs[i], sub, "axis_seed", ev.axis_seed);
        require(ev.site == 0 || ev.site == 1,
                "config key '" + sub + ".site' must be 0 or 1");
        require(ev.time_s >= 0.0, "config key '" + sub + ".time_s' must be >= 0");
        cfg.overrides.drift_events.push_back(ev);
      }
    }
  }

  if (j.contains("sync")) {
    const json& s = j.at("sync");
    check_keys(s, "sync", {"acquire_s", "lock_attempts"});
    read_field(s, "sync", "acquire_s", cfg.sync.acquire_s);
    read_field(s, "sync", "lock_attempts", cfg.sync.lock_attempts);
    require(cfg.sync.acquire_s > 0.0, "config key 'sync.acquire_s' must be positive");
    require(cfg.sync.lock_attempts >= 1,
            "config key 'sync.lock_attempts' must be >= 1");
  }

  if (j.contains("dark")) {
    const json& d = j.at("dark");
    check_keys(d, "dark", {"min_cps", "max_cps", "dwell_s"});
    read_field(d, "dark", "min_cps", cfg.dark.min_cps);
    read_field(d, "dark", "max_cps", cfg.dark.max_cps);
    read_field(d, "dark", "dwell_s", cfg.dark.dwell_s);
    require(cfg.dark.min_cps >= 0.0, "config key 'dark.min_cps' must be >= 0");
    require(cfg.dark.max_cps >= cfg.dark.min_cps,
            "config key 'dark.max_cps' must be >= dark.min_cps");
    require(cfg.dark.dwell_s > 0.0, "config key 'dark.dwell_s' must be positive");
  }

  if (j.contains("calibration")) {
    const json& c = j.at("calibration");
    check_keys(c, "calibration",
               {"grid_start_db", "grid_stop_db", "grid_step_db",
                "target_fraction", "dwell_s"});
    read_field(c, "calibration", "grid_start_db", cfg.calibration.grid_start_db);
    read_field(c, "calibration", "grid_stop_db", cfg.calibration.grid_stop_db);
    read_field(c, "calibration", "grid_step_db", cfg.calibration.grid_step_db);
    read_field(c, "calibration", "target_fraction", cfg.calibration.target_fraction);
    read_field(c, "calibration", "dwell_s", cfg.calibration.dwell_s);
    require(cfg.calibration.grid_step_db > 0.0,
            "config key 'calibration.grid_step_db' must be positive");
    require(cfg.calibration.grid_stop_db >= cfg.calibration.grid_start_db,
            "config key 'calibration.grid_stop_db' must be >= grid_start_db");
    require(cfg.calibration.target_fraction > 0.0 &&
                cfg.calibration.target_fraction <= 1.0,
            "config key 'calibration.target_fraction' outside (0, 1]");
    require(cfg.calibration.dwell_s > 0.0,
            "config key 'calibration.dwell_s' must be positive");
  }

  if (j.contains("compensation")) {
    const json& c = j.at("compensation");
    check_keys(c, "compensation",
               {"step_rad", "half_window_rad", "dwell_s", "epsilon_sigma",
                "max_rounds"});
    read_field(c, "compensation", "step_rad", cfg.compensation.step_rad);
    read_field(c, "compensation", "half_window_rad",
               cfg.compensation.half_window_rad);
    read_field(c, "compensation", "dwell_s", cfg.compensation.dwell_s);
    read_field(c, "compensation", "epsilon_sigma", cfg.compensation.epsilon_sigma);
    read_field(c, "compensation", "max_rounds", cfg.compensation.max_rounds);
    require(cfg.compensation.step_rad > 0.0,
            "config key 'compensation.step_rad' must be positive");
    require(cfg.compensation.half_window_rad >= cfg.compensation.step_rad,
            "config key 'compensation.half_window_rad' must be >= step_rad");
    require(cfg.compensation.dwell_s > 0.0,
            "config key 'compensation.dwell_s' must be positive");
    require(cfg.compensation.max_rounds >= 1,
            "config key 'compensation.max_rounds' must be >= 1");
  }

  if (j.contains("tpi")) {
    const json& t = j.at("tpi");
    check_keys(t, "tpi", {"bases", "points", "dwell_s"});
    read_field(t, "tpi", "bases", cfg.tpi.bases);
    read_field(t, "tpi", "points", cfg.tpi.points);
    read_field(t, "tpi", "dwell_s", cfg.tpi.dwell_s);
    check_bases(cfg.tpi.bases, "tpi.bases");
    require(cfg.tpi.points >= 8, "config key 'tpi.points' must be >= 8");
    require(cfg.tpi.dwell_s > 0.0, "config key 'tpi.dwell_s' must be positive");
  }

  if (j.contains("qst")) {
    const json& q = j.at("qst");
    check_keys(q, "qst", {"dwell_s"});
    read_field(q, "qst", "dwell_s", cfg.qst.dwell_s);
    require(cfg.qst.dwell_s > 0.0, "config key 'qst.dwell_s' must be positive");
  }

  if (j.contains("service")) {
    const json& s = j.at("service");
    check_keys(s, "service",
               {"run_time_s", "delta_t_s", "threshold_mode",
                "visibility_threshold", "bases", "fringe_points", "tpi_dwell_s",
                "calibration_dwell_s", "calibration_fraction",
                "drift_at_iteration", "drift_angle_rad", "drift_axis_seed"});
    read_field(s, "service", "run_time_s", cfg.service.run_time_s);
    read_field(s, "service", "delta_t_s", cfg.service.delta_t_s);
    read_field(s, "service", "threshold_mode", cfg.service.threshold_mode);
    read_field(s, "service", "visibility_threshold",
               cfg.service.visibility_threshold);
    read_field(s, "service", "bases", cfg.service.bases);
    read_field(s, "service", "fringe_points", cfg.service.fringe_points);
    read_field(s, "service", "tpi_dwell_s", cfg.service.tpi_dwell_s);
    read_field(s, "service", "calibration_dwell_s",
               cfg.service.calibration_dwell_s);
    read_field(s, "service", "calibration_fraction",
               cfg.service.calibration_fraction);
    read_optional(s, "service", "drift_at_iteration",
                  cfg.service.drift_at_iteration);
    read_field(s, "service", "drift_angle_rad", cfg.service.drift_angle_rad);
    read_field(s, "service", "drift_axis_seed", cfg.service.drift_axis_seed);
    require(cfg.service.run_time_s > 0.0,
            "config key 'service.run_time_s' must be positive");
    require(cfg.service.delta_t_s > 0.0,
            "config key 'service.delta_t_s' must be positive");
    require(cfg.service.threshold_mode == "per_basis" ||
                cfg.service.threshold_mode == "average",
            "config key 'service.threshold_mode' must be per_basis or average");
    check_bases(cfg.service.bases, "service.bases");
    require(cfg.service.fringe_points >= 8,
            "config key 'service.fringe_points' must be >= 8");
    require(cfg.service.tpi_dwell_s > 0.0,
            "config key 'service.tpi_dwell_s' must be positive");
    require(cfg.service.calibration_dwell_s > 0.0,
            "config key 'service.calibration_dwell_s' must be positive");
    require(cfg.service.calibration_fraction > 0.0 &&
                cfg.service.calibration_fraction <= 1.0,
            "config key 'service.calibration_fraction' outside (0, 1]");
    if (cfg.service.drift_at_iteration)
      require(*cfg.service.drift_at_iteration >= 0,
              "config key 'service.drift_at_iteration' must be >= 0");
  }

  cfg.finalize();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

// Everything that can influence the measured numbers. Deliberately excludes
// out_dir: the same physics run written to two directories must produce
// byte-identical artifacts, digest included.
json RunConfig::canonical() const {
  json j;
  j["profile"] = profile;
  j["seed"] = seed;
  j["time_compression"] = time_compression;
  j["self_hosted"] = self_hosted;
  j["endpoints"] = {{"eps", endpoint_json(endpoints.eps)},
                    {"pa_a", endpoint_json(endpoints.pa_a)},
                    {"pa_b", endpoint_json(endpoints.pa_b)},
                    {"ttu_a", endpoint_json(endpoints.ttu_a)},
                    {"ttu_b", endpoint_json(endpoints.ttu_b)}};
  j["rpc"] = {{"max_attempts", rpc.max_attempts},
              {"timeout_ms", rpc.timeout_ms},
              {"backoff_ms", rpc.backoff_ms}};
  json ov = json::object();
  if (overrides.attenuation_db) ov["attenuation_db"] = *overrides.attenuation_db;
  if (overrides.intrinsic_visibility)
    ov["intrinsic_visibility"] = *overrides.intrinsic_visibility;
  if (overrides.dephasing) ov["dephasing"] = *overrides.dephasing;
  if (overrides.werner_p) ov["werner_p"] = *overrides.werner_p;
  if (overrides.clock_offset_b_ps)
    ov["clock_offset_b_ps"] = *overrides.clock_offset_b_ps;
  if (overrides.clock_jitter_ps) ov["clock_jitter_ps"] = *overrides.clock_jitter_ps;
  if (overrides.dark_rate_cps) ov["dark_rate_cps"] = *overrides.dark_rate_cps;
  if (overrides.drift_rate) ov["drift_rate"] = *overrides.drift_rate;
  if (!overrides.drift_events.empty()) {
    json evs = json::array();
    for (const DriftEventSpec& ev : overrides.drift_events)
      evs.push_back({{"time_s", ev.time_s},
                     {"site", ev.site},
                     {"angle_rad", ev.angle_rad},
                     {"axis_seed", ev.axis_seed}});
    ov["drift_events"] = std::move(evs);
  }
  j["overrides"] = std::move(ov);
  j["sync"] = {{"acquire_s", sync.acquire_s}, {"lock_attempts", sync.lock_attempts}};
  j["dark"] = {{"min_cps", dark.min_cps},
               {"max_cps", dark.max_cps},
               {"dwell_s", dark.dwell_s}};
  j["calibration"] = {{"grid_start_db", calibration.grid_start_db},
                      {"grid_stop_db", calibration.grid_stop_db},
                      {"grid_step_db", calibration.grid_step_db},
                      {"target_fraction", calibration.target_fraction},
                      {"dwell_s", calibration.dwell_s}};
  j["compensation"] = {{"step_rad", compensation.step_rad},
                       {"half_window_rad", compensation.half_window_rad},
                       {"dwell_s", compensation.dwell_s},
                       {"epsilon_sigma", compensation.epsilon_sigma},
                       {"max_rounds", compensation.max_rounds}};
  j["tpi"] = {{"bases", tpi.bases}, {"points", tpi.points}, {"dwell_s", tpi.dwell_s}};
  j["qst"] = {{"dwell_s", qst.dwell_s}};
  json svc = {{"run_time_s", service.run_time_s},
              {"delta_t_s", service.delta_t_s},
              {"threshold_mode", service.threshold_mode},
              {"visibility_threshold", service.visibility_threshold},
              {"bases", service.bases},
              {"fringe_points", service.fringe_points},
              {"tpi_dwell_s", service.tpi_dwell_s},
              {"calibration_dwell_s", service.calibration_dwell_s},
              {"calibration_fraction", service.calibration_fraction}};
  if (service.drift_at_iteration) {
    svc["drift_at_iteration"] = *service.drift_at_iteration;
    svc["drift_angle_rad"] = service.drift_angle_rad;
    svc["drift_axis_seed"] = service.drift_axis_seed;
  }
  j["service"] = std::move(svc);
  return j;
}

void RunConfig::finalize() { digest = rpc::params_digest(canonical()); }

sim::Scenario RunConfig::scenario() const {
  sim::Scenario scn = sim::profile_scenario(profile);
  scn.seed = seed;
  if (overrides.attenuation_db) scn.eps.attenuation_db = *overrides.attenuation_db;
  if (overrides.intrinsic_visibility)
    scn.eps.intrinsic_visibility = *overrides.intrinsic_visibility;
  if (overrides.dephasing) scn.eps.dephasing = *overrides.dephasing;
  if (overrides.werner_p) scn.state_override = pol::werner_state(*overrides.werner_p);
  if (overrides.clock_offset_b_ps)
    scn.site_b.clock.offset_ps = *overrides.clock_offset_b_ps;
  if (overrides.clock_jitter_ps) {
    scn.site_a.clock.jitter_sigma_ps = *overrides.clock_jitter_ps;
    scn.site_b.clock.jitter_sigma_ps = *overrides.clock_jitter_ps;
  }
  if (overrides.dark_rate_cps) {
    scn.site_a.detector.dark_rate_cps = *overrides.dark_rate_cps;
    scn.site_b.detector.dark_rate_cps = *overrides.dark_rate_cps;
  }
  if (overrides.drift_rate) {
    scn.site_a.fiber.drift_rate = *overrides.drift_rate;
    scn.site_b.fiber.drift_rate = *overrides.drift_rate;
  }
  for (const DriftEventSpec& ev : overrides.drift_events)
    scn.drift_events.push_back({ev.time_s, ev.site, ev.angle_rad, ev.axis_seed});
  return scn;
}

std::vector<double> RunConfig::attenuation_grid() const {
  std::vector<double> g;
  for (double a = calibration.grid_start_db;
       a <= calibration.grid_stop_db + 1e-9; a += calibration.grid_step_db)
    g.push_back(a);
  return g;
}

void apply_endpoint_env(RunConfig& cfg) {
  const auto from_env = [](const char* name, agents::Endpoint& ep) {
    const char* v = std::getenv(name);
    if (!v || !*v) return false;
    const std::string s(v);
    const size_t colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= s.size())
      throw ConfigError(std::string("malformed endpoint in ") + name + ": '" +
                        s + "' (want host:port)");
    int port = 0;
    try {
      port = std::stoi(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError(std::string("malformed port in ") + name + ": '" + s + "'");
    }
    if (port <= 0 || port > 65535)
      throw ConfigError(std::string("port out of range in ") + name + ": '" + s + "'");
    ep.host = s.substr(0, colon);
    ep.port = static_cast<uint16_t>(port);
    return true;
  };

  bool any = false;
  any |= from_env("QNET_EPS", cfg.endpoints.eps);
  any |= from_env("QNET_PA_A", cfg.endpoints.pa_a);
  any |= from_env("QNET_PA_B", cfg.endpoints.pa_b);
  any |= from_env("QNET_TTU_A", cfg.endpoints.ttu_a);
  any |= from_env("QNET_TTU_B", cfg.endpoints.ttu_b);
  if (any) {
    cfg.self_hosted = false;  // pointing at live agents, do not spawn our own
    cfg.finalize();
  }
}

}  // namespace qnet::config

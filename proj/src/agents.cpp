#include "qnet/agents.hpp"

#include <stdexcept>

#include "qnet/timetags.hpp"

namespace qnet::agents {

using rpc::AgentError;
using rpc::json;

namespace {

double need_number(const json& params, const char* key) {
  if (!params.contains(key) || !params[key].is_number())
    throw AgentError(kErrInvalidParams,
                     std::string("missing numeric param '") + key + "'");
  return params[key].get<double>();
}

std::string need_string(const json& params, const char* key) {
  if (!params.contains(key) || !params[key].is_string())
    throw AgentError(kErrInvalidParams,
                     std::string("missing string param '") + key + "'");
  return params[key].get<std::string>();
}

char need_basis(const json& params, const char* key) {
  const std::string s = need_string(params, key);
  if (s.size() != 1) throw AgentError(kErrInvalidParams, "bad basis label");
  return s[0];
}

// Engine argument errors become invalid-params responses; anything else the
// engine throws is a device-level fault.
template <typename Fn>
json guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const AgentError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw AgentError(kErrInvalidParams, e.what());
  } catch (const std::exception& e) {
    throw AgentError(kErrDevice, e.what());
  }
}

json eps_dispatch(sim::SimEngine& eng, const std::string& method,
                  const json& params) {
  if (method == "eps.set_attenuation") {
    return guarded([&] {
      eng.set_attenuation(need_number(params, "db"));
      return json{{"attenuation_db", eng.attenuation()}};
    });
  }
  if (method == "eps.get_status") {
    return guarded([&] {
      const sim::EpsStatus st = eng.eps_status();
      return json{{"attenuation_db", st.attenuation_db},
                  {"mode", sim::to_string(st.mode)},
                  {"alignment_basis", std::string(1, st.alignment_basis)},
                  {"channel_pair", st.channel_pair},
                  {"pair_rate_hz", st.pair_rate_hz}};
    });
  }
  if (method == "eps.set_mode") {
    return guarded([&] {
      const sim::EpsMode mode =
          sim::eps_mode_from_string(need_string(params, "mode"));
      const char basis = params.contains("basis")
                             ? need_basis(params, "basis")
                             : eng.eps_status().alignment_basis;
      eng.set_mode(mode, basis);
      return json{{"mode", sim::to_string(mode)},
                  {"alignment_basis", std::string(1, basis)}};
    });
  }
  throw AgentError(kErrUnknownMethod, "unknown method: " + method);
}

json pa_dispatch(sim::SimEngine& eng, int site, const std::string& method,
                 const json& params) {
  if (method == "pa.set_waveplate") {
    return guarded([&] {
      const double idx = need_number(params, "index");
      const int plate = static_cast<int>(idx);
      if (plate != idx || plate < 0 || plate > 3)
        throw AgentError(kErrInvalidParams, "no such plate (valid: 0-3)");
      eng.set_waveplate(site, plate, need_number(params, "retardance"));
      return json{{"index", plate},
                  {"retardance", eng.waveplates(site)[plate]}};
    });
  }
  if (method == "pa.get_waveplates") {
    return guarded([&] {
      const auto w = eng.waveplates(site);
      return json{{"retardances", w}};
    });
  }
  if (method == "pa.set_basis") {
    return guarded([&] {
      eng.set_basis(site, need_basis(params, "basis"));
      return json{{"retardances", eng.waveplates(site)}};
    });
  }
  if (method == "pa.set_baseline") {
    return guarded([&] {
      if (!params.contains("retardances") ||
          !params["retardances"].is_array() ||
          params["retardances"].size() != 4)
        throw AgentError(kErrInvalidParams, "retardances must be [4] array");
      std::array<double, 4> r{};
      for (int i = 0; i < 4; ++i) {
        if (!params["retardances"][i].is_number())
          throw AgentError(kErrInvalidParams, "retardances must be numeric");
        r[i] = params["retardances"][i].get<double>();
      }
      eng.set_baseline(site, r);
      return json{{"retardances", eng.baseline(site)}};
    });
  }
  if (method == "pa.get_baseline") {
    return guarded([&] { return json{{"retardances", eng.baseline(site)}}; });
  }
  throw AgentError(kErrUnknownMethod, "unknown method: " + method);
}

json ttu_dispatch(sim::SimEngine& eng, int site, const std::string& method,
                  const json& params) {
  if (method == "ttu.set_reference_clock") {
    return guarded([&] {
      const std::string src = need_string(params, "source");
      if (src != "external" && src != "internal")
        throw AgentError(kErrInvalidParams,
                         "source must be external|internal");
      eng.lock_clock(site, src == "external");
      return json{{"locked", eng.clock_locked(site)}};
    });
  }
  if (method == "ttu.acquire") {
    return guarded([&] {
      const uint64_t h = eng.acquire(site, need_number(params, "duration_s"));
      return json{{"handle", h}};
    });
  }
  if (method == "ttu.fetch") {
    return guarded([&] {
      if (!params.contains("handle") || !params["handle"].is_number_unsigned())
        throw AgentError(kErrInvalidParams, "missing unsigned param 'handle'");
      const tags::StreamSet set =
          eng.fetch(site, params["handle"].get<uint64_t>());
      const std::vector<uint8_t> bytes = tags::serialize(set);
      return json{{"encoding", "qnettags+base64"},
                  {"data", rpc::base64_encode(bytes)},
                  {"site", site}};
    });
  }
  if (method == "ttu.advance") {
    return guarded([&] {
      eng.advance(need_number(params, "seconds"));
      return json{{"virtual_time_s", eng.vtime_s()}};
    });
  }
  if (method == "ttu.get_time") {
    return guarded([&] { return json{{"virtual_time_s", eng.vtime_s()}}; });
  }
  throw AgentError(kErrUnknownMethod, "unknown method: " + method);
}

}  // namespace

json dispatch_device(sim::SimEngine& engine, const std::string& kind, int site,
                     const std::string& method, const json& params) {
  if (method == "ping") return json{{"pong", true}, {"agent", kind}};
  if (kind == "eps") return eps_dispatch(engine, method, params);
  if (kind == "pa") return pa_dispatch(engine, site, method, params);
  if (kind == "ttu") return ttu_dispatch(engine, site, method, params);
  throw AgentError(kErrUnknownMethod, "unknown device kind: " + kind);
}

AgentHost::AgentHost(std::shared_ptr<sim::SimEngine> engine)
    : engine_(std::move(engine)) {
  if (!engine_) throw std::invalid_argument("AgentHost: null engine");
}

AgentHost::~AgentHost() { stop(); }

AgentEndpoints AgentHost::start(const AgentEndpoints& want) {
  struct Spec {
    const char* name;
    const char* kind;
    int site;
    const Endpoint* want;
    Endpoint* bound;
  };
  const Spec specs[] = {
      {"eps", "eps", 0, &want.eps, &bound_.eps},
      {"pa_a", "pa", 0, &want.pa_a, &bound_.pa_a},
      {"pa_b", "pa", 1, &want.pa_b, &bound_.pa_b},
      {"ttu_a", "ttu", 0, &want.ttu_a, &bound_.ttu_a},
      {"ttu_b", "ttu", 1, &want.ttu_b, &bound_.ttu_b},
  };
  for (const Spec& s : specs) {
    sim::SimEngine* eng = engine_.get();
    const std::string kind = s.kind;
    const int site = s.site;
    auto server = std::make_unique<rpc::AgentServer>(
        s.name, [eng, kind, site](const std::string& method,
                                  const json& params) {
          return dispatch_device(*eng, kind, site, method, params);
        });
    s.bound->host = s.want->host;
    s.bound->port = server->start(s.want->port);
    servers_[s.name] = std::move(server);
  }
  return bound_;
}

void AgentHost::stop() {
  for (auto& [name, server] : servers_) server->stop();
  servers_.clear();
}

rpc::AgentServer& AgentHost::server(const std::string& name) {
  auto it = servers_.find(name);
  if (it == servers_.end())
    throw std::invalid_argument("no such agent: " + name);
  return *it->second;
}

}  // namespace qnet::agents

#pragma once

// Device agents: the five simulated instruments (EPS, two polarization
// analyzers, two time taggers) each served behind its own AgentServer with a
// uniform method table. The orchestrator only ever talks to these endpoints;
// nothing in the control plane touches SimEngine directly.

#include <map>
#include <memory>
#include <string>

#include "qnet/rpc.hpp"
#include "qnet/sim_engine.hpp"

namespace qnet::agents {

struct Endpoint {
  std::string host = "127.0.0.1";
  uint16_t port = 0;  // 0 = pick an ephemeral port
};

struct AgentEndpoints {
  Endpoint eps, pa_a, pa_b, ttu_a, ttu_b;
};

// Agent error codes.
inline constexpr int kErrUnknownMethod = 101;
inline constexpr int kErrInvalidParams = 102;
inline constexpr int kErrDevice = 103;

// Method dispatch for one device. kind is "eps" | "pa" | "ttu"; site selects
// the arm for pa/ttu. Methods:
//   ping
//   eps.set_attenuation {db} / eps.get_status / eps.set_mode {mode[, basis]}
//   pa.set_waveplate {index, retardance} / pa.get_waveplates
//   pa.set_basis {basis} / pa.set_baseline {retardances[4]} / pa.get_baseline
//   ttu.set_reference_clock {source: external|internal}
//   ttu.acquire {duration_s} -> {handle}
//   ttu.fetch {handle} -> {encoding, data(base64), site}
//   ttu.advance {seconds} -> {virtual_time_s}   (engine-wide clock tick)
//   ttu.get_time -> {virtual_time_s}
rpc::json dispatch_device(sim::SimEngine& engine, const std::string& kind,
                          int site, const std::string& method,
                          const rpc::json& params);

class AgentHost {
 public:
  explicit AgentHost(std::shared_ptr<sim::SimEngine> engine);
  ~AgentHost();

  // Starts all five agents on loopback; returns the bound endpoints.
  AgentEndpoints start(const AgentEndpoints& want = {});
  void stop();
  const AgentEndpoints& endpoints() const { return bound_; }

  // Direct server access for fault injection in tests.
  rpc::AgentServer& server(const std::string& name);
  sim::SimEngine& engine() { return *engine_; }

 private:
  std::shared_ptr<sim::SimEngine> engine_;
  std::map<std::string, std::unique_ptr<rpc::AgentServer>> servers_;
  AgentEndpoints bound_;
};

}  // namespace qnet::agents

#pragma once

// Framed-JSON request/response plumbing between the orchestrator and device
// agents. The wire format is a 32-bit big-endian length prefix followed by
// one UTF-8 JSON object: {id, method, params, deadline_ms} for requests,
// {id, status, result|error} for responses. Transport failures (timeouts,
// broken frames) are distinct from application errors returned by an agent;
// only the former are retried. Every attempt is appended to a ProvenanceLog.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace qnet::rpc {

using json = nlohmann::json;

// Malformed wire data; offset is the byte position within the frame buffer
// (length prefix included) where decoding gave up.
class FrameError : public std::runtime_error {
 public:
  FrameError(size_t offset, const std::string& what)
      : std::runtime_error(what + " at byte " + std::to_string(offset)),
        offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

// The agent answered with status=error.
class AgentError : public std::runtime_error {
 public:
  AgentError(int code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

// Could not obtain a response: connect/send/receive failure or timeout,
// after exhausting the retry policy.
class TransportError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Envelope {
  uint64_t id = 0;
  std::string method;
  json params = json::object();
  int64_t deadline_ms = 0;
};

struct Response {
  uint64_t id = 0;
  bool ok = true;
  json result = json::object();
  int code = 0;
  std::string message;
};

// One length-prefixed frame around the serialized object.
std::vector<uint8_t> encode_frame(const json& payload);
// Decodes exactly one frame; throws FrameError on truncation, an oversized
// declared length, or invalid JSON. `consumed` (optional) receives the total
// frame size so callers can process back-to-back frames in one buffer.
json decode_frame(const uint8_t* data, size_t size, size_t* consumed = nullptr);

json to_json(const Envelope& e);
json to_json(const Response& r);
Envelope envelope_from_json(const json& j);
Response response_from_json(const json& j);

struct RetryPolicy {
  int max_attempts = 3;
  int timeout_ms = 2000;  // per attempt
  int backoff_ms = 100;   // fixed delay between attempts
};

struct ProvenanceRecord {
  double wall_time_s = 0.0;
  double virtual_time_s = 0.0;
  std::string agent;
  std::string method;
  std::string params_digest;  // stable hex digest of the params object
  std::string outcome;        // "ok" | "error" | "timeout"
  int attempt = 0;            // 1-based attempt index within one call
};

std::string params_digest(const json& params);

// Append-only, safe for concurrent writers. The optional virtual-time source
// stamps records with the simulation clock alongside wall time.
class ProvenanceLog {
 public:
  void set_virtual_time_source(std::function<double()> src);
  void append(ProvenanceRecord rec);
  std::vector<ProvenanceRecord> snapshot() const;
  size_t size() const;
  // Records with the given outcome, across all agents.
  size_t count_outcome(const std::string& outcome) const;

 private:
  mutable std::mutex mu_;
  std::function<double()> vtime_;
  std::vector<ProvenanceRecord> records_;
};

// Serves one device over TCP loopback. Requests are answered strictly in
// arrival order per device: the handler runs under the device mutex no
// matter how many connections are open. A handler throws AgentError to
// produce a status=error response; any other exception is mapped to code
// -32000. Unknown methods must also be answered (the built-in dispatch in
// agents.cpp does this); the server never drops a well-formed request.
class AgentServer {
 public:
  using Handler = std::function<json(const std::string& method, const json& params)>;

  AgentServer(std::string name, Handler handler);
  ~AgentServer();

  // Binds 127.0.0.1:port (0 picks an ephemeral port) and starts the accept
  // loop; returns the bound port.
  uint16_t start(uint16_t port = 0);
  void stop();
  uint16_t port() const { return port_; }
  const std::string& name() const { return name_; }

  // Fault injection for tests: silently swallow the next n well-formed
  // requests (the client sees a timeout).
  void fault_drop_requests(int n);
  // Answer the next n requests whose method starts with `prefix` with an
  // error response instead of dispatching them.
  void fault_refuse(const std::string& prefix, int n, int code,
                    const std::string& message);

 private:
  void accept_loop();
  void serve_connection(int fd);

  std::string name_;
  Handler handler_;
  std::mutex device_mu_;  // per-device strict serialization
  std::mutex fault_mu_;
  int drop_remaining_ = 0;
  std::string refuse_prefix_;
  int refuse_remaining_ = 0;
  int refuse_code_ = 0;
  std::string refuse_message_;

  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex conn_mu_;
  std::vector<std::thread> conn_threads_;
};

// Per-agent caller with one persistent connection, reconnecting as needed.
// call() returns the result object of an ok response, throws AgentError on a
// status=error response (no retry) and TransportError once the policy's
// attempts are exhausted. Each attempt uses a fresh request id.
class Client {
 public:
  Client(std::string agent_name, std::string host, uint16_t port,
         ProvenanceLog* log = nullptr);
  ~Client();

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  json call(const std::string& method, const json& params = json::object(),
            const RetryPolicy& policy = {});
  const std::string& agent_name() const { return name_; }

 private:
  void close_socket();
  bool ensure_connected(int timeout_ms);
  Response round_trip(const Envelope& env, int timeout_ms);

  std::string name_;
  std::string host_;
  uint16_t port_;
  ProvenanceLog* log_;
  int fd_ = -1;
  uint64_t next_id_ = 1;
  std::mutex mu_;  // one in-flight request per client
};

// Standard base64; used to move acquisition payloads through JSON results.
std::string base64_encode(const uint8_t* data, size_t size);
std::string base64_encode(const std::vector<uint8_t>& data);
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace qnet::rpc

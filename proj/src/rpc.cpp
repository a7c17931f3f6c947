#include "qnet/rpc.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>

namespace qnet::rpc {
namespace {

constexpr size_t kMaxFrame = 96ull * 1024 * 1024;

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                        deadline - Clock::now())
                        .count();
  return left > 0 ? static_cast<int>(left) : 0;
}

// Whether buf holds at least one complete frame. Throws FrameError when the
// declared length alone is already invalid.
bool frame_complete(const uint8_t* data, size_t size, size_t* total) {
  if (size < 4) return false;
  const uint32_t len = (uint32_t(data[0]) << 24) | (uint32_t(data[1]) << 16) |
                       (uint32_t(data[2]) << 8) | uint32_t(data[3]);
  if (len > kMaxFrame) throw FrameError(0, "declared frame length too large");
  if (size < 4 + static_cast<size_t>(len)) return false;
  *total = 4 + static_cast<size_t>(len);
  return true;
}

bool wait_fd(int fd, short events, int timeout_ms) {
  pollfd p{fd, events, 0};
  return ::poll(&p, 1, timeout_ms) > 0;
}

void send_all(int fd, const uint8_t* data, size_t size,
              Clock::time_point deadline) {
  size_t off = 0;
  while (off < size) {
    const ssize_t n = ::send(fd, data + off, size - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<size_t>(n);
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      const int left = remaining_ms(deadline);
      if (left == 0 || !wait_fd(fd, POLLOUT, left))
        throw TransportError("send timeout");
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    throw TransportError(std::string("send failed: ") + std::strerror(errno));
  }
}

// Reads exactly one frame before the deadline. Data already buffered by the
// caller is honored first.
json recv_frame(int fd, std::vector<uint8_t>& buf, Clock::time_point deadline) {
  while (true) {
    size_t total = 0;
    if (frame_complete(buf.data(), buf.size(), &total)) {
      size_t consumed = 0;
      json j = decode_frame(buf.data(), total, &consumed);
      buf.erase(buf.begin(), buf.begin() + static_cast<long>(consumed));
      return j;
    }
    const int left = remaining_ms(deadline);
    if (left == 0 || !wait_fd(fd, POLLIN, left))
      throw TransportError("receive timeout");
    uint8_t chunk[65536];
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n == 0) throw TransportError("connection closed by peer");
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") +
                           std::strerror(errno));
    }
    buf.insert(buf.end(), chunk, chunk + n);
  }
}

void set_nonblocking(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK);
}

double wall_seconds() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::vector<uint8_t> encode_frame(const json& payload) {
  const std::string body = payload.dump();
  if (body.size() > kMaxFrame)
    throw std::length_error("frame payload exceeds the size cap");
  std::vector<uint8_t> out(4 + body.size());
  const uint32_t len = static_cast<uint32_t>(body.size());
  out[0] = static_cast<uint8_t>(len >> 24);
  out[1] = static_cast<uint8_t>(len >> 16);
  out[2] = static_cast<uint8_t>(len >> 8);
  out[3] = static_cast<uint8_t>(len);
  std::memcpy(out.data() + 4, body.data(), body.size());
  return out;
}

json decode_frame(const uint8_t* data, size_t size, size_t* consumed) {
  if (size < 4) throw FrameError(size, "truncated length prefix");
  const uint32_t len = (uint32_t(data[0]) << 24) | (uint32_t(data[1]) << 16) |
                       (uint32_t(data[2]) << 8) | uint32_t(data[3]);
  if (len > kMaxFrame) throw FrameError(0, "declared frame length too large");
  if (size < 4 + static_cast<size_t>(len))
    throw FrameError(size, "truncated payload");
  try {
    json j = json::parse(data + 4, data + 4 + len);
    if (consumed != nullptr) *consumed = 4 + static_cast<size_t>(len);
    return j;
  } catch (const json::parse_error& e) {
    // e.byte is 1-based within the payload.
    throw FrameError(4 + (e.byte > 0 ? e.byte - 1 : 0),
                     std::string("invalid JSON payload: ") + e.what());
  }
}

json to_json(const Envelope& e) {
  return json{{"id", e.id},
              {"method", e.method},
              {"params", e.params},
              {"deadline_ms", e.deadline_ms}};
}

json to_json(const Response& r) {
  if (r.ok) return json{{"id", r.id}, {"status", "ok"}, {"result", r.result}};
  return json{{"id", r.id},
              {"status", "error"},
              {"error", {{"code", r.code}, {"message", r.message}}}};
}

Envelope envelope_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("envelope: not an object");
  Envelope e;
  if (!j.contains("id") || !j["id"].is_number_unsigned())
    throw std::invalid_argument("envelope: missing unsigned id");
  e.id = j["id"].get<uint64_t>();
  if (!j.contains("method") || !j["method"].is_string())
    throw std::invalid_argument("envelope: missing method string");
  e.method = j["method"].get<std::string>();
  e.params = j.value("params", json::object());
  if (e.params.is_null()) e.params = json::object();  // {} arrives as null
  if (!e.params.is_object())
    throw std::invalid_argument("envelope: params must be an object");
  e.deadline_ms = j.value("deadline_ms", int64_t{0});
  return e;
}

Response response_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("response: not an object");
  Response r;
  if (!j.contains("id") || !j["id"].is_number_unsigned())
    throw std::invalid_argument("response: missing unsigned id");
  r.id = j["id"].get<uint64_t>();
  const std::string status = j.value("status", "");
  if (status == "ok") {
    r.ok = true;
    r.result = j.value("result", json::object());
  } else if (status == "error") {
    r.ok = false;
    const json err = j.value("error", json::object());
    r.code = err.value("code", -32000);
    r.message = err.value("message", "unspecified agent error");
  } else {
    throw std::invalid_argument("response: status must be ok|error");
  }
  return r;
}

std::string params_digest(const json& params) {
  // FNV-1a over the canonical dump; stable across runs and platforms.
  const std::string s = params.dump();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

void ProvenanceLog::set_virtual_time_source(std::function<double()> src) {
  std::lock_guard<std::mutex> lk(mu_);
  vtime_ = std::move(src);
}

void ProvenanceLog::append(ProvenanceRecord rec) {
  std::lock_guard<std::mutex> lk(mu_);
  rec.wall_time_s = wall_seconds();
  rec.virtual_time_s = vtime_ ? vtime_() : 0.0;
  records_.push_back(std::move(rec));
}

std::vector<ProvenanceRecord> ProvenanceLog::snapshot() const {
  std::lock_guard<std::mutex> lk(mu_);
  return records_;
}

size_t ProvenanceLog::size() const {
  std::lock_guard<std::mutex> lk(mu_);
  return records_.size();
}

size_t ProvenanceLog::count_outcome(const std::string& outcome) const {
  std::lock_guard<std::mutex> lk(mu_);
  size_t n = 0;
  for (const auto& r : records_)
    if (r.outcome == outcome) ++n;
  return n;
}

AgentServer::AgentServer(std::string name, Handler handler)
    : name_(std::move(name)), handler_(std::move(handler)) {}

AgentServer::~AgentServer() { stop(); }

uint16_t AgentServer::start(uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(name_ + ": bind failed: " + std::strerror(errno));
  }
  if (::listen(listen_fd_, 16) < 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(name_ + ": listen failed");
  }
  socklen_t alen = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
  port_ = ntohs(addr.sin_port);
  stopping_ = false;
  accept_thread_ = std::thread([this] { accept_loop(); });
  return port_;
}

void AgentServer::stop() {
  if (listen_fd_ < 0 && !accept_thread_.joinable()) return;
  stopping_ = true;
  if (accept_thread_.joinable()) accept_thread_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  std::vector<std::thread> conns;
  {
    std::lock_guard<std::mutex> lk(conn_mu_);
    conns.swap(conn_threads_);
  }
  for (auto& t : conns)
    if (t.joinable()) t.join();
}

void AgentServer::fault_drop_requests(int n) {
  std::lock_guard<std::mutex> lk(fault_mu_);
  drop_remaining_ = n;
}

void AgentServer::fault_refuse(const std::string& prefix, int n, int code,
                               const std::string& message) {
  std::lock_guard<std::mutex> lk(fault_mu_);
  refuse_prefix_ = prefix;
  refuse_remaining_ = n;
  refuse_code_ = code;
  refuse_message_ = message;
}

void AgentServer::accept_loop() {
  while (!stopping_) {
    if (!wait_fd(listen_fd_, POLLIN, 50)) continue;
    sockaddr_in peer{};
    socklen_t plen = sizeof(peer);
    const int fd =
        ::accept(listen_fd_, reinterpret_cast<sockaddr*>(&peer), &plen);
    if (fd < 0) continue;
    set_nonblocking(fd);
    std::lock_guard<std::mutex> lk(conn_mu_);
    conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void AgentServer::serve_connection(int fd) {
  static const bool trace = std::getenv("QNET_RPC_TRACE") != nullptr;
  std::vector<uint8_t> buf;
  while (!stopping_) {
    size_t total = 0;
    bool have = false;
    try {
      have = frame_complete(buf.data(), buf.size(), &total);
    } catch (const FrameError& e) {
      if (trace) std::fprintf(stderr, "[%s] bad length: %s\n", name_.c_str(), e.what());
      break;  // poisoned stream; nothing sane can follow
    }
    if (!have) {
      if (!wait_fd(fd, POLLIN, 50)) continue;
      uint8_t chunk[65536];
      const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
      if (n == 0) break;
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)
          continue;
        if (trace) std::fprintf(stderr, "[%s] recv error: %s\n", name_.c_str(), std::strerror(errno));
        break;
      }
      buf.insert(buf.end(), chunk, chunk + n);
      continue;
    }

    Envelope env;
    try {
      const json j = decode_frame(buf.data(), total);
      buf.erase(buf.begin(), buf.begin() + static_cast<long>(total));
      env = envelope_from_json(j);
    } catch (const std::exception& e) {
      if (trace) std::fprintf(stderr, "[%s] bad envelope: %s\n", name_.c_str(), e.what());
      break;  // malformed frame or envelope: drop the connection
    }

    {
      std::lock_guard<std::mutex> lk(fault_mu_);
      if (drop_remaining_ > 0) {
        --drop_remaining_;
        continue;  // swallowed on purpose; the caller times out
      }
      if (refuse_remaining_ > 0 && env.method.rfind(refuse_prefix_, 0) == 0) {
        --refuse_remaining_;
        Response r;
        r.id = env.id;
        r.ok = false;
        r.code = refuse_code_;
        r.message = refuse_message_;
        const auto frame = encode_frame(to_json(r));
        try {
          send_all(fd, frame.data(), frame.size(),
                   Clock::now() + std::chrono::seconds(30));
        } catch (const TransportError&) {
          break;
        }
        continue;
      }
    }

    Response resp;
    resp.id = env.id;
    try {
      std::lock_guard<std::mutex> lk(device_mu_);
      resp.result = handler_(env.method, env.params);
      resp.ok = true;
    } catch (const AgentError& e) {
      resp.ok = false;
      resp.code = e.code();
      resp.message = e.what();
    } catch (const std::exception& e) {
      resp.ok = false;
      resp.code = -32000;
      resp.message = e.what();
    }
    const auto frame = encode_frame(to_json(resp));
    try {
      send_all(fd, frame.data(), frame.size(),
               Clock::now() + std::chrono::seconds(30));
    } catch (const TransportError&) {
      break;
    }
  }
  ::close(fd);
}

Client::Client(std::string agent_name, std::string host, uint16_t port,
               ProvenanceLog* log)
    : name_(std::move(agent_name)),
      host_(std::move(host)),
      port_(port),
      log_(log) {}

Client::~Client() { close_socket(); }

void Client::close_socket() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

bool Client::ensure_connected(int timeout_ms) {
  if (fd_ >= 0) return true;
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return false;
  set_nonblocking(fd);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    return false;
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 &&
      errno != EINPROGRESS) {
    ::close(fd);
    return false;
  }
  if (!wait_fd(fd, POLLOUT, timeout_ms)) {
    ::close(fd);
    return false;
  }
  int err = 0;
  socklen_t elen = sizeof(err);
  ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
  if (err != 0) {
    ::close(fd);
    return false;
  }
  fd_ = fd;
  return true;
}

Response Client::round_trip(const Envelope& env, int timeout_ms) {
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  if (!ensure_connected(timeout_ms))
    throw TransportError(name_ + ": connect failed");
  const auto frame = encode_frame(to_json(env));
  send_all(fd_, frame.data(), frame.size(), deadline);
  std::vector<uint8_t> buf;
  const json j = recv_frame(fd_, buf, deadline);
  return response_from_json(j);
}

json Client::call(const std::string& method, const json& params,
                  const RetryPolicy& policy) {
  std::lock_guard<std::mutex> lk(mu_);
  std::string last_error = "no attempts made";
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    ProvenanceRecord rec;
    rec.agent = name_;
    rec.method = method;
    rec.params_digest = params_digest(params);
    rec.attempt = attempt;
    try {
      Envelope env;
      env.id = next_id_++;
      env.method = method;
      env.params = params.is_null() ? json::object() : params;
      env.deadline_ms = policy.timeout_ms;
      const Response r = round_trip(env, policy.timeout_ms);
      if (r.id != env.id)
        throw TransportError("response id does not match the request");
      if (r.ok) {
        rec.outcome = "ok";
        if (log_ != nullptr) log_->append(std::move(rec));
        return r.result;
      }
      rec.outcome = "error";
      if (log_ != nullptr) log_->append(std::move(rec));
      throw AgentError(r.code, name_ + "." + method + ": " + r.message);
    } catch (const AgentError&) {
      throw;  // application errors are not retried
    } catch (const std::exception& e) {
      rec.outcome = "timeout";
      if (log_ != nullptr) log_->append(std::move(rec));
      last_error = e.what();
      close_socket();
      if (attempt < policy.max_attempts) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(policy.backoff_ms));
      }
    }
  }
  throw TransportError(name_ + "." + method + ": transport failure after " +
                       std::to_string(policy.max_attempts) +
                       " attempts (last: " + last_error + ")");
}

namespace {
constexpr char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const uint8_t* data, size_t size) {
  std::string out;
  out.reserve((size + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= size; i += 3) {
    const uint32_t v = (uint32_t(data[i]) << 16) | (uint32_t(data[i + 1]) << 8) |
                       uint32_t(data[i + 2]);
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back(kB64[v & 63]);
  }
  if (i + 1 == size) {
    const uint32_t v = uint32_t(data[i]) << 16;
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (i + 2 == size) {
    const uint32_t v = (uint32_t(data[i]) << 16) | (uint32_t(data[i + 1]) << 8);
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_encode(const std::vector<uint8_t>& data) {
  return base64_encode(data.data(), data.size());
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0)
    throw std::invalid_argument("base64: length not a multiple of 4");
  static const auto table = [] {
    std::array<int8_t, 256> t;
    t.fill(-1);
    for (int i = 0; i < 64; ++i) t[static_cast<uint8_t>(kB64[i])] = int8_t(i);
    return t;
  }();
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2)
          throw std::invalid_argument("base64: misplaced padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw std::invalid_argument("base64: data after padding");
      const int8_t d = table[static_cast<uint8_t>(c)];
      if (d < 0) throw std::invalid_argument("base64: invalid character");
      v = (v << 6) | static_cast<uint32_t>(d);
    }
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<uint8_t>(v & 0xff));
  }
  return out;
}

}  // namespace qnet::rpc

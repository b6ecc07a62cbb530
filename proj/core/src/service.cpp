#include "prsr/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "prsr/errors.hpp"

namespace prsr::service {

namespace {

using nlohmann::ordered_json;

std::string error_line(const std::string& message) {
  ordered_json j;
  j["error"] = message;
  return j.dump();
}

bool sockaddr_is_loopback(const sockaddr_in& addr) {
  return (ntohl(addr.sin_addr.s_addr) >> 24) == 127;
}

}  // namespace

Server::Server(router::Checkpoint checkpoint, strategy::RoutingPolicy policy, bool hard_admission)
    : checkpoint_(std::move(checkpoint)), policy_(policy), hard_admission_(hard_admission) {}

Server::~Server() {
  stop();
  wait();
}

std::string Server::handle_line(const std::string& line, bool from_loopback, bool* shutdown) {
  ordered_json j = ordered_json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    errors_.fetch_add(1);
    return error_line("malformed request line, expected one JSON object");
  }

  if (j.contains("cmd")) {
    const std::string cmd = j.value("cmd", "");
    if (cmd == "stats") {
      const Counters c = counters();
      ordered_json out;
      out["requests"] = c.requests;
      out["cloud_routed"] = c.cloud_routed;
      out["edge_routed"] = c.edge_routed;
      out["overrides"] = c.overrides;
      out["errors"] = c.errors;
      out["cloud_rate"] = c.requests == 0
                              ? 0.0
                              : static_cast<double>(c.cloud_routed) / static_cast<double>(c.requests);
      out["alpha"] = policy_.alpha;
      out["rate_bound"] = policy_.rate_bound;
      out["uptime_seconds"] = c.uptime_seconds;
      return out.dump();
    }
    if (cmd == "shutdown") {
      if (!from_loopback) {
        errors_.fetch_add(1);
        return error_line("shutdown is only honored from loopback connections");
      }
      if (shutdown) *shutdown = true;
      ordered_json out;
      out["ok"] = true;
      return out.dump();
    }
    errors_.fetch_add(1);
    return error_line("unknown command '" + cmd + "'");
  }

  std::string id;
  std::vector<int> tokens;
  try {
    id = j.at("id").get<std::string>();
    tokens = j.at("tokens").get<std::vector<int>>();
  } catch (const std::exception& e) {
    errors_.fetch_add(1);
    return error_line(std::string("bad request: ") + e.what());
  }

  strategy::RoutingDecision decision;
  try {
    decision = strategy::route(id, checkpoint_, tokens, policy_);
  } catch (const Error& e) {
    errors_.fetch_add(1);
    ordered_json out;
    out["id"] = id;
    out["error"] = e.what();
    return out.dump();
  }

  if (hard_admission_ && decision.destination == strategy::Destination::cloud) {
    // Serialized so the running rate check sees a consistent count.
    std::lock_guard<std::mutex> lock(admission_mutex_);
    const uint64_t total = requests_.load();
    const uint64_t cloud = cloud_routed_.load();
    const double would_be = static_cast<double>(cloud + 1) / static_cast<double>(total + 1);
    if (would_be > policy_.rate_bound) {
      decision.destination = strategy::Destination::edge;
      overrides_.fetch_add(1);
    }
    requests_.fetch_add(1);
    if (decision.destination == strategy::Destination::cloud) {
      cloud_routed_.fetch_add(1);
    } else {
      edge_routed_.fetch_add(1);
    }
  } else {
    if (hard_admission_) {
      std::lock_guard<std::mutex> lock(admission_mutex_);
      requests_.fetch_add(1);
      edge_routed_.fetch_add(1);
    } else {
      requests_.fetch_add(1);
      if (decision.destination == strategy::Destination::cloud) {
        cloud_routed_.fetch_add(1);
      } else {
        edge_routed_.fetch_add(1);
      }
    }
  }

  return strategy::decision_to_json_line(decision);
}

void Server::start(const std::string& host, uint16_t port) {
  if (running_.load()) {
    throw_error(ErrorCategory::contract, "server already running");
  }

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) {
    throw_error(ErrorCategory::io, "socket() failed: " + std::string(std::strerror(errno)));
  }
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw_error(ErrorCategory::config, "invalid bind address: " + host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string msg = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw_error(ErrorCategory::io, "bind(" + host + ":" + std::to_string(port) + ") failed: " + msg);
  }
  if (::listen(listen_fd_, 64) != 0) {
    const std::string msg = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw_error(ErrorCategory::io, "listen failed: " + msg);
  }

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);

  started_at_ = std::chrono::steady_clock::now();
  running_.store(true);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void Server::accept_loop() {
  while (running_.load()) {
    sockaddr_in peer{};
    socklen_t peer_len = sizeof(peer);
    const int fd = ::accept(listen_fd_, reinterpret_cast<sockaddr*>(&peer), &peer_len);
    if (fd < 0) {
      if (!running_.load()) break;
      continue;
    }
    const bool loopback = sockaddr_is_loopback(peer);
    std::lock_guard<std::mutex> lock(workers_mutex_);
    workers_.emplace_back([this, fd, loopback] { serve_connection(fd, loopback); });
  }
}

void Server::serve_connection(int fd, bool from_loopback) {
  // Bounded reads so idle connections notice stop() instead of blocking in
  // recv forever.
  timeval timeout{};
  timeout.tv_usec = 200 * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &timeout, sizeof(timeout));

  std::string buffer;
  char chunk[4096];
  bool shutdown_requested = false;

  while (running_.load() && !shutdown_requested) {
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<size_t>(n));

    size_t newline;
    while ((newline = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, newline);
      buffer.erase(0, newline + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;

      std::string response = handle_line(line, from_loopback, &shutdown_requested);
      response.push_back('\n');
      size_t sent = 0;
      while (sent < response.size()) {
        const ssize_t w = ::send(fd, response.data() + sent, response.size() - sent, MSG_NOSIGNAL);
        if (w <= 0) {
          shutdown_requested = shutdown_requested || !running_.load();
          break;
        }
        sent += static_cast<size_t>(w);
      }
      if (shutdown_requested) break;
    }
  }
  ::close(fd);
  if (shutdown_requested) stop();
}

void Server::stop() {
  bool expected = true;
  if (running_.compare_exchange_strong(expected, false)) {
    // Wake the blocked accept; the fd itself is closed in wait() once the
    // accept thread has joined, so no thread ever sees a reused descriptor.
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  }
}

void Server::wait() {
  if (accept_thread_.joinable()) accept_thread_.join();
  for (;;) {
    std::vector<std::thread> drained;
    {
      std::lock_guard<std::mutex> lock(workers_mutex_);
      drained.swap(workers_);
    }
    if (drained.empty()) break;
    for (auto& t : drained) {
      if (t.joinable()) t.join();
    }
  }
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

Counters Server::counters() const {
  Counters c;
  c.requests = requests_.load();
  c.cloud_routed = cloud_routed_.load();
  c.edge_routed = edge_routed_.load();
  c.overrides = overrides_.load();
  c.errors = errors_.load();
  if (started_at_.time_since_epoch().count() != 0) {
    c.uptime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_at_).count();
  }
  return c;
}

}  // namespace prsr::service

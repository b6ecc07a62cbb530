#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "prsr/router.hpp"
#include "prsr/strategy.hpp"

namespace prsr::service {

struct Counters {
  uint64_t requests = 0;
  uint64_t cloud_routed = 0;
  uint64_t edge_routed = 0;
  uint64_t overrides = 0;
  uint64_t errors = 0;
  double uptime_seconds = 0.0;
};

// Long-running routing daemon over a line-delimited TCP protocol. One JSON
// object per line in both directions:
//   request   {"id": "...", "tokens": [ ... ]}
//   response  {"id": "...", "route": "edge"|"cloud", "prs": x, "alpha": a}
//   control   {"cmd": "stats"} and {"cmd": "shutdown"} (loopback peers only)
// Malformed lines get {"error": "..."} without dropping the connection.
//
// The checkpoint and policy are immutable after construction; connections are
// handled concurrently. In hard admission mode a request that would push the
// running cloud rate above the policy's bound is overridden to the edge, with
// that check serialized.
class Server {
 public:
  Server(router::Checkpoint checkpoint, strategy::RoutingPolicy policy, bool hard_admission);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts accepting; port 0 picks an ephemeral port. Throws on
  // bind failure.
  void start(const std::string& host, uint16_t port);
  uint16_t port() const { return port_; }

  void stop();
  void wait();
  bool running() const { return running_.load(); }

  Counters counters() const;

  // Protocol core, exposed for direct testing: one request line in, one
  // response line out (without the trailing newline). from_loopback gates the
  // shutdown command; *shutdown is set when a shutdown was accepted.
  std::string handle_line(const std::string& line, bool from_loopback, bool* shutdown);

 private:
  void accept_loop();
  void serve_connection(int fd, bool from_loopback);

  router::Checkpoint checkpoint_;
  strategy::RoutingPolicy policy_;
  bool hard_admission_;

  std::atomic<uint64_t> requests_{0};
  std::atomic<uint64_t> cloud_routed_{0};
  std::atomic<uint64_t> edge_routed_{0};
  std::atomic<uint64_t> overrides_{0};
  std::atomic<uint64_t> errors_{0};
  std::mutex admission_mutex_;

  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::chrono::steady_clock::time_point started_at_{};
  std::thread accept_thread_;
  std::mutex workers_mutex_;
  std::vector<std::thread> workers_;
};

}  // namespace prsr::service

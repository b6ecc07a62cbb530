#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>

#include "prsr/router.hpp"

namespace prsr::strategy {

enum class Destination : uint8_t { edge, cloud };

inline const char* destination_name(Destination d) {
  return d == Destination::cloud ? "cloud" : "edge";
}

// Cost and latency constraints of one deployment. latency_budget defaults to
// unbounded; cloud_cost == 0 makes the fee constraint non-binding.
struct Budget {
  double cloud_cost = 0.0;     // fee per cloud request
  double fee_budget = 0.0;     // amortized fee budget per request
  double latency_budget = std::numeric_limits<double>::infinity();
  double cloud_latency = 0.0;  // cloud serving plus communication
  double edge_latency = 0.0;
  double router_latency = 0.0;

  void validate() const;
};

// Binding minimum of the fee and latency constraints, clamped to [0, 1].
double budget_to_rate(const Budget& budget);

struct RoutingPolicy {
  double alpha = 0.5;   // threshold, capped at 1/2
  double rate_bound = 1.0;  // rho_r the threshold was calibrated for
};

// Largest prediction value whose strictly-below fraction stays within
// rate_bound, capped at 1/2. Guarantees the empirical cloud rate of the
// calibration set never exceeds rate_bound.
RoutingPolicy calibrate_threshold(std::span<const double> predicted_prs, double rate_bound);

struct RoutingDecision {
  std::string id;
  Destination destination = Destination::edge;
  double predicted_prs = 0.0;
  double alpha = 0.0;
};

// cloud iff predicted superiority is strictly below alpha; a prediction equal
// to alpha stays on the edge.
Destination decide(double predicted_prs, double alpha);

RoutingDecision route(const std::string& id, const router::Checkpoint& ckpt,
                      std::span<const int> tokens, const RoutingPolicy& policy);

// One canonical serialization shared by the offline decisions file and the
// online service so the two outputs are byte-comparable.
std::string decision_to_json_line(const RoutingDecision& decision);

// Small key=value text file: alpha, rate bound, checkpoint reference.
void save_policy(const RoutingPolicy& policy, const std::string& checkpoint_ref,
                 const std::filesystem::path& path);
struct LoadedPolicy {
  RoutingPolicy policy;
  std::string checkpoint_ref;
};
LoadedPolicy load_policy(const std::filesystem::path& path);

}  // namespace prsr::strategy

#include "prsr/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "prsr/errors.hpp"

namespace prsr::strategy {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void Budget::validate() const {
  const double fields[] = {cloud_cost, fee_budget, cloud_latency, edge_latency, router_latency};
  for (double f : fields) {
    if (std::isnan(f) || f < 0.0) {
      throw_error(ErrorCategory::config, "budget fields must be non-negative");
    }
  }
  if (std::isnan(latency_budget) || latency_budget < 0.0) {
    throw_error(ErrorCategory::config, "latency budget must be non-negative");
  }
}

double budget_to_rate(const Budget& budget) {
  budget.validate();

  const double fee_bound = budget.cloud_cost > 0.0
                               ? budget.fee_budget / budget.cloud_cost
                               : std::numeric_limits<double>::infinity();

  double latency_bound = std::numeric_limits<double>::infinity();
  if (std::isfinite(budget.latency_budget)) {
    if (budget.cloud_latency <= budget.edge_latency) {
      throw_error(ErrorCategory::config,
                  "latency budget is binding but cloud latency does not exceed edge latency");
    }
    latency_bound = (budget.latency_budget - budget.edge_latency - budget.router_latency) /
                    (budget.cloud_latency - budget.edge_latency);
  }

  const double rate = std::min(fee_bound, latency_bound);
  if (std::isinf(rate)) return 1.0;
  return std::clamp(rate, 0.0, 1.0);
}

RoutingPolicy calibrate_threshold(std::span<const double> predicted_prs, double rate_bound) {
  if (predicted_prs.empty()) {
    throw_error(ErrorCategory::invalid_input, "calibration set is empty");
  }
  if (std::isnan(rate_bound) || rate_bound < 0.0 || rate_bound > 1.0) {
    throw_error(ErrorCategory::invalid_input, "rate bound must lie in [0, 1]");
  }

  std::vector<double> sorted(predicted_prs.begin(), predicted_prs.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());

  // Pick the largest sample whose strictly-below count keeps the cloud rate
  // within the bound. The smallest sample always qualifies (count 0), so
  // duplicates can never overshoot.
  double quantile = sorted.front();
  for (size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0 && sorted[i] == sorted[i - 1]) continue;  // same strictly-below count
    if (static_cast<double>(i) <= rate_bound * m) quantile = sorted[i];
  }

  RoutingPolicy policy;
  policy.alpha = std::min(quantile, 0.5);
  policy.rate_bound = rate_bound;
  return policy;
}

Destination decide(double predicted_prs, double alpha) {
  return predicted_prs < alpha ? Destination::cloud : Destination::edge;
}

RoutingDecision route(const std::string& id, const router::Checkpoint& ckpt,
                      std::span<const int> tokens, const RoutingPolicy& policy) {
  const router::Prediction pred = router::forward(ckpt, tokens);
  RoutingDecision decision;
  decision.id = id;
  decision.predicted_prs = pred.prs;
  decision.alpha = policy.alpha;
  decision.destination = decide(pred.prs, policy.alpha);
  return decision;
}

std::string decision_to_json_line(const RoutingDecision& decision) {
  nlohmann::ordered_json j;
  j["id"] = decision.id;
  j["route"] = destination_name(decision.destination);
  j["prs"] = decision.predicted_prs;
  j["alpha"] = decision.alpha;
  return j.dump();
}

void save_policy(const RoutingPolicy& policy, const std::string& checkpoint_ref,
                 const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open policy file for writing: " + path.string());
  }
  file << "alpha=" << format_double(policy.alpha) << "\n";
  file << "rate_bound=" << format_double(policy.rate_bound) << "\n";
  file << "checkpoint=" << checkpoint_ref << "\n";
  if (!file) {
    throw_error(ErrorCategory::io, "failed writing policy file: " + path.string());
  }
}

LoadedPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open policy file: " + path.string());
  }
  LoadedPolicy loaded;
  bool saw_alpha = false, saw_rate = false;
  std::string line;
  int line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw_error(ErrorCategory::parse,
                  path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "alpha") {
      loaded.policy.alpha = std::stod(value);
      saw_alpha = true;
    } else if (key == "rate_bound") {
      loaded.policy.rate_bound = std::stod(value);
      saw_rate = true;
    } else if (key == "checkpoint") {
      loaded.checkpoint_ref = value;
    } else {
      throw_error(ErrorCategory::parse,
                  path.string() + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!saw_alpha || !saw_rate) {
    throw_error(ErrorCategory::parse, path.string() + ": missing alpha or rate_bound");
  }
  if (loaded.policy.alpha > 0.5) {
    throw_error(ErrorCategory::config, path.string() + ": alpha above the 1/2 cap");
  }
  return loaded;
}

}  // namespace prsr::strategy

#include "prsr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prsr/errors.hpp"
#include "prsr/rng.hpp"

namespace prsr::eval {

namespace {

bool edge_wins(const EvalRecord& rec) { return rec.true_prs >= 0.5; }

size_t cloud_count(size_t m, double rate) {
  if (std::isnan(rate) || rate < 0.0 || rate > 1.0) {
    throw_error(ErrorCategory::invalid_input, "routing rate must lie in [0, 1]");
  }
  return static_cast<size_t>(std::floor(rate * static_cast<double>(m)));
}

std::vector<double> side_means(std::span<const EvalRecord> records, bool cloud_side) {
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "mean of an empty record set");
  }
  const size_t n = records.front().q_edge.size();
  std::vector<double> mu(n, 0.0);
  for (const auto& rec : records) {
    const math::QualityVector& q = cloud_side ? rec.q_cloud : rec.q_edge;
    if (q.size() != n) throw_error(ErrorCategory::dimension, "records disagree on metric count");
    for (size_t i = 0; i < n; ++i) mu[i] += q[i];
  }
  for (double& v : mu) v /= static_cast<double>(records.size());
  return mu;
}

}  // namespace

double win_rate(std::span<const EvalRecord> records) {
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "win rate of an empty record set");
  }
  size_t wins = 0;
  for (const auto& rec : records) {
    if (rec.destination == Destination::cloud || edge_wins(rec)) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(records.size());
}

double edge_win_fraction(std::span<const EvalRecord> records) {
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "win fraction of an empty record set");
  }
  size_t wins = 0;
  for (const auto& rec : records) {
    if (edge_wins(rec)) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(records.size());
}

std::vector<Destination> oracle_route(std::span<const EvalRecord> records, double rate) {
  const size_t c = cloud_count(records.size(), rate);
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (records[a].true_prs != records[b].true_prs) {
      return records[a].true_prs < records[b].true_prs;
    }
    return records[a].id < records[b].id;
  });
  std::vector<Destination> out(records.size(), Destination::edge);
  for (size_t i = 0; i < c; ++i) out[order[i]] = Destination::cloud;
  return out;
}

std::vector<Destination> random_route(std::span<const EvalRecord> records, double rate,
                                      uint64_t seed) {
  const size_t c = cloud_count(records.size(), rate);
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Destination> out(records.size(), Destination::edge);
  for (size_t i = 0; i < c; ++i) out[order[i]] = Destination::cloud;
  return out;
}

double random_win_rate_expectation(std::span<const EvalRecord> records, double rate) {
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "win rate of an empty record set");
  }
  const double m = static_cast<double>(records.size());
  const double c = static_cast<double>(cloud_count(records.size(), rate));
  // Each record lands on the cloud with probability c/m; cloud always wins,
  // kept records win at the edge-win fraction.
  return (c + (m - c) * edge_win_fraction(records)) / m;
}

std::optional<double> normalized_win_rate_improvement(double w_router, double w_baseline,
                                                      double w_oracle) {
  const double denom = w_oracle - w_baseline;
  if (denom == 0.0) return std::nullopt;
  return (w_router - w_baseline) / denom;
}

double relative_performance_improvement(std::span<const double> mu_routed,
                                        std::span<const double> mu_edge,
                                        std::span<const double> mu_cloud, double denom_floor) {
  const size_t n = mu_routed.size();
  if (mu_edge.size() != n || mu_cloud.size() != n) {
    throw_error(ErrorCategory::dimension, "mean arrays disagree on metric count");
  }
  if (n == 0) {
    throw_error(ErrorCategory::invalid_input, "no metrics to average");
  }
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double denom = std::max(std::fabs(mu_cloud[i] - mu_edge[i]), denom_floor);
    acc += (mu_routed[i] - mu_edge[i]) / denom;
  }
  return acc / static_cast<double>(n);
}

std::vector<double> routed_means(std::span<const EvalRecord> records) {
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "mean of an empty record set");
  }
  const size_t n = records.front().q_edge.size();
  std::vector<double> mu(n, 0.0);
  for (const auto& rec : records) {
    const math::QualityVector& q =
        rec.destination == Destination::cloud ? rec.q_cloud : rec.q_edge;
    for (size_t i = 0; i < n; ++i) mu[i] += q[i];
  }
  for (double& v : mu) v /= static_cast<double>(records.size());
  return mu;
}

std::vector<double> edge_means(std::span<const EvalRecord> records) {
  return side_means(records, false);
}

std::vector<double> cloud_means(std::span<const EvalRecord> records) {
  return side_means(records, true);
}

std::vector<double> random_means_expectation(std::span<const EvalRecord> records, double rate) {
  const double p = static_cast<double>(cloud_count(records.size(), rate)) /
                   static_cast<double>(records.size());
  std::vector<double> mu = edge_means(records);
  const std::vector<double> mc = cloud_means(records);
  for (size_t i = 0; i < mu.size(); ++i) mu[i] += p * (mc[i] - mu[i]);
  return mu;
}

std::optional<double> cost_saving(std::span<const CurvePoint> router_curve, double dp_target) {
  if (router_curve.empty()) {
    throw_error(ErrorCategory::invalid_input, "cost saving needs a non-empty sweep curve");
  }
  if (!(dp_target > 0.0)) return std::nullopt;

  std::vector<CurvePoint> curve(router_curve.begin(), router_curve.end());
  std::sort(curve.begin(), curve.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.rate < b.rate; });

  // First rate at which the router's piecewise-linear curve reaches the target.
  std::optional<double> p_router;
  if (curve.front().delta_p >= dp_target) {
    p_router = curve.front().rate;
  } else {
    for (size_t i = 1; i < curve.size(); ++i) {
      const CurvePoint& lo = curve[i - 1];
      const CurvePoint& hi = curve[i];
      if (lo.delta_p < dp_target && hi.delta_p >= dp_target) {
        const double span = hi.delta_p - lo.delta_p;
        p_router = lo.rate + (dp_target - lo.delta_p) * (hi.rate - lo.rate) / span;
        break;
      }
    }
  }
  if (!p_router) return std::nullopt;

  const double p_baseline = dp_target;  // the random baseline's curve is delta_p = p
  return (p_baseline - *p_router) / p_baseline;
}

SweepPoint score_records(std::span<const EvalRecord> records, double rate, double denom_floor) {
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "cannot score an empty record set");
  }
  SweepPoint point;
  point.rate = rate;

  size_t cloud = 0;
  for (const auto& rec : records) {
    if (rec.destination == Destination::cloud) ++cloud;
  }
  point.realized_cloud_rate = static_cast<double>(cloud) / static_cast<double>(records.size());

  point.win_router = win_rate(records);
  point.win_baseline = random_win_rate_expectation(records, rate);

  std::vector<EvalRecord> oracle_world(records.begin(), records.end());
  const std::vector<Destination> oracle_dest = oracle_route(oracle_world, rate);
  for (size_t i = 0; i < oracle_world.size(); ++i) oracle_world[i].destination = oracle_dest[i];
  point.win_oracle = win_rate(oracle_world);

  point.delta_w_bar =
      normalized_win_rate_improvement(point.win_router, point.win_baseline, point.win_oracle);

  const std::vector<double> mu_edge = edge_means(records);
  const std::vector<double> mu_cloud = cloud_means(records);
  point.mu_routed = routed_means(records);
  point.dp_router =
      relative_performance_improvement(point.mu_routed, mu_edge, mu_cloud, denom_floor);
  point.dp_baseline = relative_performance_improvement(random_means_expectation(records, rate),
                                                       mu_edge, mu_cloud, denom_floor);
  return point;
}

SweepResult sweep(std::span<const EvalRecord> eval_records,
                  std::span<const double> calibration_predictions,
                  std::span<const double> grid, double denom_floor) {
  if (eval_records.empty()) {
    throw_error(ErrorCategory::invalid_input, "sweep needs a non-empty eval set");
  }
  for (const auto& rec : eval_records) {
    if (!rec.predicted_prs) {
      throw_error(ErrorCategory::invalid_input,
                  "sweep needs a predicted superiority for every record (missing on '" +
                      rec.id + "')");
    }
  }

  SweepResult result;
  result.mu_edge = edge_means(eval_records);
  result.mu_cloud = cloud_means(eval_records);

  std::vector<EvalRecord> working(eval_records.begin(), eval_records.end());
  for (double rate : grid) {
    const double alpha = strategy::calibrate_threshold(calibration_predictions, rate).alpha;
    for (auto& rec : working) {
      rec.destination = strategy::decide(*rec.predicted_prs, alpha);
    }
    SweepPoint point = score_records(working, rate, denom_floor);
    point.alpha = alpha;
    result.points.push_back(std::move(point));
  }
  return result;
}

std::vector<double> default_sweep_grid() {
  return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

}  // namespace prsr::eval

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prsr/core_math.hpp"
#include "prsr/strategy.hpp"

namespace prsr::eval {

using strategy::Destination;

// One routed prompt with everything needed for scoring: both quality vectors,
// the true superiority label, and (when a router produced it) the prediction.
struct EvalRecord {
  std::string id;
  math::QualityVector q_edge;
  math::QualityVector q_cloud;
  double true_prs = 0.5;
  std::optional<double> predicted_prs;
  Destination destination = Destination::edge;
};

// Fraction of records whose routed image matches or beats the cloud image.
// Cloud-routed records always win (identical image); edge-routed records win
// iff true_prs >= 0.5.
double win_rate(std::span<const EvalRecord> records);

// Fraction of records with true_prs >= 0.5, i.e. the all-edge win rate.
double edge_win_fraction(std::span<const EvalRecord> records);

// Sends the floor(rate * M) records with the lowest true superiority to the
// cloud (ties by record id). Maximizes the win rate at that rate.
std::vector<Destination> oracle_route(std::span<const EvalRecord> records, double rate);

// Seeded uniform choice of floor(rate * M) records for the cloud.
std::vector<Destination> random_route(std::span<const EvalRecord> records, double rate,
                                      uint64_t seed);

// Exact expectation of the random baseline's win rate at the realized cloud
// count floor(rate * M).
double random_win_rate_expectation(std::span<const EvalRecord> records, double rate);

// (w_router - w_baseline) / (w_oracle - w_baseline); nullopt when the oracle
// and the baseline coincide.
std::optional<double> normalized_win_rate_improvement(double w_router, double w_baseline,
                                                      double w_oracle);

// Mean over metrics of (mu_routed - mu_edge) / max(|mu_cloud - mu_edge|, floor).
double relative_performance_improvement(std::span<const double> mu_routed,
                                        std::span<const double> mu_edge,
                                        std::span<const double> mu_cloud,
                                        double denom_floor = 1e-6);

// Per-metric means of the quality the routed destinations realize.
std::vector<double> routed_means(std::span<const EvalRecord> records);
std::vector<double> edge_means(std::span<const EvalRecord> records);
std::vector<double> cloud_means(std::span<const EvalRecord> records);

// Expected random-baseline means at cloud share p: mu_edge + p*(mu_cloud-mu_edge).
std::vector<double> random_means_expectation(std::span<const EvalRecord> records, double rate);

struct CurvePoint {
  double rate = 0.0;      // routing rate p
  double delta_p = 0.0;   // relative performance improvement at that rate
};

// Routing rate the baseline (p_b = target) and the router (interpolated from
// its curve) need for the same improvement: (p_b - p_r) / p_b. nullopt when
// the router never reaches the target on the sweep, or target <= 0.
std::optional<double> cost_saving(std::span<const CurvePoint> router_curve, double dp_target);

struct SweepPoint {
  double rate = 0.0;                 // requested p
  double alpha = 0.0;                // calibrated threshold at that p
  double realized_cloud_rate = 0.0;  // actual fraction routed to the cloud
  double win_router = 0.0;
  double win_baseline = 0.0;         // closed-form random expectation
  double win_oracle = 0.0;
  std::optional<double> delta_w_bar;
  double dp_router = 0.0;
  double dp_baseline = 0.0;
  std::vector<double> mu_routed;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<double> mu_edge;
  std::vector<double> mu_cloud;
};

// Scores records whose destinations are already assigned against the random
// and oracle references at the given rate. alpha is left at zero; the sweep
// fills it in after calibration.
SweepPoint score_records(std::span<const EvalRecord> records, double rate,
                         double denom_floor = 1e-6);

// For each grid rate: calibrate alpha on the calibration predictions, route
// the eval records by their predictions, and score every metric.
SweepResult sweep(std::span<const EvalRecord> eval_records,
                  std::span<const double> calibration_predictions,
                  std::span<const double> grid, double denom_floor = 1e-6);

// Default grid 0, 0.1, ..., 1.0 merged with the reporting points
// 0.4, 0.5, 0.6, 0.7, 0.8.
std::vector<double> default_sweep_grid();

}  // namespace prsr::eval

#include "prsr/core_math.hpp"

#include <cmath>

#include "prsr/errors.hpp"

namespace prsr::math {

MetricSet::MetricSet(std::vector<MetricSpec> metrics) : metrics_(std::move(metrics)) {
  if (metrics_.empty()) {
    throw_error(ErrorCategory::invalid_input, "metric set must contain at least one metric");
  }
  double sum = 0.0;
  for (const auto& m : metrics_) {
    if (m.weight < 0.0 || m.weight > 1.0) {
      throw_error(ErrorCategory::invalid_input,
                  "metric weight out of [0,1] for metric '" + m.name + "'");
    }
    sum += m.weight;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw_error(ErrorCategory::invalid_input,
                "metric weights must sum to 1, got " + std::to_string(sum));
  }
}

std::vector<double> MetricSet::weights() const {
  std::vector<double> w;
  w.reserve(metrics_.size());
  for (const auto& m : metrics_) w.push_back(m.weight);
  return w;
}

std::vector<std::string> MetricSet::names() const {
  std::vector<std::string> n;
  n.reserve(metrics_.size());
  for (const auto& m : metrics_) n.push_back(m.name);
  return n;
}

MetricSet default_metric_set() {
  const double w = 0.1;
  return MetricSet({
      {"Definition", "High definition photo", "Low definition photo", w},
      {"Detail", "Detailed photo", "Lacking Detail photo", w},
      {"Clarity", "Clear photo", "Blurred photo", w},
      {"Sharpness", "Sharp", "Hazy", w},
      {"Harmony", "Visually harmonious", "Visually chaotic", w},
      {"Realism", "Realism", "Distortion", w},
      {"Color", "Color accurate", "Color distorted", w},
      {"Consistency", "Color consistency", "Color conflict", w},
      {"Layout", "Reasonable composition", "Chaotic composition", w},
      {"Integrity", "Object completion", "Object twisting", w},
  });
}

void validate_quality_vector(const QualityVector& q, size_t n, const std::string& context) {
  if (q.size() != n) {
    throw_error(ErrorCategory::dimension,
                context + ": quality vector has " + std::to_string(q.size()) +
                    " entries, expected " + std::to_string(n));
  }
  for (double v : q.values) {
    if (!(v > 0.0 && v < 1.0)) {
      throw_error(ErrorCategory::invalid_input,
                  context + ": quality value " + std::to_string(v) +
                      " outside the open interval (0,1)");
    }
  }
}

void DistanceParams::validate() const {
  if (!(temperature > 0.0)) {
    throw_error(ErrorCategory::invalid_input, "temperature must be positive");
  }
  if (!(denom_floor > 0.0)) {
    throw_error(ErrorCategory::invalid_input, "denom_floor must be positive");
  }
  if (mu_edge.size() != mu_cloud.size()) {
    throw_error(ErrorCategory::dimension, "mu_edge and mu_cloud lengths differ");
  }
}

double contrastive_quality(const SimilarityPair& sim) {
  if (!std::isfinite(sim.sim_positive) || !std::isfinite(sim.sim_negative)) {
    throw_error(ErrorCategory::invalid_input, "similarity values must be finite");
  }
  return sigmoid(sim.sim_positive - sim.sim_negative);
}

QualityVector quality_vector(std::span<const SimilarityPair> sims, size_t expected_n) {
  if (sims.size() != expected_n) {
    throw_error(ErrorCategory::dimension,
                "similarity list has " + std::to_string(sims.size()) +
                    " pairs, metric set has " + std::to_string(expected_n));
  }
  QualityVector q;
  q.values.reserve(sims.size());
  for (const auto& s : sims) q.values.push_back(contrastive_quality(s));
  return q;
}

double quality_distance(double q_edge, double q_cloud, size_t metric_index,
                        const DistanceParams& params) {
  params.validate();
  if (metric_index >= params.metric_count()) {
    throw_error(ErrorCategory::dimension,
                "metric index " + std::to_string(metric_index) + " out of range");
  }
  const double gap = std::fabs(params.mu_edge[metric_index] - params.mu_cloud[metric_index]);
  const double denom = params.temperature * std::max(gap, params.denom_floor);
  return sigmoid((q_edge - q_cloud) / denom);
}

double prs(const QualityVector& q_edge, const QualityVector& q_cloud,
           std::span<const double> weights, const DistanceParams& params) {
  const size_t n = weights.size();
  if (q_edge.size() != n || q_cloud.size() != n || params.metric_count() != n) {
    throw_error(ErrorCategory::dimension, "prs inputs disagree on metric count");
  }
  // Accumulated around the parity point: with the weights summing to 1 this
  // equals the plain weighted sum, and identical inputs give 0.5 exactly
  // instead of picking up the rounding of the weight total.
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    acc += weights[i] * (quality_distance(q_edge[i], q_cloud[i], i, params) - 0.5);
  }
  return acc + 0.5;
}

void ScaleSpaceSpec::validate() const {
  if (vocab_size <= 0 || max_len <= 0 || width <= 0 || height <= 0 || color_depth <= 0) {
    throw_error(ErrorCategory::invalid_input, "scale space fields must all be positive");
  }
}

double text_space_log(const ScaleSpaceSpec& spec) {
  spec.validate();
  return static_cast<double>(spec.max_len) * std::log(static_cast<double>(spec.vocab_size));
}

double image_space_log(const ScaleSpaceSpec& spec) {
  spec.validate();
  return static_cast<double>(spec.height) * static_cast<double>(spec.width) *
         static_cast<double>(spec.color_depth) * std::log(2.0);
}

double scale_ratio(const ScaleSpaceSpec& spec) {
  return image_space_log(spec) - text_space_log(spec);
}

std::vector<double> uniform_weights(size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace prsr::math

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace prsr::math {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One quality dimension: a positive/negative text pair plus its weight in the
// overall superiority score.
struct MetricSpec {
  std::string name;
  std::string positive_text;
  std::string negative_text;
  double weight = 0.0;
};

class MetricSet {
 public:
  explicit MetricSet(std::vector<MetricSpec> metrics);

  size_t size() const { return metrics_.size(); }
  const MetricSpec& at(size_t i) const { return metrics_.at(i); }
  const std::vector<MetricSpec>& metrics() const { return metrics_; }
  std::vector<double> weights() const;
  std::vector<std::string> names() const;

 private:
  std::vector<MetricSpec> metrics_;
};

// The ten-metric set the tool ships with (uniform weights).
MetricSet default_metric_set();

// Raw encoder similarities of one image against a metric's text pair.
struct SimilarityPair {
  double sim_positive = 0.0;
  double sim_negative = 0.0;
};

// Per-metric scores of one generated image, each in the open interval (0,1).
struct QualityVector {
  std::vector<double> values;

  size_t size() const { return values.size(); }
  double operator[](size_t i) const { return values[i]; }
};

// Throws if any entry falls outside (0,1) or the length disagrees with n.
void validate_quality_vector(const QualityVector& q, size_t n, const std::string& context);

// Normalization constants for quality distances: temperature, the guard on a
// vanishing mean gap, and the per-metric mean qualities of the two model sides.
struct DistanceParams {
  double temperature = 1.0;
  double denom_floor = 1e-6;
  std::vector<double> mu_edge;
  std::vector<double> mu_cloud;

  size_t metric_count() const { return mu_edge.size(); }
  void validate() const;
};

// sigma(sim_positive - sim_negative). Monotone up in the positive similarity,
// down in the negative one.
double contrastive_quality(const SimilarityPair& sim);

// Elementwise contrastive quality across a metric set of size expected_n.
QualityVector quality_vector(std::span<const SimilarityPair> sims, size_t expected_n);

// sigma((q_edge - q_cloud) / (temperature * max(|mu_edge_i - mu_cloud_i|, floor))).
double quality_distance(double q_edge, double q_cloud, size_t metric_index,
                        const DistanceParams& params);

// Weighted sum of per-metric quality distances. 0.5 means parity; above 0.5
// the edge image is relatively superior.
double prs(const QualityVector& q_edge, const QualityVector& q_cloud,
           std::span<const double> weights, const DistanceParams& params);

// Log-size comparison of a text input space against an image output space.
struct ScaleSpaceSpec {
  int64_t vocab_size = 0;
  int64_t max_len = 0;
  int64_t width = 0;
  int64_t height = 0;
  int64_t color_depth = 0;

  void validate() const;
};

// Log-domain sizes of the two spaces; nothing overflows.
double text_space_log(const ScaleSpaceSpec& spec);   // max_len * ln(vocab_size)
double image_space_log(const ScaleSpaceSpec& spec);  // H * W * color_depth * ln(2)

// image_space_log - text_space_log; positive means the image space is larger.
double scale_ratio(const ScaleSpaceSpec& spec);

// Uniform weights summing to 1.
std::vector<double> uniform_weights(size_t n);

}  // namespace prsr::math

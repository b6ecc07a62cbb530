#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prsr/core_math.hpp"

namespace prsr::data {

// One prompt with the qualities of its edge- and cloud-generated images.
// Raw similarity pairs are optional; when only those are present the quality
// vectors are derived at ingest time.
struct PromptRecord {
  std::string id;
  std::vector<int> tokens;
  math::QualityVector q_edge;
  math::QualityVector q_cloud;
  std::optional<std::vector<math::SimilarityPair>> sims_edge;
  std::optional<std::vector<math::SimilarityPair>> sims_cloud;
};

struct Dataset {
  int schema_version = 1;
  std::vector<std::string> metric_names;
  std::vector<PromptRecord> records;

  size_t metric_count() const { return metric_names.size(); }
};

// Supervision target: per-metric normalized distances plus their weighted sum.
struct PRSLabel {
  std::vector<double> distances;
  double prs = 0.0;
};

struct LabelSet {
  math::DistanceParams params;
  std::vector<double> weights;
  std::vector<std::string> ids;    // aligned with the dataset's record order
  std::vector<PRSLabel> labels;
};

// Line-delimited JSON: a header object carrying schema_version and the metric
// names, then one record object per line. Canonical form round-trips through
// ingest/export byte-exactly.
Dataset ingest(const std::filesystem::path& path);
void export_dataset(const Dataset& dataset, const std::filesystem::path& path);

struct Split {
  std::vector<size_t> train;
  std::vector<size_t> calibration;
  std::vector<size_t> eval;
};

// Seeded shuffle, then contiguous cuts at floor(frac * n); the eval split
// takes the remainder, so the three parts are disjoint and exhaustive.
Split split(const Dataset& dataset, double train_frac, double calibration_frac,
            double eval_frac, uint64_t seed);

// Distance normalizers use per-metric means over the training split only, so
// calibration and eval labels carry no information about their own splits.
LabelSet build_labels(const Dataset& dataset, std::span<const size_t> train_indices,
                      std::span<const double> weights, double temperature, double denom_floor);

void save_labels(const LabelSet& labels, const std::filesystem::path& path);
LabelSet load_labels(const std::filesystem::path& path);

// Per-metric generation model: quality = base + slope * difficulty + noise,
// clamped into (0,1). Cloud slopes sit above edge slopes so harder prompts
// favor the cloud side.
struct SyntheticMetricModel {
  double edge_base = 0.55;
  double cloud_base = 0.552;
  double edge_slope = -0.19;
  double cloud_slope = -0.08;
};

struct SyntheticSpec {
  int vocab_size = 512;
  int record_count = 1000;
  double difficulty_vocab_fraction = 0.2;  // leading ids that mark a prompt as hard
  double noise_scale = 0.09;
  int min_tokens = 6;
  int max_tokens = 16;
  std::vector<SyntheticMetricModel> metrics;  // empty = default ten-metric structure
  uint64_t seed = 1;

  void validate() const;
  std::vector<SyntheticMetricModel> metrics_or_default() const;
};

// Seeded generator. A record's latent difficulty is the realized fraction of
// difficulty tokens in its sequence, so the label signal is recoverable from
// the tokens alone.
Dataset generate_synthetic(const SyntheticSpec& spec, std::span<const std::string> metric_names);

}  // namespace prsr::data

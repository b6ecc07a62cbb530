#include "prsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "prsr/errors.hpp"
#include "prsr/rng.hpp"

namespace prsr::data {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line_no,
                             const std::string& what) {
  throw_error(ErrorCategory::parse, path.string() + ":" + std::to_string(line_no) + ": " + what);
}

std::vector<double> json_doubles(const ordered_json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.get<double>());
  return out;
}

std::vector<math::SimilarityPair> json_sims(const ordered_json& j) {
  std::vector<math::SimilarityPair> out;
  out.reserve(j.size());
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2) {
      throw std::runtime_error("similarity entries must be [positive, negative] pairs");
    }
    out.push_back({pair[0].get<double>(), pair[1].get<double>()});
  }
  return out;
}

ordered_json sims_to_json(const std::vector<math::SimilarityPair>& sims) {
  ordered_json arr = ordered_json::array();
  for (const auto& s : sims) arr.push_back(ordered_json::array({s.sim_positive, s.sim_negative}));
  return arr;
}

ordered_json record_to_json(const PromptRecord& rec) {
  ordered_json j;
  j["id"] = rec.id;
  j["tokens"] = rec.tokens;
  j["q_edge"] = rec.q_edge.values;
  j["q_cloud"] = rec.q_cloud.values;
  if (rec.sims_edge) j["sims_edge"] = sims_to_json(*rec.sims_edge);
  if (rec.sims_cloud) j["sims_cloud"] = sims_to_json(*rec.sims_cloud);
  return j;
}

// Either explicit qualities, raw similarity pairs, or both (explicit wins;
// disagreement beyond 1e-9 earns a warning).
math::QualityVector resolve_quality(const ordered_json& j, const char* quality_key,
                                    const std::optional<std::vector<math::SimilarityPair>>& sims,
                                    size_t n, const std::string& id) {
  const bool has_explicit = j.contains(quality_key);
  if (!has_explicit && !sims) {
    throw std::runtime_error(std::string("record needs ") + quality_key +
                             " or the matching similarity pairs");
  }
  if (!has_explicit) return math::quality_vector(*sims, n);

  math::QualityVector q{json_doubles(j.at(quality_key))};
  if (sims) {
    const math::QualityVector derived = math::quality_vector(*sims, n);
    for (size_t i = 0; i < std::min(q.size(), derived.size()); ++i) {
      if (std::fabs(q[i] - derived[i]) > 1e-9) {
        std::fprintf(stderr,
                     "warning: record %s: explicit %s[%zu]=%.12g disagrees with the value "
                     "derived from similarities (%.12g); keeping the explicit value\n",
                     id.c_str(), quality_key, i, q[i], derived[i]);
        break;
      }
    }
  }
  return q;
}

}  // namespace

Dataset ingest(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open dataset file: " + path.string());
  }

  Dataset dataset;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  bool have_header = false;

  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) parse_fail(path, line_no, "malformed JSON");

    if (!have_header) {
      if (!j.contains("schema_version") || !j.contains("metrics")) {
        parse_fail(path, line_no, "first line must be a header with schema_version and metrics");
      }
      try {
        dataset.schema_version = j.at("schema_version").get<int>();
        dataset.metric_names = j.at("metrics").get<std::vector<std::string>>();
      } catch (const std::exception& e) {
        parse_fail(path, line_no, e.what());
      }
      if (dataset.schema_version != 1) {
        parse_fail(path, line_no,
                   "unsupported schema_version " + std::to_string(dataset.schema_version));
      }
      if (dataset.metric_names.empty()) parse_fail(path, line_no, "metrics list is empty");
      have_header = true;
      continue;
    }

    PromptRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      rec.tokens = j.at("tokens").get<std::vector<int>>();
      if (j.contains("sims_edge")) rec.sims_edge = json_sims(j.at("sims_edge"));
      if (j.contains("sims_cloud")) rec.sims_cloud = json_sims(j.at("sims_cloud"));
      const size_t n = dataset.metric_names.size();
      rec.q_edge = resolve_quality(j, "q_edge", rec.sims_edge, n, rec.id);
      rec.q_cloud = resolve_quality(j, "q_cloud", rec.sims_cloud, n, rec.id);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      parse_fail(path, line_no, e.what());
    }

    if (rec.tokens.empty()) parse_fail(path, line_no, "record has an empty token list");
    for (int t : rec.tokens) {
      if (t < 0) parse_fail(path, line_no, "negative token id");
    }
    math::validate_quality_vector(rec.q_edge, dataset.metric_names.size(),
                                  "record " + rec.id + " q_edge");
    math::validate_quality_vector(rec.q_cloud, dataset.metric_names.size(),
                                  "record " + rec.id + " q_cloud");
    if (!seen_ids.insert(rec.id).second) {
      throw_error(ErrorCategory::data,
                  path.string() + ":" + std::to_string(line_no) + ": duplicate record id '" +
                      rec.id + "'");
    }
    dataset.records.push_back(std::move(rec));
  }
  return dataset;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open dataset file for writing: " + path.string());
  }
  if (!dataset.metric_names.empty() || !dataset.records.empty()) {
    ordered_json header;
    header["schema_version"] = dataset.schema_version;
    header["metrics"] = dataset.metric_names;
    file << header.dump() << "\n";
  }
  for (const auto& rec : dataset.records) {
    file << record_to_json(rec).dump() << "\n";
  }
  if (!file) {
    throw_error(ErrorCategory::io, "failed writing dataset file: " + path.string());
  }
}

Split split(const Dataset& dataset, double train_frac, double calibration_frac,
            double eval_frac, uint64_t seed) {
  if (train_frac < 0.0 || calibration_frac < 0.0 || eval_frac < 0.0 ||
      std::fabs(train_frac + calibration_frac + eval_frac - 1.0) > 1e-9) {
    throw_error(ErrorCategory::config, "split fractions must be non-negative and sum to 1");
  }
  std::vector<size_t> order(dataset.records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  const size_t m = order.size();
  const size_t n_train = static_cast<size_t>(std::floor(train_frac * static_cast<double>(m)));
  const size_t n_cal = static_cast<size_t>(std::floor(calibration_frac * static_cast<double>(m)));

  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<ptrdiff_t>(n_train));
  s.calibration.assign(order.begin() + static_cast<ptrdiff_t>(n_train),
                       order.begin() + static_cast<ptrdiff_t>(n_train + n_cal));
  s.eval.assign(order.begin() + static_cast<ptrdiff_t>(n_train + n_cal), order.end());
  return s;
}

LabelSet build_labels(const Dataset& dataset, std::span<const size_t> train_indices,
                      std::span<const double> weights, double temperature, double denom_floor) {
  const size_t n = dataset.metric_count();
  if (weights.size() != n) {
    throw_error(ErrorCategory::dimension, "weight count must match the dataset's metric count");
  }
  if (dataset.records.empty()) {
    throw_error(ErrorCategory::invalid_input, "cannot label an empty dataset");
  }
  if (train_indices.empty()) {
    throw_error(ErrorCategory::invalid_input, "training split is empty, means are undefined");
  }

  LabelSet out;
  out.params.temperature = temperature;
  out.params.denom_floor = denom_floor;
  out.params.mu_edge.assign(n, 0.0);
  out.params.mu_cloud.assign(n, 0.0);
  out.weights.assign(weights.begin(), weights.end());

  for (size_t idx : train_indices) {
    const PromptRecord& rec = dataset.records.at(idx);
    for (size_t i = 0; i < n; ++i) {
      out.params.mu_edge[i] += rec.q_edge[i];
      out.params.mu_cloud[i] += rec.q_cloud[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(train_indices.size());
  for (size_t i = 0; i < n; ++i) {
    out.params.mu_edge[i] *= inv;
    out.params.mu_cloud[i] *= inv;
  }

  out.ids.reserve(dataset.records.size());
  out.labels.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    PRSLabel label;
    label.distances.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      label.distances.push_back(
          math::quality_distance(rec.q_edge[i], rec.q_cloud[i], i, out.params));
    }
    label.prs = math::prs(rec.q_edge, rec.q_cloud, weights, out.params);
    out.ids.push_back(rec.id);
    out.labels.push_back(std::move(label));
  }
  return out;
}

void save_labels(const LabelSet& labels, const std::filesystem::path& path) {
  ordered_json j;
  j["temperature"] = labels.params.temperature;
  j["denom_floor"] = labels.params.denom_floor;
  j["mu_edge"] = labels.params.mu_edge;
  j["mu_cloud"] = labels.params.mu_cloud;
  j["weights"] = labels.weights;
  ordered_json entries = ordered_json::array();
  for (size_t i = 0; i < labels.labels.size(); ++i) {
    ordered_json e;
    e["id"] = labels.ids[i];
    e["distances"] = labels.labels[i].distances;
    e["prs"] = labels.labels[i].prs;
    entries.push_back(std::move(e));
  }
  j["labels"] = std::move(entries);

  std::ofstream file(path, std::ios::trunc);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open label file for writing: " + path.string());
  }
  file << j.dump() << "\n";
  if (!file) {
    throw_error(ErrorCategory::io, "failed writing label file: " + path.string());
  }
}

LabelSet load_labels(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open label file: " + path.string());
  }
  ordered_json j = ordered_json::parse(file, nullptr, false);
  if (j.is_discarded()) {
    throw_error(ErrorCategory::parse, path.string() + ": malformed JSON");
  }
  LabelSet out;
  try {
    out.params.temperature = j.at("temperature").get<double>();
    out.params.denom_floor = j.at("denom_floor").get<double>();
    out.params.mu_edge = j.at("mu_edge").get<std::vector<double>>();
    out.params.mu_cloud = j.at("mu_cloud").get<std::vector<double>>();
    out.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& e : j.at("labels")) {
      out.ids.push_back(e.at("id").get<std::string>());
      PRSLabel label;
      label.distances = e.at("distances").get<std::vector<double>>();
      label.prs = e.at("prs").get<double>();
      out.labels.push_back(std::move(label));
    }
  } catch (const std::exception& e) {
    throw_error(ErrorCategory::parse, path.string() + ": " + e.what());
  }
  out.params.validate();
  return out;
}

void SyntheticSpec::validate() const {
  if (vocab_size < 2) throw_error(ErrorCategory::config, "synthetic vocab_size must be >= 2");
  if (record_count < 0) throw_error(ErrorCategory::config, "synthetic record_count must be >= 0");
  if (!(difficulty_vocab_fraction > 0.0 && difficulty_vocab_fraction < 1.0)) {
    throw_error(ErrorCategory::config, "difficulty_vocab_fraction must lie in (0, 1)");
  }
  if (noise_scale < 0.0) throw_error(ErrorCategory::config, "noise_scale must be >= 0");
  if (min_tokens < 1 || max_tokens < min_tokens) {
    throw_error(ErrorCategory::config, "token length bounds must satisfy 1 <= min <= max");
  }
}

std::vector<SyntheticMetricModel> SyntheticSpec::metrics_or_default() const {
  if (!metrics.empty()) return metrics;
  // The cloud-minus-edge slope gap (0.11) against the per-metric noise is
  // tuned so that a sizable minority of prompts genuinely favor the edge
  // while difficulty still dominates the mean quality gap.
  std::vector<SyntheticMetricModel> out;
  out.reserve(10);
  for (int i = 0; i < 10; ++i) {
    SyntheticMetricModel m;
    m.edge_base = 0.50 + 0.03 * static_cast<double>((i * 3) % 5);
    m.cloud_base = m.edge_base + 0.002;
    m.edge_slope = -0.19 + 0.01 * static_cast<double>(i % 3);
    m.cloud_slope = m.edge_slope + 0.11;
    out.push_back(m);
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::span<const std::string> metric_names) {
  spec.validate();
  const std::vector<SyntheticMetricModel> models = spec.metrics_or_default();
  if (models.size() != metric_names.size()) {
    throw_error(ErrorCategory::dimension,
                "synthetic metric model count must match the metric name count");
  }

  Dataset dataset;
  dataset.metric_names.assign(metric_names.begin(), metric_names.end());

  const int cut = std::clamp(
      static_cast<int>(std::floor(spec.difficulty_vocab_fraction * spec.vocab_size)), 1,
      spec.vocab_size - 1);
  Rng rng(spec.seed);
  const double lo = 1e-4, hi = 1.0 - 1e-4;

  dataset.records.reserve(static_cast<size_t>(spec.record_count));
  for (int r = 0; r < spec.record_count; ++r) {
    PromptRecord rec;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "r%06d", r);
    rec.id = idbuf;

    const int len = spec.min_tokens + rng.below_int(spec.max_tokens - spec.min_tokens + 1);
    const double target_difficulty = rng.uniform();
    int hard = 0;
    rec.tokens.reserve(static_cast<size_t>(len));
    for (int t = 0; t < len; ++t) {
      if (rng.uniform() < target_difficulty) {
        rec.tokens.push_back(rng.below_int(cut));
        ++hard;
      } else {
        rec.tokens.push_back(cut + rng.below_int(spec.vocab_size - cut));
      }
    }
    const double difficulty = static_cast<double>(hard) / static_cast<double>(len);

    rec.q_edge.values.reserve(models.size());
    rec.q_cloud.values.reserve(models.size());
    for (const auto& m : models) {
      const double qe = m.edge_base + m.edge_slope * difficulty + rng.normal(0.0, spec.noise_scale);
      const double qc = m.cloud_base + m.cloud_slope * difficulty + rng.normal(0.0, spec.noise_scale);
      rec.q_edge.values.push_back(std::clamp(qe, lo, hi));
      rec.q_cloud.values.push_back(std::clamp(qc, lo, hi));
    }
    dataset.records.push_back(std::move(rec));
  }
  return dataset;
}

}  // namespace prsr::data

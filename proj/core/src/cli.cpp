#include "prsr/cli.hpp"

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "prsr/data.hpp"
#include "prsr/errors.hpp"
#include "prsr/eval.hpp"
#include "prsr/router.hpp"
#include "prsr/service.hpp"
#include "prsr/strategy.hpp"
#include "prsr/tables.hpp"

namespace prsr::cli {

namespace {

using nlohmann::ordered_json;

int log_level() {
  const char* v = std::getenv("PRSR_LOG");
  if (!v || !*v) return 1;
  return std::atoi(v);
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "prsr: %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::fprintf(stderr, "prsr: %s\n", msg.c_str());
}

struct Options {
  // shared
  uint64_t seed = 42;
  std::string dataset;
  std::string labels_path;
  std::string checkpoint;
  std::string policy;
  std::string out;
  std::string metrics_file;
  std::string split = "0.7,0.15,0.15";

  // gen-data
  int count = 1000;
  int vocab_size = 512;
  double difficulty_fraction = 0.2;
  double noise = 0.09;
  int min_tokens = 6;
  int max_tokens = 16;

  // label
  double gamma = 1.0;
  double denom_floor = 1e-6;

  // train
  int epochs = 10;
  double learning_rate = 2e-5;
  double weight_decay = 0.0;
  int batch_size = 16;
  int hidden_dim = 64;
  int layers = 2;
  int attn_heads = 4;
  int experts = 0;  // 0 = one per metric
  int tokens_per_expert = 4;
  int expert_rank = 8;
  int model_max_tokens = 77;
  int model_vocab = 0;  // 0 = derive from the dataset

  // calibrate
  double rate = -1.0;
  double budget_fee = -1.0;
  double cloud_cost = -1.0;
  double budget_latency_total = -1.0;
  double budget_latency_cloud = -1.0;
  double budget_latency_edge = -1.0;
  double budget_latency_router = -1.0;

  // evaluate
  std::string decisions;
  double eval_rate = -1.0;

  // sweep
  std::string grid;
  std::string dp_targets = "0.4,0.5,0.6,0.7,0.8";

  // reproduce-tables
  std::string means;

  // serve
  std::string bind = "127.0.0.1:7077";
  bool hard_admission = false;
};

std::vector<double> parse_csv_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw_error(ErrorCategory::config,
                  std::string(what) + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) {
    throw_error(ErrorCategory::config, std::string(what) + ": no values given");
  }
  return out;
}

struct SplitFracs {
  double train = 0.7, calibration = 0.15, eval = 0.15;
};

SplitFracs parse_split(const std::string& s) {
  const std::vector<double> fracs = parse_csv_doubles(s, "--split");
  if (fracs.size() != 3) {
    throw_error(ErrorCategory::config, "--split needs exactly three fractions");
  }
  return {fracs[0], fracs[1], fracs[2]};
}

math::MetricSet load_metric_file(const std::string& path) {
  std::ifstream file(path);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open metrics file: " + path);
  }
  ordered_json j = ordered_json::parse(file, nullptr, false);
  if (j.is_discarded()) {
    throw_error(ErrorCategory::parse, path + ": malformed JSON");
  }
  std::vector<math::MetricSpec> metrics;
  try {
    for (const auto& mj : j.at("metrics")) {
      math::MetricSpec m;
      m.name = mj.at("name").get<std::string>();
      m.positive_text = mj.at("positive").get<std::string>();
      m.negative_text = mj.at("negative").get<std::string>();
      m.weight = mj.at("weight").get<double>();
      metrics.push_back(std::move(m));
    }
  } catch (const std::exception& e) {
    throw_error(ErrorCategory::parse, path + ": " + e.what());
  }
  return math::MetricSet(std::move(metrics));
}

// Weights for a dataset: the user-supplied metric file when given, uniform
// over the dataset's metric count otherwise.
std::vector<double> weights_for(const Options& o, const data::Dataset& dataset) {
  if (!o.metrics_file.empty()) {
    const math::MetricSet set = load_metric_file(o.metrics_file);
    if (set.size() != dataset.metric_count()) {
      throw_error(ErrorCategory::config, "metric file has " + std::to_string(set.size()) +
                                             " metrics, dataset has " +
                                             std::to_string(dataset.metric_count()));
    }
    return set.weights();
  }
  return math::uniform_weights(dataset.metric_count());
}

void check_labels_match(const data::Dataset& dataset, const data::LabelSet& labels) {
  if (labels.ids.size() != dataset.records.size()) {
    throw_error(ErrorCategory::data, "label sidecar covers " + std::to_string(labels.ids.size()) +
                                         " records, dataset has " +
                                         std::to_string(dataset.records.size()));
  }
  for (size_t i = 0; i < labels.ids.size(); ++i) {
    if (labels.ids[i] != dataset.records[i].id) {
      throw_error(ErrorCategory::data,
                  "label sidecar order diverges from the dataset at record " + labels.ids[i]);
    }
  }
}

data::Dataset load_dataset(const std::string& path) { return data::ingest(path); }

data::LabelSet load_label_sidecar(const std::string& path) { return data::load_labels(path); }

std::vector<double> predictions_for(const router::Checkpoint& ckpt, const data::Dataset& dataset,
                                    std::span<const size_t> indices) {
  std::vector<double> preds;
  preds.reserve(indices.size());
  for (size_t idx : indices) {
    preds.push_back(router::forward(ckpt, dataset.records[idx].tokens).prs);
  }
  return preds;
}

std::vector<eval::EvalRecord> eval_records_for(const data::Dataset& dataset,
                                               const data::LabelSet& labels,
                                               std::span<const size_t> indices) {
  std::vector<eval::EvalRecord> records;
  records.reserve(indices.size());
  for (size_t idx : indices) {
    const data::PromptRecord& rec = dataset.records[idx];
    eval::EvalRecord e;
    e.id = rec.id;
    e.q_edge = rec.q_edge;
    e.q_cloud = rec.q_cloud;
    e.true_prs = labels.labels[idx].prs;
    records.push_back(std::move(e));
  }
  return records;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open output file: " + path);
  }
  file << content;
  if (!file) {
    throw_error(ErrorCategory::io, "failed writing output file: " + path);
  }
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void log_resolved(const std::string& subcommand, const ordered_json& flags) {
  ordered_json j;
  j["subcommand"] = subcommand;
  j["seed_default"] = 42;
  j["config"] = flags;
  log_info("resolved config " + j.dump());
}

// ---- subcommand handlers ----

int run_gen_data(const Options& o) {
  data::SyntheticSpec spec;
  spec.vocab_size = o.vocab_size;
  spec.record_count = o.count;
  spec.difficulty_vocab_fraction = o.difficulty_fraction;
  spec.noise_scale = o.noise;
  spec.min_tokens = o.min_tokens;
  spec.max_tokens = o.max_tokens;
  spec.seed = o.seed;

  std::vector<std::string> names;
  if (!o.metrics_file.empty()) {
    names = load_metric_file(o.metrics_file).names();
  } else {
    names = math::default_metric_set().names();
  }

  ordered_json flags{{"out", o.out},        {"count", o.count},
                     {"vocab_size", o.vocab_size}, {"difficulty_fraction", o.difficulty_fraction},
                     {"noise", o.noise},    {"min_tokens", o.min_tokens},
                     {"max_tokens", o.max_tokens}, {"seed", o.seed},
                     {"metrics", names}};
  log_resolved("gen-data", flags);

  const data::Dataset dataset = data::generate_synthetic(spec, names);
  data::export_dataset(dataset, o.out);
  log_info("wrote " + std::to_string(dataset.records.size()) + " records to " + o.out);
  return 0;
}

int run_label(const Options& o) {
  const data::Dataset dataset = load_dataset(o.dataset);
  const SplitFracs fracs = parse_split(o.split);
  const std::vector<double> weights = weights_for(o, dataset);

  ordered_json flags{{"dataset", o.dataset}, {"out", o.out},   {"gamma", o.gamma},
                     {"denom_floor", o.denom_floor}, {"split", o.split}, {"seed", o.seed},
                     {"weights", weights}};
  log_resolved("label", flags);

  const data::Split split =
      data::split(dataset, fracs.train, fracs.calibration, fracs.eval, o.seed);
  const data::LabelSet labels =
      data::build_labels(dataset, split.train, weights, o.gamma, o.denom_floor);
  data::save_labels(labels, o.out);
  log_info("labeled " + std::to_string(labels.labels.size()) + " records, train split " +
           std::to_string(split.train.size()));
  return 0;
}

int run_train(const Options& o) {
  const data::Dataset dataset = load_dataset(o.dataset);
  const data::LabelSet labels = load_label_sidecar(o.labels_path);
  check_labels_match(dataset, labels);
  const SplitFracs fracs = parse_split(o.split);
  const data::Split split =
      data::split(dataset, fracs.train, fracs.calibration, fracs.eval, o.seed);
  if (split.train.empty()) {
    throw_error(ErrorCategory::invalid_input, "training split is empty");
  }

  int max_id = 0;
  for (const auto& rec : dataset.records) {
    for (int t : rec.tokens) max_id = std::max(max_id, t);
  }

  router::RouterConfig config;
  config.vocab_size = o.model_vocab > 0 ? o.model_vocab : max_id + 1;
  config.hidden_dim = o.hidden_dim;
  config.metric_count = static_cast<int>(dataset.metric_count());
  config.expert_count = o.experts > 0 ? o.experts : config.metric_count;
  config.tokens_per_expert = o.tokens_per_expert;
  config.expert_rank = o.expert_rank;
  config.expert_out_dim = o.hidden_dim;
  config.max_tokens = o.model_max_tokens;
  config.layer_count = o.layers;
  config.attn_heads = o.attn_heads;
  config.temperature = labels.params.temperature;
  config.metric_weights = labels.weights;
  config.learning_rate = o.learning_rate;
  config.weight_decay = o.weight_decay;
  config.batch_size = o.batch_size;
  config.epochs = o.epochs;
  config.seed = o.seed;
  config.validate();

  ordered_json flags{{"dataset", o.dataset},
                     {"labels", o.labels_path},
                     {"out", o.out},
                     {"split", o.split},
                     {"seed", o.seed},
                     {"vocab_size", config.vocab_size},
                     {"hidden_dim", config.hidden_dim},
                     {"experts", config.expert_count},
                     {"tokens_per_expert", config.tokens_per_expert},
                     {"expert_rank", config.expert_rank},
                     {"layers", config.layer_count},
                     {"attn_heads", config.attn_heads},
                     {"max_tokens", config.max_tokens},
                     {"learning_rate", config.learning_rate},
                     {"weight_decay", config.weight_decay},
                     {"batch_size", config.batch_size},
                     {"epochs", config.epochs}};
  log_resolved("train", flags);

  std::vector<router::TrainExample> examples;
  examples.reserve(split.train.size());
  for (size_t idx : split.train) {
    examples.push_back({dataset.records[idx].tokens, labels.labels[idx].distances});
  }

  const router::Checkpoint ckpt = router::train(examples, config);
  for (size_t e = 0; e < ckpt.loss_history.size(); ++e) {
    log_debug("epoch " + std::to_string(e) + " loss " + std::to_string(ckpt.loss_history[e]));
  }
  router::save_checkpoint(ckpt, o.out);
  log_info("trained " + std::to_string(ckpt.epochs_trained) + " epochs, final loss " +
           (ckpt.loss_history.empty() ? std::string("n/a")
                                      : std::to_string(ckpt.loss_history.back())) +
           ", checkpoint " + o.out);
  return 0;
}

int run_calibrate(const Options& o) {
  const bool has_rate = o.rate >= 0.0;
  const bool has_budget = o.budget_fee >= 0.0 || o.cloud_cost >= 0.0 ||
                          o.budget_latency_total >= 0.0 || o.budget_latency_cloud >= 0.0 ||
                          o.budget_latency_edge >= 0.0 || o.budget_latency_router >= 0.0;
  if (has_rate && has_budget) {
    throw_error(ErrorCategory::config, "--rate conflicts with budget flags; give one or the other");
  }
  if (!has_rate && !has_budget) {
    throw_error(ErrorCategory::config, "calibrate needs --rate or budget flags");
  }

  double rate_bound = o.rate;
  if (has_budget) {
    strategy::Budget budget;
    budget.cloud_cost = std::max(o.cloud_cost, 0.0);
    budget.fee_budget = std::max(o.budget_fee, 0.0);
    budget.latency_budget = o.budget_latency_total >= 0.0
                                ? o.budget_latency_total
                                : std::numeric_limits<double>::infinity();
    budget.cloud_latency = std::max(o.budget_latency_cloud, 0.0);
    budget.edge_latency = std::max(o.budget_latency_edge, 0.0);
    budget.router_latency = std::max(o.budget_latency_router, 0.0);
    rate_bound = strategy::budget_to_rate(budget);
    log_info("budget reduces to rate bound " + std::to_string(rate_bound));
  }

  const data::Dataset dataset = load_dataset(o.dataset);
  const data::LabelSet labels = load_label_sidecar(o.labels_path);
  check_labels_match(dataset, labels);
  const SplitFracs fracs = parse_split(o.split);
  const data::Split split =
      data::split(dataset, fracs.train, fracs.calibration, fracs.eval, o.seed);
  const router::Checkpoint ckpt = router::load_checkpoint(o.checkpoint);

  ordered_json flags{{"checkpoint", o.checkpoint}, {"dataset", o.dataset},
                     {"labels", o.labels_path},    {"split", o.split},
                     {"seed", o.seed},             {"rate_bound", rate_bound},
                     {"out", o.out}};
  log_resolved("calibrate", flags);

  const std::vector<double> preds = predictions_for(ckpt, dataset, split.calibration);
  const strategy::RoutingPolicy policy = strategy::calibrate_threshold(preds, rate_bound);
  strategy::save_policy(policy, o.checkpoint, o.out);
  log_info("alpha " + std::to_string(policy.alpha) + " for rate bound " +
           std::to_string(policy.rate_bound) + " over " + std::to_string(preds.size()) +
           " calibration records");
  return 0;
}

int run_route(const Options& o) {
  const data::Dataset dataset = load_dataset(o.dataset);
  const router::Checkpoint ckpt = router::load_checkpoint(o.checkpoint);
  const strategy::LoadedPolicy loaded = strategy::load_policy(o.policy);

  ordered_json flags{{"checkpoint", o.checkpoint}, {"policy", o.policy},
                     {"dataset", o.dataset},       {"out", o.out},
                     {"alpha", loaded.policy.alpha}};
  log_resolved("route", flags);

  std::string out;
  size_t cloud = 0;
  for (const auto& rec : dataset.records) {
    const strategy::RoutingDecision decision =
        strategy::route(rec.id, ckpt, rec.tokens, loaded.policy);
    if (decision.destination == strategy::Destination::cloud) ++cloud;
    out += strategy::decision_to_json_line(decision);
    out += '\n';
  }
  write_text_file(o.out, out);
  log_info("routed " + std::to_string(dataset.records.size()) + " records, " +
           std::to_string(cloud) + " to the cloud");
  return 0;
}

struct DecisionEntry {
  strategy::Destination destination;
  double prs;
};

std::map<std::string, DecisionEntry> load_decisions(const std::string& path) {
  std::ifstream file(path);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open decisions file: " + path);
  }
  std::map<std::string, DecisionEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw_error(ErrorCategory::parse, path + ":" + std::to_string(line_no) + ": malformed JSON");
    }
    try {
      const std::string id = j.at("id").get<std::string>();
      const std::string route = j.at("route").get<std::string>();
      if (route != "edge" && route != "cloud") {
        throw std::runtime_error("route must be 'edge' or 'cloud'");
      }
      DecisionEntry entry{route == "cloud" ? strategy::Destination::cloud
                                           : strategy::Destination::edge,
                          j.at("prs").get<double>()};
      if (!out.emplace(id, entry).second) {
        throw_error(ErrorCategory::data,
                    path + ":" + std::to_string(line_no) + ": duplicate decision for id " + id);
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw_error(ErrorCategory::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

int run_evaluate(const Options& o) {
  const bool has_decisions = !o.decisions.empty();
  const bool has_model = !o.checkpoint.empty() || !o.policy.empty();
  if (has_decisions && has_model) {
    throw_error(ErrorCategory::config, "--decisions conflicts with --checkpoint/--policy");
  }
  if (!has_decisions && (o.checkpoint.empty() || o.policy.empty())) {
    throw_error(ErrorCategory::config,
                "evaluate needs --decisions or both --checkpoint and --policy");
  }

  const data::Dataset dataset = load_dataset(o.dataset);
  const data::LabelSet labels = load_label_sidecar(o.labels_path);
  check_labels_match(dataset, labels);
  const SplitFracs fracs = parse_split(o.split);
  const data::Split split =
      data::split(dataset, fracs.train, fracs.calibration, fracs.eval, o.seed);

  std::vector<eval::EvalRecord> records = eval_records_for(dataset, labels, split.eval);
  if (records.empty()) {
    throw_error(ErrorCategory::invalid_input, "eval split is empty");
  }

  double rate = o.eval_rate;
  if (has_decisions) {
    const auto decisions = load_decisions(o.decisions);
    for (auto& rec : records) {
      const auto it = decisions.find(rec.id);
      if (it == decisions.end()) {
        throw_error(ErrorCategory::data, "decisions file lacks eval record " + rec.id);
      }
      rec.destination = it->second.destination;
      rec.predicted_prs = it->second.prs;
    }
  } else {
    const router::Checkpoint ckpt = router::load_checkpoint(o.checkpoint);
    const strategy::LoadedPolicy loaded = strategy::load_policy(o.policy);
    size_t i = 0;
    for (size_t idx : split.eval) {
      const strategy::RoutingDecision decision = strategy::route(
          records[i].id, ckpt, dataset.records[idx].tokens, loaded.policy);
      records[i].destination = decision.destination;
      records[i].predicted_prs = decision.predicted_prs;
      ++i;
    }
    if (rate < 0.0) rate = loaded.policy.rate_bound;
  }
  if (rate < 0.0) {
    size_t cloud = 0;
    for (const auto& rec : records) {
      if (rec.destination == eval::Destination::cloud) ++cloud;
    }
    rate = static_cast<double>(cloud) / static_cast<double>(records.size());
  }

  ordered_json flags{{"dataset", o.dataset}, {"labels", o.labels_path}, {"split", o.split},
                     {"seed", o.seed},       {"rate", rate},
                     {"decisions", o.decisions}, {"checkpoint", o.checkpoint},
                     {"policy", o.policy},   {"out", o.out}};
  log_resolved("evaluate", flags);

  const eval::SweepPoint score =
      eval::score_records(records, rate, labels.params.denom_floor);
  const std::vector<double> mu_edge = eval::edge_means(records);
  const std::vector<double> mu_cloud = eval::cloud_means(records);
  const std::vector<double> mu_random = eval::random_means_expectation(records, rate);

  std::vector<eval::EvalRecord> oracle_world = records;
  const std::vector<eval::Destination> oracle_dest = eval::oracle_route(oracle_world, rate);
  for (size_t i = 0; i < oracle_world.size(); ++i) oracle_world[i].destination = oracle_dest[i];
  const std::vector<double> mu_oracle = eval::routed_means(oracle_world);

  // Summary table mirroring the per-metric layout of the published tables:
  // one row per reference router, metric columns, then the aggregates.
  std::string csv = "row";
  for (const auto& name : dataset.metric_names) csv += "," + name;
  csv += ",delta_p_percent,win_rate,delta_w_bar\n";

  auto add_row = [&](const std::string& name, const std::vector<double>& means, double dp,
                     double win, const std::optional<double>& dwbar) {
    csv += name;
    for (double m : means) csv += "," + fmt(m);
    csv += "," + fmt(dp * 100.0);
    csv += "," + fmt(win);
    csv += ",";
    if (dwbar) csv += fmt(*dwbar);
    csv += "\n";
  };

  const double floor = labels.params.denom_floor;
  add_row("edge", mu_edge,
          eval::relative_performance_improvement(mu_edge, mu_edge, mu_cloud, floor),
          eval::edge_win_fraction(records), std::nullopt);
  add_row("cloud", mu_cloud,
          eval::relative_performance_improvement(mu_cloud, mu_edge, mu_cloud, floor), 1.0,
          std::nullopt);
  add_row("random", mu_random, score.dp_baseline, score.win_baseline, std::nullopt);
  add_row("oracle", mu_oracle,
          eval::relative_performance_improvement(mu_oracle, mu_edge, mu_cloud, floor),
          score.win_oracle, std::nullopt);
  add_row("router", score.mu_routed, score.dp_router, score.win_router, score.delta_w_bar);

  if (!o.out.empty()) write_text_file(o.out, csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int run_sweep(const Options& o) {
  const data::Dataset dataset = load_dataset(o.dataset);
  const data::LabelSet labels = load_label_sidecar(o.labels_path);
  check_labels_match(dataset, labels);
  const SplitFracs fracs = parse_split(o.split);
  const data::Split split =
      data::split(dataset, fracs.train, fracs.calibration, fracs.eval, o.seed);
  const router::Checkpoint ckpt = router::load_checkpoint(o.checkpoint);

  std::vector<double> grid =
      o.grid.empty() ? eval::default_sweep_grid() : parse_csv_doubles(o.grid, "--grid");
  std::sort(grid.begin(), grid.end());

  ordered_json flags{{"checkpoint", o.checkpoint}, {"dataset", o.dataset},
                     {"labels", o.labels_path},    {"split", o.split},
                     {"seed", o.seed},             {"grid", grid},
                     {"dp_targets", o.dp_targets}, {"out", o.out}};
  log_resolved("sweep", flags);

  const std::vector<double> calibration_preds = predictions_for(ckpt, dataset, split.calibration);
  std::vector<eval::EvalRecord> records = eval_records_for(dataset, labels, split.eval);
  {
    size_t i = 0;
    for (size_t idx : split.eval) {
      records[i].predicted_prs = router::forward(ckpt, dataset.records[idx].tokens).prs;
      ++i;
    }
  }

  const eval::SweepResult result =
      eval::sweep(records, calibration_preds, grid, labels.params.denom_floor);

  std::string summary =
      "p,alpha,realized_cloud_rate,win_router,win_baseline,win_oracle,delta_w_bar,"
      "dp_router,dp_baseline\n";
  for (const auto& pt : result.points) {
    summary += fmt(pt.rate) + "," + fmt(pt.alpha) + "," + fmt(pt.realized_cloud_rate) + "," +
               fmt(pt.win_router) + "," + fmt(pt.win_baseline) + "," + fmt(pt.win_oracle) + ",";
    if (pt.delta_w_bar) summary += fmt(*pt.delta_w_bar);
    summary += "," + fmt(pt.dp_router) + "," + fmt(pt.dp_baseline) + "\n";
  }

  std::string metrics = "p,metric,mu_routed,mu_edge,mu_cloud\n";
  for (const auto& pt : result.points) {
    for (size_t i = 0; i < dataset.metric_names.size(); ++i) {
      metrics += fmt(pt.rate) + "," + dataset.metric_names[i] + "," + fmt(pt.mu_routed[i]) + "," +
                 fmt(result.mu_edge[i]) + "," + fmt(result.mu_cloud[i]) + "\n";
    }
  }

  std::vector<eval::CurvePoint> curve;
  curve.reserve(result.points.size());
  for (const auto& pt : result.points) {
    curve.push_back({pt.realized_cloud_rate, pt.dp_router});
  }
  std::string cost = "dp_target,p_router,p_baseline,gamma\n";
  for (double target : parse_csv_doubles(o.dp_targets, "--dp-targets")) {
    const std::optional<double> gamma = eval::cost_saving(curve, target);
    cost += fmt(target) + ",";
    if (gamma) {
      cost += fmt(target * (1.0 - *gamma)) + "," + fmt(target) + "," + fmt(*gamma) + "\n";
    } else {
      cost += "NA," + fmt(target) + ",NA\n";
    }
  }

  write_text_file(o.out + "_summary.csv", summary);
  write_text_file(o.out + "_metrics.csv", metrics);
  write_text_file(o.out + "_cost_saving.csv", cost);
  log_info("sweep over " + std::to_string(grid.size()) + " rates written to " + o.out +
           "_{summary,metrics,cost_saving}.csv");
  return 0;
}

int run_reproduce_tables(const Options& o) {
  ordered_json flags{{"means", o.means}, {"out", o.out}};
  log_resolved("reproduce-tables", flags);

  const eval::TableSet set = eval::load_table_means(o.means);
  const std::vector<eval::TableCheck> checks = eval::reproduce_tables(set);
  const std::string csv = eval::table_checks_to_csv(checks);
  if (!o.out.empty()) write_text_file(o.out, csv);
  std::fputs(csv.c_str(), stdout);

  double worst = 0.0;
  for (const auto& c : checks) worst = std::max(worst, c.abs_diff());
  log_info("checked " + std::to_string(checks.size()) + " rows, worst |diff| " +
           std::to_string(worst) + "pp");
  return 0;
}

service::Server* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

int run_serve(const Options& o) {
  const size_t colon = o.bind.rfind(':');
  if (colon == std::string::npos) {
    throw_error(ErrorCategory::config, "--bind must be host:port");
  }
  const std::string host = o.bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(o.bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw_error(ErrorCategory::config, "--bind port is not a number");
  }
  if (port < 0 || port > 65535) {
    throw_error(ErrorCategory::config, "--bind port out of range");
  }

  router::Checkpoint ckpt = router::load_checkpoint(o.checkpoint);
  const strategy::LoadedPolicy loaded = strategy::load_policy(o.policy);

  ordered_json flags{{"bind", o.bind},
                     {"checkpoint", o.checkpoint},
                     {"policy", o.policy},
                     {"hard_admission", o.hard_admission},
                     {"alpha", loaded.policy.alpha},
                     {"rate_bound", loaded.policy.rate_bound}};
  log_resolved("serve", flags);

  service::Server server(std::move(ckpt), loaded.policy, o.hard_admission);
  server.start(host, static_cast<uint16_t>(port));
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  log_info("listening on " + host + ":" + std::to_string(server.port()));
  server.wait();
  g_server = nullptr;
  return 0;
}

// ---- app construction ----

std::unique_ptr<CLI::App> build_app(Options& o) {
  auto app = std::make_unique<CLI::App>("edge/cloud prompt routing toolkit", "prsr");
  app->require_subcommand(1);

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "deterministic seed for this run")->capture_default_str();
  };
  auto add_split = [&](CLI::App* sub) {
    sub->add_option("--split", o.split, "train,calibration,eval fractions")
        ->capture_default_str();
  };

  CLI::App* gen = app->add_subcommand("gen-data", "generate a seeded synthetic dataset");
  gen->add_option("--out", o.out, "dataset file to write")->required();
  gen->add_option("--count", o.count, "number of records")->capture_default_str();
  gen->add_option("--vocab-size", o.vocab_size, "synthetic vocabulary size")
      ->capture_default_str();
  gen->add_option("--difficulty-fraction", o.difficulty_fraction,
                  "share of the vocabulary marking hard prompts")
      ->capture_default_str();
  gen->add_option("--noise", o.noise, "quality noise scale")->capture_default_str();
  gen->add_option("--min-tokens", o.min_tokens, "minimum tokens per record")
      ->capture_default_str();
  gen->add_option("--max-tokens", o.max_tokens, "maximum tokens per record")
      ->capture_default_str();
  gen->add_option("--metrics", o.metrics_file, "metric config file for names and weights");
  add_seed(gen);

  CLI::App* label = app->add_subcommand("label", "build supervision labels from qualities");
  label->add_option("--dataset", o.dataset, "dataset file")->required();
  label->add_option("--out", o.out, "label sidecar file to write")->required();
  label->add_option("--gamma", o.gamma, "distance temperature")->capture_default_str();
  label->add_option("--denom-floor", o.denom_floor, "mean-gap floor")->capture_default_str();
  label->add_option("--metrics", o.metrics_file, "metric config file for weights");
  add_split(label);
  add_seed(label);

  CLI::App* train = app->add_subcommand("train", "train the routing network");
  train->add_option("--dataset", o.dataset, "dataset file")->required();
  train->add_option("--labels", o.labels_path, "label sidecar file")->required();
  train->add_option("--out", o.out, "checkpoint file to write")->required();
  train->add_option("--epochs", o.epochs, "training epochs")->capture_default_str();
  train->add_option("--lr", o.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--weight-decay", o.weight_decay, "L2 penalty added to gradients")
      ->capture_default_str();
  train->add_option("--batch", o.batch_size, "batch size")->capture_default_str();
  train->add_option("--hidden-dim", o.hidden_dim, "token representation width")
      ->capture_default_str();
  train->add_option("--layers", o.layers, "encoder block count")->capture_default_str();
  train->add_option("--attn-heads", o.attn_heads, "attention heads")->capture_default_str();
  train->add_option("--experts", o.experts, "expert count (0 = one per metric)")
      ->capture_default_str();
  train->add_option("--tokens-per-expert", o.tokens_per_expert, "top-K tokens per expert")
      ->capture_default_str();
  train->add_option("--expert-rank", o.expert_rank, "expert low-rank width")
      ->capture_default_str();
  train->add_option("--model-max-tokens", o.model_max_tokens, "maximum sequence length")
      ->capture_default_str();
  train->add_option("--model-vocab", o.model_vocab, "vocabulary size (0 = derive from data)")
      ->capture_default_str();
  add_split(train);
  add_seed(train);

  CLI::App* calibrate =
      app->add_subcommand("calibrate", "pick the routing threshold for a rate or budget");
  calibrate->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  calibrate->add_option("--dataset", o.dataset, "dataset file")->required();
  calibrate->add_option("--labels", o.labels_path, "label sidecar file")->required();
  calibrate->add_option("--out", o.out, "policy file to write")->required();
  calibrate->add_option("--rate", o.rate, "cloud routing rate bound in [0,1]");
  calibrate->add_option("--budget-fee", o.budget_fee, "amortized fee budget per request");
  calibrate->add_option("--cloud-cost", o.cloud_cost, "fee per cloud request");
  calibrate->add_option("--budget-latency-total", o.budget_latency_total,
                        "latency budget per request");
  calibrate->add_option("--budget-latency-cloud", o.budget_latency_cloud,
                        "cloud latency incl. communication");
  calibrate->add_option("--budget-latency-edge", o.budget_latency_edge, "edge latency");
  calibrate->add_option("--budget-latency-router", o.budget_latency_router, "router latency");
  add_split(calibrate);
  add_seed(calibrate);

  CLI::App* route = app->add_subcommand("route", "route every record in a dataset file");
  route->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  route->add_option("--policy", o.policy, "policy file")->required();
  route->add_option("--dataset", o.dataset, "dataset file")->required();
  route->add_option("--out", o.out, "decisions file to write")->required();

  CLI::App* evaluate = app->add_subcommand("evaluate", "score routing on the eval split");
  evaluate->add_option("--dataset", o.dataset, "dataset file")->required();
  evaluate->add_option("--labels", o.labels_path, "label sidecar file")->required();
  evaluate->add_option("--decisions", o.decisions, "decisions file from 'route'");
  evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  evaluate->add_option("--policy", o.policy, "policy file");
  evaluate->add_option("--rate", o.eval_rate, "reference routing rate for the baselines");
  evaluate->add_option("--out", o.out, "summary CSV to write");
  add_split(evaluate);
  add_seed(evaluate);

  CLI::App* sweep = app->add_subcommand("sweep", "evaluate across a grid of routing rates");
  sweep->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  sweep->add_option("--dataset", o.dataset, "dataset file")->required();
  sweep->add_option("--labels", o.labels_path, "label sidecar file")->required();
  sweep->add_option("--out", o.out, "output prefix for the sweep CSVs")->required();
  sweep->add_option("--grid", o.grid, "comma-separated routing rates (default 0,0.1,...,1)");
  sweep->add_option("--dp-targets", o.dp_targets, "improvement targets for cost saving")
      ->capture_default_str();
  add_split(sweep);
  add_seed(sweep);

  CLI::App* tables =
      app->add_subcommand("reproduce-tables", "recompute improvement values from table means");
  tables->add_option("--means", o.means, "table means fixture file")->required();
  tables->add_option("--out", o.out, "CSV to write (also printed)");

  CLI::App* serve = app->add_subcommand("serve", "run the routing daemon");
  serve->add_option("--bind", o.bind, "host:port to listen on")->capture_default_str();
  serve->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  serve->add_option("--policy", o.policy, "policy file")->required();
  serve->add_flag("--hard-admission", o.hard_admission,
                  "override decisions that would exceed the rate bound");

  return app;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.push_back("prsr");
  for (const auto& a : args) argv_storage.push_back(a);
  std::vector<char*> argv;
  argv.reserve(argv_storage.size());
  for (auto& s : argv_storage) argv.push_back(s.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, char** argv) {
  Options o;
  auto app = build_app(o);
  try {
    app->parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app->exit(e);
  } catch (const CLI::ParseError& e) {
    app->exit(e);
    return 2;
  }

  try {
    if (app->got_subcommand("gen-data")) return run_gen_data(o);
    if (app->got_subcommand("label")) return run_label(o);
    if (app->got_subcommand("train")) return run_train(o);
    if (app->got_subcommand("calibrate")) return run_calibrate(o);
    if (app->got_subcommand("route")) return run_route(o);
    if (app->got_subcommand("evaluate")) return run_evaluate(o);
    if (app->got_subcommand("sweep")) return run_sweep(o);
    if (app->got_subcommand("reproduce-tables")) return run_reproduce_tables(o);
    if (app->got_subcommand("serve")) return run_serve(o);
    std::fprintf(stderr, "prsr: no subcommand selected\n");
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "prsr: error (%s): %s\n", Error::category_name(e.category()), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "prsr: internal error: %s\n", e.what());
    return 1;
  }
}

std::vector<FlagInfo> flag_registry() {
  Options o;
  auto app = build_app(o);
  std::vector<FlagInfo> flags;
  for (const CLI::App* sub : app->get_subcommands({})) {
    for (const CLI::Option* opt : sub->get_options()) {
      if (opt->get_name() == "--help") continue;
      flags.push_back({sub->get_name(), opt->get_name(), opt->get_description()});
    }
  }
  return flags;
}

std::string help_text() {
  Options o;
  auto app = build_app(o);
  std::string out = app->help("", CLI::AppFormatMode::All);
  return out;
}

}  // namespace prsr::cli

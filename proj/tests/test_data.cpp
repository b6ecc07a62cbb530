#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "prsr/data.hpp"
#include "prsr/errors.hpp"
#include "prsr/rng.hpp"

using namespace prsr;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "prsr_data_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

std::vector<std::string> names3() { return {"alpha", "beta", "gamma"}; }

data::Dataset small_dataset() {
  data::Dataset d;
  d.metric_names = names3();
  for (int i = 0; i < 12; ++i) {
    data::PromptRecord rec;
    rec.id = "p" + std::to_string(i);
    rec.tokens = {i % 5, (i * 3) % 7, 1};
    rec.q_edge.values = {0.4 + 0.01 * i, 0.5, 0.6};
    rec.q_cloud.values = {0.5, 0.55, 0.58 + 0.005 * i};
    d.records.push_back(std::move(rec));
  }
  return d;
}

}  // namespace

TEST_CASE("datasets round-trip byte exactly through export and ingest") {
  const auto dir = temp_dir();
  const auto path_a = dir / "a.jsonl";
  const auto path_b = dir / "b.jsonl";

  data::SyntheticSpec spec;
  spec.record_count = 200;
  spec.seed = 5;
  const auto names = math::default_metric_set().names();
  const data::Dataset dataset = data::generate_synthetic(spec, names);

  data::export_dataset(dataset, path_a);
  const data::Dataset back = data::ingest(path_a);
  data::export_dataset(back, path_b);

  CHECK(slurp(path_a) == slurp(path_b));
  REQUIRE(back.records.size() == dataset.records.size());
  CHECK(back.metric_names == dataset.metric_names);
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    CHECK(back.records[i].id == dataset.records[i].id);
    CHECK(back.records[i].tokens == dataset.records[i].tokens);
    CHECK(back.records[i].q_edge.values == dataset.records[i].q_edge.values);
    CHECK(back.records[i].q_cloud.values == dataset.records[i].q_cloud.values);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("an empty file ingests as an empty dataset") {
  const auto dir = temp_dir();
  const auto path = dir / "empty.jsonl";
  std::ofstream(path).close();
  const data::Dataset d = data::ingest(path);
  CHECK(d.records.empty());
  CHECK(d.metric_names.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("a malformed line is reported with its line number") {
  const auto dir = temp_dir();
  const auto path = dir / "bad.jsonl";
  {
    std::ofstream f(path);
    f << R"({"schema_version":1,"metrics":["a"]})" << "\n";
    for (int i = 0; i < 5; ++i) {
      f << R"({"id":"r)" << i << R"(","tokens":[1],"q_edge":[0.5],"q_cloud":[0.6]})" << "\n";
    }
    f << "{oops\n";
  }
  try {
    data::ingest(path);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::parse);
    CHECK(std::string(e.what()).find(":7") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("duplicate record ids are rejected") {
  const auto dir = temp_dir();
  const auto path = dir / "dup.jsonl";
  {
    std::ofstream f(path);
    f << R"({"schema_version":1,"metrics":["a"]})" << "\n";
    f << R"({"id":"same","tokens":[1],"q_edge":[0.5],"q_cloud":[0.6]})" << "\n";
    f << R"({"id":"same","tokens":[2],"q_edge":[0.4],"q_cloud":[0.6]})" << "\n";
  }
  try {
    data::ingest(path);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::data);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("similarity pairs are folded into qualities when qualities are absent") {
  const auto dir = temp_dir();
  const auto path = dir / "sims.jsonl";
  {
    std::ofstream f(path);
    f << R"({"schema_version":1,"metrics":["a","b"]})" << "\n";
    f << R"({"id":"s0","tokens":[3],"sims_edge":[[1.0,0.0],[0.0,1.0]],)"
      << R"("sims_cloud":[[0.2,0.2],[0.5,0.1]]})" << "\n";
  }
  const data::Dataset d = data::ingest(path);
  REQUIRE(d.records.size() == 1);
  const auto& rec = d.records[0];
  const double s1 = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(rec.q_edge[0] == doctest::Approx(s1).epsilon(1e-14));
  CHECK(rec.q_edge[1] == doctest::Approx(1.0 - s1).epsilon(1e-14));
  CHECK(rec.q_cloud[0] == 0.5);
  CHECK(rec.q_cloud[1] == doctest::Approx(1.0 / (1.0 + std::exp(-0.4))).epsilon(1e-14));
  CHECK(rec.sims_edge.has_value());
  std::filesystem::remove_all(dir);
}

TEST_CASE("explicit qualities win over derived ones") {
  const auto dir = temp_dir();
  const auto path = dir / "both.jsonl";
  {
    std::ofstream f(path);
    f << R"({"schema_version":1,"metrics":["a"]})" << "\n";
    f << R"({"id":"b0","tokens":[3],"q_edge":[0.42],"q_cloud":[0.77],)"
      << R"("sims_edge":[[0.5,0.5]],"sims_cloud":[[0.9,0.1]]})" << "\n";
  }
  const data::Dataset d = data::ingest(path);  // prints a mismatch warning
  REQUIRE(d.records.size() == 1);
  CHECK(d.records[0].q_edge[0] == 0.42);
  CHECK(d.records[0].q_cloud[0] == 0.77);
  std::filesystem::remove_all(dir);
}

TEST_CASE("split is disjoint, exhaustive, and seed-deterministic") {
  const data::Dataset d = small_dataset();
  const data::Split s = data::split(d, 0.5, 0.25, 0.25, 42);
  CHECK(s.train.size() == 6);
  CHECK(s.calibration.size() == 3);
  CHECK(s.eval.size() == 3);

  std::vector<bool> seen(d.records.size(), false);
  for (const auto* part : {&s.train, &s.calibration, &s.eval}) {
    for (size_t idx : *part) {
      CHECK(!seen[idx]);
      seen[idx] = true;
    }
  }
  for (bool b : seen) CHECK(b);

  const data::Split again = data::split(d, 0.5, 0.25, 0.25, 42);
  CHECK(again.train == s.train);
  CHECK(again.eval == s.eval);

  const data::Split other = data::split(d, 0.5, 0.25, 0.25, 43);
  CHECK(other.train != s.train);

  CHECK_THROWS_AS(data::split(d, 0.5, 0.2, 0.2, 1), Error);
}

TEST_CASE("labels hit the parity anchors and match a hand computation") {
  data::Dataset d;
  d.metric_names = {"a", "b"};
  data::PromptRecord r0;
  r0.id = "r0";
  r0.tokens = {1};
  r0.q_edge.values = {0.6, 0.4};
  r0.q_cloud.values = {0.5, 0.5};
  data::PromptRecord r1;
  r1.id = "r1";
  r1.tokens = {2};
  r1.q_edge.values = {0.4, 0.6};
  r1.q_cloud.values = {0.7, 0.3};
  d.records = {r0, r1};

  const std::vector<size_t> train = {0, 1};
  const std::vector<double> weights = {0.5, 0.5};
  const data::LabelSet labels = data::build_labels(d, train, weights, 1.0, 1e-6);

  // Hand: mu_edge = {0.5, 0.5}, mu_cloud = {0.6, 0.4}; gaps {0.1, 0.1}.
  CHECK(labels.params.mu_edge[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(labels.params.mu_cloud[0] == doctest::Approx(0.6).epsilon(1e-15));
  const double d00 = 1.0 / (1.0 + std::exp(-(0.6 - 0.5) / 0.1));
  CHECK(labels.labels[0].distances[0] == doctest::Approx(d00).epsilon(1e-12));
  const double d01 = 1.0 / (1.0 + std::exp(-(0.4 - 0.5) / 0.1));
  CHECK(labels.labels[0].distances[1] == doctest::Approx(d01).epsilon(1e-12));
  CHECK(labels.labels[0].prs == doctest::Approx(0.5 * d00 + 0.5 * d01).epsilon(1e-12));

  // Identical sides collapse to exact parity.
  data::Dataset same = d;
  for (auto& rec : same.records) rec.q_cloud = rec.q_edge;
  const data::LabelSet parity = data::build_labels(same, train, weights, 1.0, 1e-6);
  for (const auto& label : parity.labels) {
    for (double dist : label.distances) CHECK(dist == 0.5);
    CHECK(label.prs == 0.5);
  }

  // Determinism: recomputation is bit-identical.
  const data::LabelSet again = data::build_labels(d, train, weights, 1.0, 1e-6);
  for (size_t i = 0; i < labels.labels.size(); ++i) {
    CHECK(again.labels[i].prs == labels.labels[i].prs);
    CHECK(again.labels[i].distances == labels.labels[i].distances);
  }
}

TEST_CASE("label prs always equals the core recomputation") {
  data::SyntheticSpec spec;
  spec.record_count = 300;
  spec.seed = 21;
  const auto names = math::default_metric_set().names();
  const data::Dataset dataset = data::generate_synthetic(spec, names);
  const data::Split s = data::split(dataset, 0.7, 0.15, 0.15, 3);
  const std::vector<double> weights = math::uniform_weights(names.size());
  const data::LabelSet labels = data::build_labels(dataset, s.train, weights, 1.0, 1e-6);

  for (size_t i = 0; i < dataset.records.size(); ++i) {
    const double recomputed = math::prs(dataset.records[i].q_edge, dataset.records[i].q_cloud,
                                        weights, labels.params);
    CHECK(std::fabs(labels.labels[i].prs - recomputed) <= 1e-12);
    double weighted = 0.0;
    for (size_t m = 0; m < weights.size(); ++m) {
      weighted += weights[m] * labels.labels[i].distances[m];
    }
    CHECK(std::fabs(labels.labels[i].prs - weighted) <= 1e-12);
  }
}

TEST_CASE("label sidecars round-trip") {
  const auto dir = temp_dir();
  const auto path = dir / "labels.json";
  const data::Dataset d = small_dataset();
  const data::Split s = data::split(d, 0.5, 0.25, 0.25, 7);
  const data::LabelSet labels =
      data::build_labels(d, s.train, math::uniform_weights(3), 1.3, 1e-6);
  data::save_labels(labels, path);
  const data::LabelSet back = data::load_labels(path);
  CHECK(back.params.temperature == labels.params.temperature);
  CHECK(back.params.mu_edge == labels.params.mu_edge);
  CHECK(back.weights == labels.weights);
  REQUIRE(back.labels.size() == labels.labels.size());
  for (size_t i = 0; i < labels.labels.size(); ++i) {
    CHECK(back.ids[i] == labels.ids[i]);
    CHECK(back.labels[i].prs == labels.labels[i].prs);
    CHECK(back.labels[i].distances == labels.labels[i].distances);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic generation is bit-reproducible for a fixed seed") {
  const auto dir = temp_dir();
  data::SyntheticSpec spec;
  spec.record_count = 400;
  spec.seed = 99;
  const auto names = math::default_metric_set().names();
  const auto path_a = dir / "s1.jsonl";
  const auto path_b = dir / "s2.jsonl";
  data::export_dataset(data::generate_synthetic(spec, names), path_a);
  data::export_dataset(data::generate_synthetic(spec, names), path_b);
  CHECK(slurp(path_a) == slurp(path_b));

  spec.seed = 100;
  const auto path_c = dir / "s3.jsonl";
  data::export_dataset(data::generate_synthetic(spec, names), path_c);
  CHECK(slurp(path_a) != slurp(path_c));
  std::filesystem::remove_all(dir);
}

TEST_CASE("noise-free zero-difficulty records sit exactly on the base means") {
  data::SyntheticSpec spec;
  spec.record_count = 300;
  spec.noise_scale = 0.0;
  spec.seed = 4;
  const auto names = math::default_metric_set().names();
  const data::Dataset d = data::generate_synthetic(spec, names);
  const auto models = spec.metrics_or_default();
  const int cut = static_cast<int>(spec.difficulty_vocab_fraction * spec.vocab_size);

  int checked = 0;
  for (const auto& rec : d.records) {
    bool all_easy = true;
    for (int t : rec.tokens) all_easy = all_easy && t >= cut;
    if (!all_easy) continue;
    ++checked;
    for (size_t m = 0; m < models.size(); ++m) {
      CHECK(rec.q_edge[m] == doctest::Approx(models[m].edge_base).epsilon(1e-15));
      CHECK(rec.q_cloud[m] == doctest::Approx(models[m].cloud_base).epsilon(1e-15));
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("difficulty correlates strongly with the cloud-edge quality gap") {
  data::SyntheticSpec spec;
  spec.record_count = 5000;
  spec.seed = 6;
  const auto names = math::default_metric_set().names();
  const data::Dataset d = data::generate_synthetic(spec, names);
  const int cut = static_cast<int>(spec.difficulty_vocab_fraction * spec.vocab_size);

  std::vector<double> difficulty, gap;
  for (const auto& rec : d.records) {
    int hard = 0;
    for (int t : rec.tokens) hard += t < cut ? 1 : 0;
    difficulty.push_back(static_cast<double>(hard) / static_cast<double>(rec.tokens.size()));
    double g = 0.0;
    for (size_t m = 0; m < names.size(); ++m) g += rec.q_cloud[m] - rec.q_edge[m];
    gap.push_back(g / static_cast<double>(names.size()));
  }

  const size_t n = difficulty.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += difficulty[i];
    my += gap[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (difficulty[i] - mx) * (gap[i] - my);
    sxx += (difficulty[i] - mx) * (difficulty[i] - mx);
    syy += (gap[i] - my) * (gap[i] - my);
  }
  const double pearson = sxy / std::sqrt(sxx * syy);
  CHECK(pearson > 0.5);
}

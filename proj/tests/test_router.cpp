#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "prsr/errors.hpp"
#include "prsr/rng.hpp"
#include "prsr/router.hpp"

using namespace prsr;
using ad::Tensor;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

router::RouterConfig tiny_config() {
  router::RouterConfig c;
  c.vocab_size = 16;
  c.hidden_dim = 8;
  c.expert_count = 3;
  c.tokens_per_expert = 2;
  c.expert_rank = 2;
  c.expert_out_dim = 8;
  c.max_tokens = 12;
  c.layer_count = 2;
  c.attn_heads = 2;
  c.metric_count = 3;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 99;
  return c;
}

// Naive reference: per token, per expert, straight from the layer definition.
Tensor moe_reference(const Tensor& tokens, const router::GateParams& gates,
                     const router::ExpertParams& experts, int top_k) {
  const int n = tokens.rows;
  const int k = gates.embed_pos.rows;
  const int h = experts.score.front().cols;
  Tensor out(n, h);

  for (int t = 0; t < n; ++t) {
    std::vector<double> polarity[2];
    for (int o = 0; o < 2; ++o) {
      const Tensor& embed = o == 0 ? gates.embed_pos : gates.embed_neg;
      const auto& proj = o == 0 ? experts.proj_pos : experts.proj_neg;
      const router::GateOutput gate = router::token_selection_gate(tokens, embed, top_k);

      double denom = 0.0;
      for (int i = 0; i < k; ++i) {
        if (gate.mask[static_cast<size_t>(t) * k + i]) denom += gate.affinity.at(t, i);
      }

      std::vector<double> acc(static_cast<size_t>(h), 0.0);
      for (int i = 0; i < k; ++i) {
        if (!gate.mask[static_cast<size_t>(t) * k + i]) continue;
        const double lambda = gate.affinity.at(t, i) / denom;
        // token row through proj then score
        const Tensor& p = proj[static_cast<size_t>(i)];
        const Tensor& s = experts.score[static_cast<size_t>(i)];
        std::vector<double> low(static_cast<size_t>(p.cols), 0.0);
        for (int c = 0; c < p.cols; ++c) {
          double v = 0.0;
          for (int d = 0; d < p.rows; ++d) v += tokens.at(t, d) * p.at(d, c);
          low[static_cast<size_t>(c)] = v;
        }
        for (int c = 0; c < h; ++c) {
          double v = 0.0;
          for (int r = 0; r < s.rows; ++r) v += low[static_cast<size_t>(r)] * s.at(r, c);
          acc[static_cast<size_t>(c)] += lambda * v;
        }
      }
      polarity[o] = std::move(acc);
    }
    for (int c = 0; c < h; ++c) {
      out.at(t, c) =
          1.0 / (1.0 + std::exp(-(polarity[0][static_cast<size_t>(c)] -
                                  polarity[1][static_cast<size_t>(c)])));
    }
  }
  return out;
}

router::ExpertParams random_experts(Rng& rng, int k, int d, int l, int h) {
  router::ExpertParams e;
  for (int i = 0; i < k; ++i) {
    e.proj_pos.push_back(random_tensor(rng, d, l, 0.6));
    e.proj_neg.push_back(random_tensor(rng, d, l, 0.6));
    e.score.push_back(random_tensor(rng, l, h, 0.6));
  }
  return e;
}

}  // namespace

TEST_CASE("token selection gate selects everything when K covers all tokens") {
  Rng rng(1);
  const Tensor tokens = random_tensor(rng, 3, 4);
  const Tensor embed = random_tensor(rng, 2, 4);
  const router::GateOutput gate = router::token_selection_gate(tokens, embed, 5);
  for (uint8_t m : gate.mask) CHECK(m == 1);
  for (int t = 0; t < 3; ++t) {
    double sum = 0.0;
    for (int i = 0; i < 2; ++i) sum += gate.affinity.at(t, i);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("token selection gate ranks a dominant token first") {
  // Hand-set representations: token 2 aligned with expert 1's embedding.
  Tensor tokens(3, 2);
  tokens.data = {1.0, 0.0, 0.5, 0.2, 0.0, 3.0};
  Tensor embed(2, 2);
  embed.data = {1.0, 0.0, 0.0, 1.0};
  const router::GateOutput gate = router::token_selection_gate(tokens, embed, 1);
  REQUIRE(gate.selected_tokens.size() == 2);
  CHECK(gate.selected_tokens[1].front() == 2);
  CHECK(gate.mask[2 * 2 + 1] == 1);
}

TEST_CASE("token selection gate matches an argsort oracle and keeps exact column counts") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + rng.below_int(8);
    const int k = 1 + rng.below_int(5);
    const int top_k = 1 + rng.below_int(4);
    const Tensor tokens = random_tensor(rng, n, 6);
    const Tensor embed = random_tensor(rng, k, 6);
    const router::GateOutput gate = router::token_selection_gate(tokens, embed, top_k);

    const int keep = std::min(top_k, n);
    for (int i = 0; i < k; ++i) {
      std::vector<int> order(static_cast<size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return gate.affinity.at(a, i) > gate.affinity.at(b, i);
      });
      int ones = 0;
      for (int t = 0; t < n; ++t) ones += gate.mask[static_cast<size_t>(t) * k + i];
      CHECK(ones == keep);
      for (int r = 0; r < keep; ++r) {
        CHECK(gate.mask[static_cast<size_t>(order[static_cast<size_t>(r)]) * k + i] == 1);
      }
    }
  }
}

TEST_CASE("ties break toward the lower token index") {
  Tensor tokens(3, 1, 1.0);  // identical rows produce identical affinities
  Tensor embed(2, 1);
  embed.data = {0.3, -0.4};
  const router::GateOutput gate = router::token_selection_gate(tokens, embed, 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(gate.selected_tokens[static_cast<size_t>(i)] == std::vector<int>{0, 1});
  }
}

TEST_CASE("dual-gate layer collapses to one half when both polarities tie") {
  Rng rng(3);
  const Tensor tokens = random_tensor(rng, 4, 6);
  router::GateParams gates;
  gates.embed_pos = random_tensor(rng, 3, 6);
  gates.embed_neg = gates.embed_pos;
  router::ExpertParams experts = random_experts(rng, 3, 6, 2, 5);
  experts.proj_neg = experts.proj_pos;
  const Tensor out = router::dual_gate_moe_layer(tokens, gates, experts, 2);
  for (double v : out.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("single expert with exhaustive selection reduces to a closed form") {
  Rng rng(4);
  const int n = 3, d = 5, l = 2, h = 4;
  const Tensor tokens = random_tensor(rng, n, d);
  router::GateParams gates;
  gates.embed_pos = random_tensor(rng, 1, d);
  gates.embed_neg = random_tensor(rng, 1, d);
  router::ExpertParams experts = random_experts(rng, 1, d, l, h);

  const Tensor out = router::dual_gate_moe_layer(tokens, gates, experts, n);
  for (int t = 0; t < n; ++t) {
    for (int c = 0; c < h; ++c) {
      double pos = 0.0, neg = 0.0;
      for (int r = 0; r < l; ++r) {
        double lp = 0.0, ln = 0.0;
        for (int dd = 0; dd < d; ++dd) {
          lp += tokens.at(t, dd) * experts.proj_pos[0].at(dd, r);
          ln += tokens.at(t, dd) * experts.proj_neg[0].at(dd, r);
        }
        pos += lp * experts.score[0].at(r, c);
        neg += ln * experts.score[0].at(r, c);
      }
      CHECK(out.at(t, c) == doctest::Approx(1.0 / (1.0 + std::exp(-(pos - neg)))).epsilon(1e-12));
    }
  }
}

TEST_CASE("dual-gate layer equals the naive per-token per-expert oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + rng.below_int(10);
    const int k = 1 + rng.below_int(6);
    const int d = 3 + rng.below_int(5);
    const int l = 1 + rng.below_int(2);
    const int h = 2 + rng.below_int(5);
    const int top_k = 1 + rng.below_int(4);

    const Tensor tokens = random_tensor(rng, n, d);
    router::GateParams gates;
    gates.embed_pos = random_tensor(rng, k, d);
    gates.embed_neg = random_tensor(rng, k, d);
    const router::ExpertParams experts = random_experts(rng, k, d, l, h);

    const Tensor got = router::dual_gate_moe_layer(tokens, gates, experts, top_k);
    const Tensor expected = moe_reference(tokens, gates, experts, top_k);
    REQUIRE(got.rows == expected.rows);
    REQUIRE(got.cols == expected.cols);
    for (size_t i = 0; i < got.data.size(); ++i) {
      CHECK(got.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("swapping the two polarities reflects the output around one half") {
  Rng rng(6);
  const Tensor tokens = random_tensor(rng, 5, 6);
  router::GateParams gates;
  gates.embed_pos = random_tensor(rng, 4, 6);
  gates.embed_neg = random_tensor(rng, 4, 6);
  const router::ExpertParams experts = random_experts(rng, 4, 6, 2, 6);

  router::GateParams swapped_gates;
  swapped_gates.embed_pos = gates.embed_neg;
  swapped_gates.embed_neg = gates.embed_pos;
  router::ExpertParams swapped_experts = experts;
  std::swap(swapped_experts.proj_pos, swapped_experts.proj_neg);

  const Tensor out = router::dual_gate_moe_layer(tokens, gates, experts, 2);
  const Tensor mirrored = router::dual_gate_moe_layer(tokens, swapped_gates, swapped_experts, 2);
  for (size_t i = 0; i < out.data.size(); ++i) {
    CHECK(std::fabs(mirrored.data[i] - (1.0 - out.data[i])) <= 1e-12);
  }
}

TEST_CASE("normalized affinities sum to one over the selecting experts") {
  Rng rng(7);
  const Tensor tokens = random_tensor(rng, 6, 5);
  const Tensor embed = random_tensor(rng, 4, 5);
  const router::GateOutput gate = router::token_selection_gate(tokens, embed, 2);
  for (int t = 0; t < 6; ++t) {
    double denom = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (gate.mask[static_cast<size_t>(t) * 4 + i]) denom += gate.affinity.at(t, i);
    }
    if (denom == 0.0) continue;  // token unselected everywhere
    double lambda_sum = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (gate.mask[static_cast<size_t>(t) * 4 + i]) {
        lambda_sum += gate.affinity.at(t, i) / denom;
      }
    }
    CHECK(std::fabs(lambda_sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("fresh checkpoints predict exact parity") {
  const router::Checkpoint ckpt = router::init_checkpoint(tiny_config());
  const std::vector<int> tokens = {1, 5, 9};
  const router::Prediction pred = router::forward(ckpt, tokens);
  REQUIRE(pred.per_metric.size() == 3);
  for (double v : pred.per_metric) CHECK(v == 0.5);  // heads start at zero
  CHECK(pred.prs == 0.5);
}

TEST_CASE("forward output stays in the open unit interval and is deterministic") {
  router::RouterConfig config = tiny_config();
  router::Checkpoint ckpt = router::init_checkpoint(config);
  Rng rng(12);
  for (ad::Tensor* p : router::parameters(ckpt)) {
    for (double& v : p->data) v += rng.normal(0.0, 0.3);
  }
  const std::vector<int> tokens = {3, 3, 7, 12, 0};
  const router::Prediction a = router::forward(ckpt, tokens);
  const router::Prediction b = router::forward(ckpt, tokens);
  for (size_t i = 0; i < a.per_metric.size(); ++i) {
    CHECK(a.per_metric[i] > 0.0);
    CHECK(a.per_metric[i] < 1.0);
    CHECK(a.per_metric[i] == b.per_metric[i]);  // bit identical
  }
  CHECK(a.prs == b.prs);
}

TEST_CASE("forward rejects bad inputs") {
  const router::Checkpoint ckpt = router::init_checkpoint(tiny_config());
  CHECK_THROWS_AS(router::forward(ckpt, std::vector<int>{}), Error);
  CHECK_THROWS_AS(router::forward(ckpt, std::vector<int>{99}), Error);
  CHECK_THROWS_AS(router::forward(ckpt, std::vector<int>{-1}), Error);
  CHECK_THROWS_AS(router::forward(ckpt, std::vector<int>(13, 1)), Error);
}

TEST_CASE("graph forward agrees with the plain forward") {
  router::RouterConfig config = tiny_config();
  router::Checkpoint ckpt = router::init_checkpoint(config);
  Rng rng(13);
  for (ad::Tensor* p : router::parameters(ckpt)) {
    for (double& v : p->data) v += rng.normal(0.0, 0.25);
  }
  const std::vector<double> weights = config.weights_or_uniform();
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> tokens(1 + rng.below_int(10));
    for (int& t : tokens) t = rng.below_int(config.vocab_size);

    const router::Prediction plain = router::forward(ckpt, tokens);
    ad::Graph g;
    const ad::Tensor& row = g.value(router::build_forward(g, ckpt, tokens));
    REQUIRE(row.cols == static_cast<int>(plain.per_metric.size()));
    for (int i = 0; i < row.cols; ++i) {
      CHECK(plain.per_metric[static_cast<size_t>(i)] ==
            doctest::Approx(row.data[static_cast<size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("expert permutation leaves forward output unchanged within tolerance") {
  router::RouterConfig config = tiny_config();
  router::Checkpoint ckpt = router::init_checkpoint(config);
  Rng rng(14);
  for (ad::Tensor* p : router::parameters(ckpt)) {
    for (double& v : p->data) v += rng.normal(0.0, 0.3);
  }

  router::Checkpoint permuted = ckpt;
  const std::vector<int> perm = {2, 0, 1};
  for (auto& block : permuted.blocks) {
    const router::GateParams old_gates = block.gates;
    const router::ExpertParams old_experts = block.experts;
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < config.hidden_dim; ++c) {
        block.gates.embed_pos.at(i, c) = old_gates.embed_pos.at(perm[static_cast<size_t>(i)], c);
        block.gates.embed_neg.at(i, c) = old_gates.embed_neg.at(perm[static_cast<size_t>(i)], c);
      }
      block.experts.proj_pos[static_cast<size_t>(i)] =
          old_experts.proj_pos[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      block.experts.proj_neg[static_cast<size_t>(i)] =
          old_experts.proj_neg[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      block.experts.score[static_cast<size_t>(i)] =
          old_experts.score[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
  }

  const std::vector<int> tokens = {1, 4, 8, 2};
  const router::Prediction a = router::forward(ckpt, tokens);
  const router::Prediction b = router::forward(permuted, tokens);
  for (size_t i = 0; i < a.per_metric.size(); ++i) {
    CHECK(std::fabs(a.per_metric[i] - b.per_metric[i]) <= 1e-10);
  }
}

TEST_CASE("mse loss anchors") {
  const std::vector<double> target = {0.2, 0.4, 0.6};
  CHECK(router::mse_loss(target, target) == 0.0);
  const std::vector<double> off = {0.3, 0.5, 0.7};
  CHECK(router::mse_loss(off, target) == doctest::Approx(0.01).epsilon(1e-12));

  Rng rng(15);
  std::vector<double> pred(5), label(5);
  for (size_t i = 0; i < 5; ++i) {
    pred[i] = rng.uniform();
    label[i] = rng.uniform();
  }
  double expected = 0.0;
  for (size_t i = 0; i < 5; ++i) expected += (pred[i] - label[i]) * (pred[i] - label[i]);
  expected /= 5.0;
  CHECK(router::mse_loss(pred, label) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("full-model gradient check passes with selection flips excluded") {
  router::RouterConfig config;
  config.vocab_size = 16;
  config.hidden_dim = 8;
  config.expert_count = 3;
  config.metric_count = 3;
  config.tokens_per_expert = 2;
  config.expert_rank = 2;
  config.expert_out_dim = 8;
  config.max_tokens = 8;
  config.layer_count = 2;
  config.attn_heads = 2;
  config.seed = 7;
  router::Checkpoint ckpt = router::init_checkpoint(config);
  Rng rng(77);
  for (ad::Tensor* p : router::parameters(ckpt)) {
    for (double& v : p->data) v += rng.normal(0.0, 0.2);
  }

  const std::vector<int> tokens = {2, 7, 11, 5};
  const std::vector<double> target = {0.3, 0.6, 0.8};

  auto loss_value = [&]() {
    ad::Graph g;
    ad::Var pred = router::build_forward(g, ckpt, tokens);
    return g.scalar(router::build_mse_loss(g, pred, target));
  };
  auto signature = [&]() {
    ad::Graph g;
    std::string sig;
    router::build_forward(g, ckpt, tokens, &sig);
    return sig;
  };

  std::vector<ad::Tensor*> params = router::parameters(ckpt);
  for (ad::Tensor* p : params) p->zero_grad();
  {
    ad::Graph g;
    ad::Var pred = router::build_forward(g, ckpt, tokens);
    g.backward(router::build_mse_loss(g, pred, target));
  }

  const ad::FdReport report = ad::finite_diff_check(loss_value, params, 1e-5, signature);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("training is deterministic and records its loss history") {
  router::RouterConfig config = tiny_config();
  config.learning_rate = 1e-3;

  Rng rng(16);
  std::vector<router::TrainExample> examples;
  for (int i = 0; i < 30; ++i) {
    router::TrainExample ex;
    ex.tokens.resize(1 + rng.below_int(8));
    for (int& t : ex.tokens) t = rng.below_int(config.vocab_size);
    ex.target_distances = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    examples.push_back(std::move(ex));
  }

  router::Checkpoint a = router::train(examples, config);
  router::Checkpoint b = router::train(examples, config);
  CHECK(a.epochs_trained == 2);
  REQUIRE(a.loss_history.size() == 2);
  CHECK(a.loss_history == b.loss_history);

  std::vector<ad::Tensor*> pa = router::parameters(a);
  std::vector<ad::Tensor*> pb = router::parameters(b);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->data == pb[i]->data);  // bit-identical trajectories
  }

  CHECK_THROWS_AS(router::train({}, config), Error);
}

TEST_CASE("training loss trends downward on a learnable signal") {
  router::RouterConfig config = tiny_config();
  config.learning_rate = 3e-3;
  config.epochs = 6;

  // Targets follow the mean token id, so the embedding alone can explain them.
  Rng rng(26);
  std::vector<router::TrainExample> examples;
  for (int i = 0; i < 120; ++i) {
    router::TrainExample ex;
    ex.tokens.resize(2 + rng.below_int(6));
    double mean_id = 0.0;
    for (int& t : ex.tokens) {
      t = rng.below_int(config.vocab_size);
      mean_id += t;
    }
    mean_id /= static_cast<double>(ex.tokens.size()) * config.vocab_size;
    const double target = std::clamp(0.2 + 0.6 * mean_id, 0.05, 0.95);
    ex.target_distances = {target, 1.0 - target, target};
    examples.push_back(std::move(ex));
  }

  const router::Checkpoint ckpt = router::train(examples, config);
  REQUIRE(ckpt.loss_history.size() == 6);
  CHECK(ckpt.loss_history.back() < ckpt.loss_history.front());

  // Two-epoch moving average is non-increasing within noise.
  for (size_t i = 0; i + 2 < ckpt.loss_history.size(); ++i) {
    const double early = 0.5 * (ckpt.loss_history[i] + ckpt.loss_history[i + 1]);
    const double late = 0.5 * (ckpt.loss_history[i + 1] + ckpt.loss_history[i + 2]);
    CHECK(late <= early + 1e-4);
  }
}

TEST_CASE("checkpoints round-trip byte exactly and reproduce outputs") {
  router::RouterConfig config = tiny_config();
  router::Checkpoint ckpt = router::init_checkpoint(config);
  Rng rng(17);
  for (ad::Tensor* p : router::parameters(ckpt)) {
    for (double& v : p->data) v += rng.normal(0.0, 0.5);
  }
  ckpt.epochs_trained = 2;
  ckpt.loss_history = {0.21, 0.13};

  const auto dir = std::filesystem::temp_directory_path() / "prsr_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path_a = dir / "a.ckpt";
  const auto path_b = dir / "b.ckpt";

  router::save_checkpoint(ckpt, path_a);
  router::Checkpoint loaded = router::load_checkpoint(path_a);
  router::save_checkpoint(loaded, path_b);

  std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(fa)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(fb)), {});
  REQUIRE(!bytes_a.empty());
  CHECK(bytes_a == bytes_b);

  const std::vector<int> tokens = {1, 2, 3};
  const router::Prediction x = router::forward(ckpt, tokens);
  const router::Prediction y = router::forward(loaded, tokens);
  CHECK(x.prs == y.prs);
  CHECK(x.per_metric == y.per_metric);
  CHECK(loaded.loss_history == ckpt.loss_history);

  // Corrupt the magic and expect a parse failure.
  std::string corrupt = bytes_a;
  corrupt[0] = 'X';
  const auto path_c = dir / "c.ckpt";
  std::ofstream(path_c, std::ios::binary) << corrupt;
  CHECK_THROWS_AS(router::load_checkpoint(path_c), Error);

  CHECK_THROWS_AS(router::load_checkpoint(dir / "missing.ckpt"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint round-trips hold across assorted shapes") {
  const auto dir = std::filesystem::temp_directory_path() / "prsr_ckpt_shapes";
  std::filesystem::create_directories(dir);
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    router::RouterConfig config;
    config.vocab_size = 8 + rng.below_int(40);
    config.attn_heads = 1 + rng.below_int(3);
    config.hidden_dim = config.attn_heads * (2 + rng.below_int(6));
    config.expert_out_dim = config.hidden_dim;
    config.expert_rank = std::max(1, config.hidden_dim / 4);
    config.expert_count = 1 + rng.below_int(6);
    config.metric_count = 1 + rng.below_int(6);
    config.tokens_per_expert = 1 + rng.below_int(4);
    config.max_tokens = 8 + rng.below_int(20);
    config.layer_count = 1 + rng.below_int(3);
    config.seed = 1000 + static_cast<uint64_t>(trial);
    if (!config.metric_weights.empty()) config.metric_weights.clear();

    router::Checkpoint ckpt = router::init_checkpoint(config);
    ckpt.loss_history = {rng.uniform(), rng.uniform()};
    ckpt.epochs_trained = 2;
    const auto path_a = dir / ("s" + std::to_string(trial) + "a.ckpt");
    const auto path_b = dir / ("s" + std::to_string(trial) + "b.ckpt");
    router::save_checkpoint(ckpt, path_a);
    router::save_checkpoint(router::load_checkpoint(path_a), path_b);
    std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), {});
    CHECK(bytes_a == bytes_b);
    CHECK(!bytes_a.empty());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation enforces the structural invariants") {
  router::RouterConfig config = tiny_config();
  config.expert_rank = 5;  // > min(h, d)/2 = 4
  CHECK_THROWS_AS(config.validate(), Error);

  config = tiny_config();
  config.tokens_per_expert = 100;
  CHECK_THROWS_AS(config.validate(), Error);

  config = tiny_config();
  config.expert_out_dim = 12;
  CHECK_THROWS_AS(config.validate(), Error);

  config = tiny_config();
  config.attn_heads = 3;  // does not divide hidden_dim
  CHECK_THROWS_AS(config.validate(), Error);

  config = tiny_config();
  config.metric_weights = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(config.validate(), Error);
}

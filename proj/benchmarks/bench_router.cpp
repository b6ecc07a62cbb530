#include <benchmark/benchmark.h>

#include "prsr/core_math.hpp"
#include "prsr/data.hpp"
#include "prsr/eval.hpp"
#include "prsr/rng.hpp"
#include "prsr/router.hpp"
#include "prsr/strategy.hpp"

using namespace prsr;

namespace {

router::RouterConfig default_config(int vocab) {
  router::RouterConfig c;
  c.vocab_size = vocab;
  c.seed = 3;
  return c;
}

router::Checkpoint warm_checkpoint(int vocab) {
  router::Checkpoint ckpt = router::init_checkpoint(default_config(vocab));
  Rng rng(5);
  for (ad::Tensor* p : router::parameters(ckpt)) {
    for (double& v : p->data) v += rng.normal(0.0, 0.2);
  }
  return ckpt;
}

std::vector<int> sample_tokens(int n, int vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> tokens(static_cast<size_t>(n));
  for (int& t : tokens) t = rng.below_int(vocab);
  return tokens;
}

void BM_Prs(benchmark::State& state) {
  Rng rng(11);
  math::QualityVector qe, qc;
  math::DistanceParams params;
  for (int i = 0; i < 10; ++i) {
    qe.values.push_back(rng.uniform(0.1, 0.9));
    qc.values.push_back(rng.uniform(0.1, 0.9));
    params.mu_edge.push_back(rng.uniform(0.3, 0.7));
    params.mu_cloud.push_back(rng.uniform(0.3, 0.7));
  }
  const std::vector<double> weights = math::uniform_weights(10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(math::prs(qe, qc, weights, params));
  }
}
BENCHMARK(BM_Prs);

void BM_DualGateMoeLayer(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(7);
  ad::Tensor tokens(n, 64);
  for (double& v : tokens.data) v = rng.normal(0.0, 1.0);
  router::GateParams gates;
  gates.embed_pos = ad::Tensor(10, 64);
  gates.embed_neg = ad::Tensor(10, 64);
  for (double& v : gates.embed_pos.data) v = rng.normal(0.0, 0.2);
  for (double& v : gates.embed_neg.data) v = rng.normal(0.0, 0.2);
  router::ExpertParams experts;
  for (int i = 0; i < 10; ++i) {
    ad::Tensor pp(64, 8), pn(64, 8), sc(8, 64);
    for (double& v : pp.data) v = rng.normal(0.0, 0.15);
    for (double& v : pn.data) v = rng.normal(0.0, 0.15);
    for (double& v : sc.data) v = rng.normal(0.0, 0.3);
    experts.proj_pos.push_back(std::move(pp));
    experts.proj_neg.push_back(std::move(pn));
    experts.score.push_back(std::move(sc));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(router::dual_gate_moe_layer(tokens, gates, experts, 4));
  }
}
BENCHMARK(BM_DualGateMoeLayer)->Arg(8)->Arg(32)->Arg(77);

void BM_Forward(benchmark::State& state) {
  const router::Checkpoint ckpt = warm_checkpoint(512);
  const std::vector<int> tokens = sample_tokens(static_cast<int>(state.range(0)), 512, 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(router::forward(ckpt, tokens));
  }
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(16)->Arg(77);

void BM_TrainBatch(benchmark::State& state) {
  router::RouterConfig config = default_config(256);
  config.hidden_dim = 32;
  config.expert_out_dim = 32;
  config.expert_rank = 4;
  config.layer_count = 1;
  config.attn_heads = 2;
  config.epochs = 1;
  config.batch_size = 16;
  Rng rng(13);
  std::vector<router::TrainExample> examples;
  for (int i = 0; i < 16; ++i) {
    router::TrainExample ex;
    ex.tokens = sample_tokens(12, 256, 100 + static_cast<uint64_t>(i));
    for (int m = 0; m < 10; ++m) ex.target_distances.push_back(rng.uniform(0.1, 0.9));
    examples.push_back(std::move(ex));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(router::train(examples, config));
  }
}
BENCHMARK(BM_TrainBatch)->Unit(benchmark::kMillisecond);

void BM_CalibrateThreshold(benchmark::State& state) {
  Rng rng(17);
  std::vector<double> preds(static_cast<size_t>(state.range(0)));
  for (auto& p : preds) p = rng.uniform(0.05, 0.95);
  for (auto _ : state) {
    benchmark::DoNotOptimize(strategy::calibrate_threshold(preds, 0.5));
  }
}
BENCHMARK(BM_CalibrateThreshold)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();

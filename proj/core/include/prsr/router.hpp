#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prsr/autodiff.hpp"

namespace prsr::router {

// Architecture and training hyperparameters. expert_out_dim stays equal to
// hidden_dim so the token-mixture blocks can be stacked residually.
struct RouterConfig {
  int vocab_size = 512;
  int hidden_dim = 64;       // token representation width
  int expert_count = 10;     // one expert per quality metric by default
  int tokens_per_expert = 4; // top-K tokens each expert selects
  int expert_rank = 8;       // low-rank projection width inside an expert
  int expert_out_dim = 64;   // expert output width
  int max_tokens = 77;
  int layer_count = 2;
  int attn_heads = 4;
  int metric_count = 10;
  double temperature = 1.0;
  std::vector<double> metric_weights;  // empty means uniform
  double learning_rate = 2e-5;
  double weight_decay = 0.0;
  int batch_size = 16;
  int epochs = 10;
  uint64_t seed = 42;

  void validate() const;
  std::vector<double> weights_or_uniform() const;
};

struct GateParams {
  ad::Tensor embed_pos;  // expert_count x hidden_dim
  ad::Tensor embed_neg;
};

struct ExpertParams {
  std::vector<ad::Tensor> proj_pos;  // per metric: hidden_dim x expert_rank
  std::vector<ad::Tensor> proj_neg;
  std::vector<ad::Tensor> score;     // per metric: expert_rank x expert_out_dim
};

struct AttentionParams {
  ad::Tensor wq, wk, wv, wo;  // hidden_dim x hidden_dim each
};

struct BlockParams {
  AttentionParams attn;
  GateParams gates;
  ExpertParams experts;
};

struct HeadParams {
  ad::Tensor weight;  // hidden_dim x 1
  ad::Tensor bias;    // 1 x 1
};

// Affinity, binary selection mask, and the chosen token indices per expert
// (highest affinity first, ties resolved toward the lower token index).
struct GateOutput {
  ad::Tensor affinity;               // n x k, rows sum to 1
  std::vector<uint8_t> mask;         // n*k row-major, 1 = selected
  std::vector<std::vector<int>> selected_tokens;  // per expert
};

// Column-wise top-K selection over an affinity matrix. Each expert (column)
// keeps its min(K, n) highest-affinity tokens.
std::vector<uint8_t> select_top_k(const ad::Tensor& affinity, int top_k,
                                  std::vector<std::vector<int>>* selected_tokens = nullptr);

// affinity = softmax over experts of tokens * expert_embed^T, then top-K per
// expert column.
GateOutput token_selection_gate(const ad::Tensor& tokens, const ad::Tensor& expert_embed,
                                int top_k);

// One dual-gate token-mixture layer. For each polarity the gate picks tokens,
// affinities of the selecting experts are renormalized per token, experts
// score the token through their low-rank projections, and the two polarity
// aggregates are contrasted through a sigmoid. Tokens no expert selected
// contribute a zero vector for that polarity.
ad::Tensor dual_gate_moe_layer(const ad::Tensor& tokens, const GateParams& gates,
                               const ExpertParams& experts, int top_k);

// All learned state plus enough metadata to reproduce a run.
struct Checkpoint {
  RouterConfig config;
  ad::Tensor embedding;  // vocab_size x hidden_dim
  std::vector<BlockParams> blocks;
  std::vector<HeadParams> heads;
  uint32_t epochs_trained = 0;
  std::vector<double> loss_history;  // mean training loss per epoch
};

// Seeded parameter initialization. Heads start at zero so an untrained model
// predicts exact parity (0.5) on every metric.
Checkpoint init_checkpoint(const RouterConfig& config);

// Every learnable tensor in a stable, serialization-defining order.
std::vector<ad::Tensor*> parameters(Checkpoint& ckpt);

struct Prediction {
  std::vector<double> per_metric;  // each in (0,1)
  double prs = 0.0;                // weighted recombination of the heads
};

// Inference forward pass (no tape). Throws on empty input, ids outside the
// vocabulary, or sequences longer than max_tokens.
Prediction forward(const Checkpoint& ckpt, std::span<const int> tokens);

// Tape-building forward pass used by training and the gradient check. Returns
// the 1 x metric_count prediction row. When selection_sig is given, every
// gate mask encountered is appended to it, which lets the finite-difference
// harness detect top-K flips.
ad::Var build_forward(ad::Graph& graph, Checkpoint& ckpt, std::span<const int> tokens,
                      std::string* selection_sig = nullptr);

// Mean squared error between per-metric predictions and target distances.
double mse_loss(std::span<const double> predictions, std::span<const double> targets);
ad::Var build_mse_loss(ad::Graph& graph, ad::Var prediction_row,
                       std::span<const double> targets);

struct TrainExample {
  std::vector<int> tokens;
  std::vector<double> target_distances;  // length metric_count
};

// Adam training over the example set; fixed seed gives a bit-reproducible
// parameter trajectory. Returns the checkpoint with per-epoch loss history.
Checkpoint train(std::span<const TrainExample> examples, const RouterConfig& config);

// Versioned binary container; save -> load -> save is byte-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace prsr::router

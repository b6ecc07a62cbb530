#include "prsr/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prsr/errors.hpp"
#include "prsr/rng.hpp"

namespace prsr::router {

namespace {

using ad::Tensor;

Tensor mat_mul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
    double* orow = out.data.data() + static_cast<size_t>(i) * b.cols;
    for (int p = 0; p < a.cols; ++p) {
      const double aip = arow[p];
      if (aip == 0.0) continue;
      const double* brow = b.data.data() + static_cast<size_t>(p) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor mat_mul_bt(const Tensor& a, const Tensor& b) {
  // a * b^T without materializing the transpose.
  Tensor out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + static_cast<size_t>(j) * b.cols;
      double acc = 0.0;
      for (int p = 0; p < a.cols; ++p) acc += arow[p] * brow[p];
      out.at(i, j) = acc;
    }
  }
  return out;
}

void softmax_rows_inplace(Tensor& t) {
  for (int i = 0; i < t.rows; ++i) {
    double* row = t.data.data() + static_cast<size_t>(i) * t.cols;
    double mx = row[0];
    for (int j = 1; j < t.cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < t.cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < t.cols; ++j) row[j] /= sum;
  }
}

Tensor random_tensor(Rng& rng, int rows, int cols, double stddev) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  t.set_requires_grad(true);
  return t;
}

void validate_tokens(const RouterConfig& config, std::span<const int> tokens) {
  if (tokens.empty()) {
    throw_error(ErrorCategory::invalid_input, "empty sequence: at least one token id required");
  }
  if (static_cast<int>(tokens.size()) > config.max_tokens) {
    throw_error(ErrorCategory::invalid_input,
                "sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_tokens=" +
                    std::to_string(config.max_tokens));
  }
  for (int id : tokens) {
    if (id < 0 || id >= config.vocab_size) {
      throw_error(ErrorCategory::invalid_input,
                  "unknown token id " + std::to_string(id) + " for vocab_size=" +
                      std::to_string(config.vocab_size));
    }
  }
}

}  // namespace

void RouterConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw_error(ErrorCategory::config, std::string(name) + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(hidden_dim, "hidden_dim");
  positive(expert_count, "expert_count");
  positive(tokens_per_expert, "tokens_per_expert");
  positive(expert_rank, "expert_rank");
  positive(expert_out_dim, "expert_out_dim");
  positive(max_tokens, "max_tokens");
  positive(layer_count, "layer_count");
  positive(attn_heads, "attn_heads");
  positive(metric_count, "metric_count");
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  if (expert_rank > std::min(expert_out_dim, hidden_dim) / 2) {
    throw_error(ErrorCategory::config,
                "expert_rank must be at most min(expert_out_dim, hidden_dim)/2");
  }
  if (tokens_per_expert > max_tokens) {
    throw_error(ErrorCategory::config, "tokens_per_expert must not exceed max_tokens");
  }
  if (expert_out_dim != hidden_dim) {
    throw_error(ErrorCategory::config,
                "expert_out_dim must equal hidden_dim for residual stacking");
  }
  if (hidden_dim % attn_heads != 0) {
    throw_error(ErrorCategory::config, "hidden_dim must be divisible by attn_heads");
  }
  if (!(temperature > 0.0)) {
    throw_error(ErrorCategory::config, "temperature must be positive");
  }
  if (!metric_weights.empty()) {
    if (metric_weights.size() != static_cast<size_t>(metric_count)) {
      throw_error(ErrorCategory::config, "metric_weights length must equal metric_count");
    }
    double sum = 0.0;
    for (double w : metric_weights) sum += w;
    if (std::fabs(sum - 1.0) > 1e-9) {
      throw_error(ErrorCategory::config, "metric_weights must sum to 1");
    }
  }
}

std::vector<double> RouterConfig::weights_or_uniform() const {
  if (!metric_weights.empty()) return metric_weights;
  return std::vector<double>(static_cast<size_t>(metric_count),
                             1.0 / static_cast<double>(metric_count));
}

std::vector<uint8_t> select_top_k(const Tensor& affinity, int top_k,
                                  std::vector<std::vector<int>>* selected_tokens) {
  const int n = affinity.rows;
  const int k = affinity.cols;
  if (top_k <= 0) {
    throw_error(ErrorCategory::invalid_input, "top_k must be positive");
  }
  const int keep = std::min(top_k, n);
  std::vector<uint8_t> mask(static_cast<size_t>(n) * k, 0);
  if (selected_tokens) selected_tokens->assign(static_cast<size_t>(k), {});

  std::vector<int> order(static_cast<size_t>(n));
  for (int expert = 0; expert < k; ++expert) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double va = affinity.at(a, expert);
      const double vb = affinity.at(b, expert);
      if (va != vb) return va > vb;
      return a < b;  // ties go to the lower token index
    });
    for (int r = 0; r < keep; ++r) {
      mask[static_cast<size_t>(order[r]) * k + expert] = 1;
      if (selected_tokens) (*selected_tokens)[static_cast<size_t>(expert)].push_back(order[r]);
    }
  }
  return mask;
}

GateOutput token_selection_gate(const Tensor& tokens, const Tensor& expert_embed, int top_k) {
  if (tokens.rows < 1) {
    throw_error(ErrorCategory::invalid_input, "gate needs at least one token");
  }
  if (tokens.cols != expert_embed.cols) {
    throw_error(ErrorCategory::dimension, "token and expert embedding widths differ");
  }
  GateOutput out;
  out.affinity = mat_mul_bt(tokens, expert_embed);
  softmax_rows_inplace(out.affinity);
  out.mask = select_top_k(out.affinity, top_k, &out.selected_tokens);
  return out;
}

Tensor dual_gate_moe_layer(const Tensor& tokens, const GateParams& gates,
                           const ExpertParams& experts, int top_k) {
  const int n = tokens.rows;
  const int k = gates.embed_pos.rows;
  if (experts.proj_pos.size() != static_cast<size_t>(k) ||
      experts.proj_neg.size() != static_cast<size_t>(k) ||
      experts.score.size() != static_cast<size_t>(k)) {
    throw_error(ErrorCategory::dimension, "expert parameter count must match expert count");
  }
  const int h = experts.score.front().cols;

  Tensor polarity_sum[2];
  for (int o = 0; o < 2; ++o) {
    const Tensor& embed = (o == 0) ? gates.embed_pos : gates.embed_neg;
    const auto& proj = (o == 0) ? experts.proj_pos : experts.proj_neg;
    GateOutput gate = token_selection_gate(tokens, embed, top_k);

    // Per-token normalizer over the experts that selected it.
    std::vector<double> denom(static_cast<size_t>(n), 0.0);
    for (int t = 0; t < n; ++t)
      for (int i = 0; i < k; ++i)
        if (gate.mask[static_cast<size_t>(t) * k + i]) denom[static_cast<size_t>(t)] += gate.affinity.at(t, i);

    Tensor acc(n, h);
    for (int i = 0; i < k; ++i) {
      const Tensor impact = mat_mul(mat_mul(tokens, proj[static_cast<size_t>(i)]),
                                    experts.score[static_cast<size_t>(i)]);
      for (int t = 0; t < n; ++t) {
        if (!gate.mask[static_cast<size_t>(t) * k + i]) continue;
        const double lambda = gate.affinity.at(t, i) / denom[static_cast<size_t>(t)];
        const double* src = impact.data.data() + static_cast<size_t>(t) * h;
        double* dst = acc.data.data() + static_cast<size_t>(t) * h;
        for (int j = 0; j < h; ++j) dst[j] += lambda * src[j];
      }
    }
    polarity_sum[o] = std::move(acc);
  }

  Tensor out(n, h);
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = 1.0 / (1.0 + std::exp(-(polarity_sum[0].data[i] - polarity_sum[1].data[i])));
  }
  return out;
}

Checkpoint init_checkpoint(const RouterConfig& config) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  Rng rng(config.seed);

  const int d = config.hidden_dim;
  const int k = config.expert_count;
  const int l = config.expert_rank;
  const int h = config.expert_out_dim;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double score_std = 1.0 / std::sqrt(static_cast<double>(l));

  ckpt.embedding = random_tensor(rng, config.vocab_size, d, 0.5);

  ckpt.blocks.resize(static_cast<size_t>(config.layer_count));
  for (auto& block : ckpt.blocks) {
    block.attn.wq = random_tensor(rng, d, d, proj_std);
    block.attn.wk = random_tensor(rng, d, d, proj_std);
    block.attn.wv = random_tensor(rng, d, d, proj_std);
    block.attn.wo = random_tensor(rng, d, d, proj_std);
    block.gates.embed_pos = random_tensor(rng, k, d, proj_std);
    block.gates.embed_neg = random_tensor(rng, k, d, proj_std);
    block.experts.proj_pos.reserve(static_cast<size_t>(k));
    block.experts.proj_neg.reserve(static_cast<size_t>(k));
    block.experts.score.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      block.experts.proj_pos.push_back(random_tensor(rng, d, l, proj_std));
      block.experts.proj_neg.push_back(random_tensor(rng, d, l, proj_std));
      block.experts.score.push_back(random_tensor(rng, l, h, score_std));
    }
  }

  ckpt.heads.resize(static_cast<size_t>(config.metric_count));
  for (auto& head : ckpt.heads) {
    head.weight = Tensor(d, 1);
    head.weight.set_requires_grad(true);
    head.bias = Tensor(1, 1);
    head.bias.set_requires_grad(true);
  }
  return ckpt;
}

std::vector<ad::Tensor*> parameters(Checkpoint& ckpt) {
  std::vector<Tensor*> params;
  params.push_back(&ckpt.embedding);
  for (auto& block : ckpt.blocks) {
    params.push_back(&block.attn.wq);
    params.push_back(&block.attn.wk);
    params.push_back(&block.attn.wv);
    params.push_back(&block.attn.wo);
    params.push_back(&block.gates.embed_pos);
    params.push_back(&block.gates.embed_neg);
    for (size_t i = 0; i < block.experts.proj_pos.size(); ++i) {
      params.push_back(&block.experts.proj_pos[i]);
      params.push_back(&block.experts.proj_neg[i]);
      params.push_back(&block.experts.score[i]);
    }
  }
  for (auto& head : ckpt.heads) {
    params.push_back(&head.weight);
    params.push_back(&head.bias);
  }
  return params;
}

Prediction forward(const Checkpoint& ckpt, std::span<const int> tokens) {
  const RouterConfig& config = ckpt.config;
  validate_tokens(config, tokens);

  const int n = static_cast<int>(tokens.size());
  const int d = config.hidden_dim;
  const int heads = config.attn_heads;
  const int dh = d / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor repr(n, d);
  for (int t = 0; t < n; ++t) {
    const double* src = ckpt.embedding.data.data() + static_cast<size_t>(tokens[static_cast<size_t>(t)]) * d;
    double* dst = repr.data.data() + static_cast<size_t>(t) * d;
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }

  for (const auto& block : ckpt.blocks) {
    const Tensor q = mat_mul(repr, block.attn.wq);
    const Tensor kk = mat_mul(repr, block.attn.wk);
    const Tensor v = mat_mul(repr, block.attn.wv);

    Tensor mixed(n, d);
    for (int head = 0; head < heads; ++head) {
      const int off = head * dh;
      Tensor scores(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          double acc = 0.0;
          for (int j = 0; j < dh; ++j) acc += q.at(a, off + j) * kk.at(b, off + j);
          scores.at(a, b) = acc * attn_scale;
        }
      softmax_rows_inplace(scores);
      for (int a = 0; a < n; ++a)
        for (int j = 0; j < dh; ++j) {
          double acc = 0.0;
          for (int b = 0; b < n; ++b) acc += scores.at(a, b) * v.at(b, off + j);
          mixed.at(a, off + j) = acc;
        }
    }
    const Tensor attn_out = mat_mul(mixed, block.attn.wo);
    for (size_t i = 0; i < repr.data.size(); ++i) repr.data[i] += attn_out.data[i];

    const Tensor moe_out =
        dual_gate_moe_layer(repr, block.gates, block.experts, config.tokens_per_expert);
    for (size_t i = 0; i < repr.data.size(); ++i) repr.data[i] += moe_out.data[i];
  }

  std::vector<double> pooled(static_cast<size_t>(d), 0.0);
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < d; ++j) pooled[static_cast<size_t>(j)] += repr.at(t, j);
  for (double& v : pooled) v /= n;

  Prediction pred;
  pred.per_metric.reserve(ckpt.heads.size());
  const std::vector<double> weights = config.weights_or_uniform();
  // Centered like the quality-side aggregate so exact head parity recombines
  // to exactly 0.5.
  double centered = 0.0;
  for (size_t i = 0; i < ckpt.heads.size(); ++i) {
    double z = ckpt.heads[i].bias.data[0];
    for (int j = 0; j < d; ++j) z += pooled[static_cast<size_t>(j)] * ckpt.heads[i].weight.data[static_cast<size_t>(j)];
    const double p = 1.0 / (1.0 + std::exp(-z));
    pred.per_metric.push_back(p);
    centered += weights[i] * (p - 0.5);
  }
  pred.prs = centered + 0.5;
  return pred;
}

ad::Var build_forward(ad::Graph& graph, Checkpoint& ckpt, std::span<const int> tokens,
                      std::string* selection_sig) {
  const RouterConfig& config = ckpt.config;
  validate_tokens(config, tokens);

  const int n = static_cast<int>(tokens.size());
  const int d = config.hidden_dim;
  const int k = config.expert_count;
  const int heads = config.attn_heads;
  const int dh = d / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var repr = graph.row_select(graph.leaf(ckpt.embedding),
                                  std::vector<int>(tokens.begin(), tokens.end()));

  for (auto& block : ckpt.blocks) {
    // Self-attention with residual.
    ad::Var q = graph.matmul(repr, graph.leaf(block.attn.wq));
    ad::Var kk = graph.matmul(repr, graph.leaf(block.attn.wk));
    ad::Var v = graph.matmul(repr, graph.leaf(block.attn.wv));
    std::vector<ad::Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int head = 0; head < heads; ++head) {
      const int off = head * dh;
      ad::Var qh = graph.col_slice(q, off, dh);
      ad::Var kh = graph.col_slice(kk, off, dh);
      ad::Var vh = graph.col_slice(v, off, dh);
      ad::Var scores = graph.scale(graph.matmul(qh, graph.transpose(kh)), attn_scale);
      ad::Var probs = graph.softmax_rows(scores);
      head_outs.push_back(graph.matmul(probs, vh));
    }
    ad::Var mixed = graph.concat_cols(head_outs);
    repr = graph.add(repr, graph.matmul(mixed, graph.leaf(block.attn.wo)));

    // Dual-gate token mixture with residual. Top-K masks are forward-time
    // constants; gradients flow through the selected affinities only.
    ad::Var polarity[2];
    for (int o = 0; o < 2; ++o) {
      ad::Tensor& embed = (o == 0) ? block.gates.embed_pos : block.gates.embed_neg;
      auto& proj = (o == 0) ? block.experts.proj_pos : block.experts.proj_neg;
      ad::Var affinity =
          graph.softmax_rows(graph.matmul(repr, graph.transpose(graph.leaf(embed))));
      const std::vector<uint8_t> mask =
          select_top_k(graph.value(affinity), config.tokens_per_expert);
      if (selection_sig) {
        selection_sig->reserve(selection_sig->size() + mask.size());
        for (uint8_t m : mask) selection_sig->push_back(m ? '1' : '0');
      }
      ad::Tensor mask_t(n, k);
      for (size_t i = 0; i < mask.size(); ++i) mask_t.data[i] = mask[i] ? 1.0 : 0.0;

      ad::Var masked = graph.mul(affinity, graph.constant(std::move(mask_t)));
      ad::Var row_sum = graph.matmul(masked, graph.constant(ad::Tensor(k, 1, 1.0)));
      // Tokens selected by no expert get a unit denominator; their masked
      // affinities are all zero, so the mixture stays a zero vector.
      ad::Tensor empty_fix(n, 1);
      for (int t = 0; t < n; ++t) {
        bool any = false;
        for (int i = 0; i < k; ++i) any = any || mask[static_cast<size_t>(t) * k + i];
        empty_fix.data[static_cast<size_t>(t)] = any ? 0.0 : 1.0;
      }
      ad::Var safe_sum = graph.add(row_sum, graph.constant(std::move(empty_fix)));
      ad::Var lambda = graph.rows_div(masked, safe_sum);

      ad::Var acc;
      for (int i = 0; i < k; ++i) {
        ad::Var impact = graph.matmul(graph.matmul(repr, graph.leaf(proj[static_cast<size_t>(i)])),
                                      graph.leaf(block.experts.score[static_cast<size_t>(i)]));
        ad::Var contrib = graph.rows_scale(impact, graph.col_slice(lambda, i, 1));
        acc = acc.valid() ? graph.add(acc, contrib) : contrib;
      }
      polarity[o] = acc;
    }
    repr = graph.add(repr, graph.sigmoid(graph.sub(polarity[0], polarity[1])));
  }

  ad::Var pooled = graph.mean_rows(repr);
  std::vector<ad::Var> head_preds;
  head_preds.reserve(ckpt.heads.size());
  for (auto& head : ckpt.heads) {
    ad::Var z = graph.add(graph.matmul(pooled, graph.leaf(head.weight)), graph.leaf(head.bias));
    head_preds.push_back(graph.sigmoid(z));
  }
  return graph.concat_cols(head_preds);
}

double mse_loss(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw_error(ErrorCategory::dimension, "prediction and target lengths differ");
  }
  double acc = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double diff = predictions[i] - targets[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(predictions.size());
}

ad::Var build_mse_loss(ad::Graph& graph, ad::Var prediction_row,
                       std::span<const double> targets) {
  const ad::Tensor& pred = graph.value(prediction_row);
  if (pred.rows != 1 || static_cast<size_t>(pred.cols) != targets.size()) {
    throw_error(ErrorCategory::dimension, "loss target length does not match prediction row");
  }
  ad::Tensor target_t(1, static_cast<int>(targets.size()));
  for (size_t i = 0; i < targets.size(); ++i) target_t.data[i] = targets[i];
  ad::Var diff = graph.sub(prediction_row, graph.constant(std::move(target_t)));
  return graph.scale(graph.sum_all(graph.mul(diff, diff)),
                     1.0 / static_cast<double>(targets.size()));
}

Checkpoint train(std::span<const TrainExample> examples, const RouterConfig& config) {
  config.validate();
  if (examples.empty()) {
    throw_error(ErrorCategory::invalid_input, "training set is empty");
  }
  for (const auto& ex : examples) {
    if (ex.target_distances.size() != static_cast<size_t>(config.metric_count)) {
      throw_error(ErrorCategory::dimension, "training target length must equal metric_count");
    }
  }

  Checkpoint ckpt = init_checkpoint(config);
  std::vector<ad::Tensor*> params = parameters(ckpt);

  struct AdamState {
    std::vector<double> m, v;
  };
  std::vector<AdamState> adam(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    adam[i].m.assign(params[i]->data.size(), 0.0);
    adam[i].v.assign(params[i]->data.size(), 0.0);
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;

  Rng order_rng(config.seed + 1);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      const size_t batch_n = stop - start;

      ad::Graph graph;
      ad::Var total;
      for (size_t pos = start; pos < stop; ++pos) {
        const TrainExample& ex = examples[order[pos]];
        ad::Var pred = build_forward(graph, ckpt, ex.tokens);
        ad::Var loss = build_mse_loss(graph, pred, ex.target_distances);
        total = total.valid() ? graph.add(total, loss) : loss;
      }
      ad::Var batch_loss = graph.scale(total, 1.0 / static_cast<double>(batch_n));

      for (ad::Tensor* p : params) p->zero_grad();
      graph.backward(batch_loss);
      epoch_loss += graph.scalar(batch_loss) * static_cast<double>(batch_n);

      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (size_t i = 0; i < params.size(); ++i) {
        ad::Tensor& p = *params[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
          double g = p.grad[j];
          if (config.weight_decay != 0.0) g += config.weight_decay * p.data[j];
          adam[i].m[j] = beta1 * adam[i].m[j] + (1.0 - beta1) * g;
          adam[i].v[j] = beta2 * adam[i].v[j] + (1.0 - beta2) * g * g;
          const double mhat = adam[i].m[j] / bc1;
          const double vhat = adam[i].v[j] / bc2;
          p.data[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + eps);
        }
      }
    }
    ckpt.loss_history.push_back(epoch_loss / static_cast<double>(examples.size()));
    ++ckpt.epochs_trained;
  }
  return ckpt;
}

}  // namespace prsr::router

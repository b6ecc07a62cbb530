#include <cstring>
#include <fstream>

#include "prsr/errors.hpp"
#include "prsr/router.hpp"

namespace prsr::router {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'S', 'R', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

// Little-endian byte-level encoding keeps checkpoints portable and makes the
// save -> load -> save byte identity independent of host struct layout.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  int32_t i32() { return static_cast<int32_t>(u32()); }

  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void raw(char* dst, size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw_error(ErrorCategory::parse, path_ + ": truncated checkpoint file");
    }
  }
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

// Zero parameters in the exact shapes the config implies; loading fills them.
Checkpoint shaped_checkpoint(const RouterConfig& config) {
  Checkpoint ckpt;
  ckpt.config = config;
  const int d = config.hidden_dim;
  const int k = config.expert_count;
  const int l = config.expert_rank;
  const int h = config.expert_out_dim;

  auto param = [](int rows, int cols) {
    ad::Tensor t(rows, cols);
    t.set_requires_grad(true);
    return t;
  };

  ckpt.embedding = param(config.vocab_size, d);
  ckpt.blocks.resize(static_cast<size_t>(config.layer_count));
  for (auto& block : ckpt.blocks) {
    block.attn.wq = param(d, d);
    block.attn.wk = param(d, d);
    block.attn.wv = param(d, d);
    block.attn.wo = param(d, d);
    block.gates.embed_pos = param(k, d);
    block.gates.embed_neg = param(k, d);
    for (int i = 0; i < k; ++i) {
      block.experts.proj_pos.push_back(param(d, l));
      block.experts.proj_neg.push_back(param(d, l));
      block.experts.score.push_back(param(l, h));
    }
  }
  ckpt.heads.resize(static_cast<size_t>(config.metric_count));
  for (auto& head : ckpt.heads) {
    head.weight = param(d, 1);
    head.bias = param(1, 1);
  }
  return ckpt;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);

  const RouterConfig& c = ckpt.config;
  put_i32(out, c.vocab_size);
  put_i32(out, c.hidden_dim);
  put_i32(out, c.expert_count);
  put_i32(out, c.tokens_per_expert);
  put_i32(out, c.expert_rank);
  put_i32(out, c.expert_out_dim);
  put_i32(out, c.max_tokens);
  put_i32(out, c.layer_count);
  put_i32(out, c.attn_heads);
  put_i32(out, c.metric_count);
  put_f64(out, c.temperature);
  put_u32(out, static_cast<uint32_t>(c.metric_weights.size()));
  for (double w : c.metric_weights) put_f64(out, w);
  put_f64(out, c.learning_rate);
  put_f64(out, c.weight_decay);
  put_i32(out, c.batch_size);
  put_i32(out, c.epochs);
  put_u64(out, c.seed);

  put_u32(out, ckpt.epochs_trained);
  put_u32(out, static_cast<uint32_t>(ckpt.loss_history.size()));
  for (double v : ckpt.loss_history) put_f64(out, v);

  // parameters() is const-incompatible by design; serialize through a copy of
  // the pointer list on a mutable alias.
  auto& mutable_ckpt = const_cast<Checkpoint&>(ckpt);
  std::vector<ad::Tensor*> params = parameters(mutable_ckpt);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const ad::Tensor* t : params) {
    put_u32(out, static_cast<uint32_t>(t->rows));
    put_u32(out, static_cast<uint32_t>(t->cols));
    for (double v : t->data) put_f64(out, v);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open checkpoint file for writing: " + path.string());
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw_error(ErrorCategory::io, "failed writing checkpoint file: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open checkpoint file: " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());

  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw_error(ErrorCategory::parse, path.string() + ": not a checkpoint file (bad magic)");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw_error(ErrorCategory::parse,
                path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }

  RouterConfig c;
  c.vocab_size = r.i32();
  c.hidden_dim = r.i32();
  c.expert_count = r.i32();
  c.tokens_per_expert = r.i32();
  c.expert_rank = r.i32();
  c.expert_out_dim = r.i32();
  c.max_tokens = r.i32();
  c.layer_count = r.i32();
  c.attn_heads = r.i32();
  c.metric_count = r.i32();
  c.temperature = r.f64();
  const uint32_t weight_count = r.u32();
  c.metric_weights.resize(weight_count);
  for (auto& w : c.metric_weights) w = r.f64();
  c.learning_rate = r.f64();
  c.weight_decay = r.f64();
  c.batch_size = r.i32();
  c.epochs = r.i32();
  c.seed = r.u64();
  c.validate();

  Checkpoint ckpt = shaped_checkpoint(c);
  ckpt.epochs_trained = r.u32();
  const uint32_t loss_count = r.u32();
  ckpt.loss_history.resize(loss_count);
  for (auto& v : ckpt.loss_history) v = r.f64();

  std::vector<ad::Tensor*> params = parameters(ckpt);
  const uint32_t tensor_count = r.u32();
  if (tensor_count != params.size()) {
    throw_error(ErrorCategory::parse,
                path.string() + ": tensor count mismatch, file has " +
                    std::to_string(tensor_count) + ", config implies " +
                    std::to_string(params.size()));
  }
  for (ad::Tensor* t : params) {
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    if (rows != static_cast<uint32_t>(t->rows) || cols != static_cast<uint32_t>(t->cols)) {
      throw_error(ErrorCategory::parse, path.string() + ": tensor shape mismatch");
    }
    for (double& v : t->data) v = r.f64();
  }
  if (!r.exhausted()) {
    throw_error(ErrorCategory::parse, path.string() + ": trailing bytes after checkpoint");
  }
  return ckpt;
}

}  // namespace prsr::router

#include "vsteer/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "vsteer/tokenizer.hpp"

namespace vsteer::model {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'T', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kInitScale = 0.02;
constexpr double kMaskValue = -1e30;

// Portable Gaussian stream: Box-Muller over mt19937_64 draws, independent of
// the standard library's distribution implementations.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1p-53;
    double u2 = static_cast<double>(rng_() >> 11) * 0x1p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  void fill(ad::Array& arr, double scale) {
    for (auto& v : arr.data) v = scale * next();
  }

 private:
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0;
};

template <typename Params, typename Ref>
std::vector<Ref> collect_refs(Params& p) {
  std::vector<Ref> out;
  out.push_back({"token_embedding", &p.token_embedding});
  out.push_back({"pos_embedding", &p.pos_embedding});
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& lay = p.layers[l];
    std::string pre = "layer" + std::to_string(l) + ".";
    out.push_back({pre + "ln1_gain", &lay.ln1_gain});
    out.push_back({pre + "ln1_bias", &lay.ln1_bias});
    out.push_back({pre + "wq", &lay.wq});
    out.push_back({pre + "wk", &lay.wk});
    out.push_back({pre + "wv", &lay.wv});
    out.push_back({pre + "wo", &lay.wo});
    out.push_back({pre + "ln2_gain", &lay.ln2_gain});
    out.push_back({pre + "ln2_bias", &lay.ln2_bias});
    out.push_back({pre + "ff_w1", &lay.ff_w1});
    out.push_back({pre + "ff_b1", &lay.ff_b1});
    out.push_back({pre + "ff_w2", &lay.ff_w2});
    out.push_back({pre + "ff_b2", &lay.ff_b2});
  }
  out.push_back({"final_ln_gain", &p.final_ln_gain});
  out.push_back({"final_ln_bias", &p.final_ln_bias});
  out.push_back({"output_projection", &p.output_projection});
  out.push_back({"alpha", &p.alpha});
  out.push_back({"class_bias", &p.class_bias});
  return out;
}

ModelParameters allocate(const ModelConfig& cfg) {
  cfg.validate();
  ModelParameters p;
  p.config = cfg;
  size_t e = cfg.embed_dim, v = cfg.vocab_size, c = cfg.context_length;
  size_t h = 4 * e;
  p.token_embedding = ad::Array({v, e});
  p.pos_embedding = ad::Array({c, e});
  p.layers.resize(cfg.num_layers);
  for (auto& lay : p.layers) {
    lay.ln1_gain = ad::Array({e});
    lay.ln1_bias = ad::Array({e});
    lay.wq = ad::Array({e, e});
    lay.wk = ad::Array({e, e});
    lay.wv = ad::Array({e, e});
    lay.wo = ad::Array({e, e});
    lay.ln2_gain = ad::Array({e});
    lay.ln2_bias = ad::Array({e});
    lay.ff_w1 = ad::Array({e, h});
    lay.ff_b1 = ad::Array({h});
    lay.ff_w2 = ad::Array({h, e});
    lay.ff_b2 = ad::Array({e});
  }
  p.final_ln_gain = ad::Array({e});
  p.final_ln_bias = ad::Array({e});
  p.output_projection = ad::Array({e, v});
  p.alpha = ad::Array::scalar(0.0);
  p.class_bias = ad::Array({2});
  return p;
}

ad::Array causal_mask(size_t t) {
  ad::Array m({t, t}, 0.0);
  for (size_t r = 0; r < t; ++r)
    for (size_t c = r + 1; c < t; ++c) m.at(r, c) = kMaskValue;
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (context_length < 2) throw std::invalid_argument("model config: context_length must be >= 2");
  if (embed_dim == 0 || num_layers == 0 || num_heads == 0 || vocab_size == 0) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw std::invalid_argument("model config: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  }
}

std::vector<ParamRef> param_refs(ModelParameters& p) {
  return collect_refs<ModelParameters, ParamRef>(p);
}

std::vector<ConstParamRef> param_refs(const ModelParameters& p) {
  return collect_refs<const ModelParameters, ConstParamRef>(p);
}

size_t param_count(const ModelParameters& p) {
  size_t n = 0;
  for (const auto& r : param_refs(p)) n += r.array->size();
  return n;
}

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t vocab_hash) {
  ModelParameters p = allocate(config);
  p.vocab_hash = vocab_hash;
  GaussianStream g(config.seed);
  g.fill(p.token_embedding, kInitScale);
  g.fill(p.pos_embedding, kInitScale);
  for (auto& lay : p.layers) {
    for (auto& v : lay.ln1_gain.data) v = 1.0;
    g.fill(lay.wq, kInitScale);
    g.fill(lay.wk, kInitScale);
    g.fill(lay.wv, kInitScale);
    g.fill(lay.wo, kInitScale);
    for (auto& v : lay.ln2_gain.data) v = 1.0;
    g.fill(lay.ff_w1, kInitScale);
    g.fill(lay.ff_w2, kInitScale);
  }
  for (auto& v : p.final_ln_gain.data) v = 1.0;
  g.fill(p.output_projection, kInitScale);
  p.alpha.data[0] = 1.0;

  // Both control codes start with the same embedding row: the conditional
  // model is exactly class-symmetric until training tells the codes apart.
  size_t e = config.embed_dim;
  if (config.vocab_size > tokenizer::Vocab::kCtrlNeg) {
    std::copy_n(&p.token_embedding.data[tokenizer::Vocab::kCtrlPos * e], e,
                &p.token_embedding.data[tokenizer::Vocab::kCtrlNeg * e]);
  }
  return p;
}

void validate_sequence(const ControlledSequence& seq, const ModelConfig& config) {
  if (seq.tokens.size() < 2) {
    throw std::invalid_argument("sequence needs an anchor token plus at least one scored token");
  }
  if (seq.tokens.size() > config.context_length) {
    throw std::invalid_argument("sequence length " + std::to_string(seq.tokens.size()) +
                                " exceeds context " + std::to_string(config.context_length));
  }
  if (seq.control == Control::kPos && seq.tokens[0] != tokenizer::Vocab::kCtrlPos) {
    throw std::invalid_argument("positive-control sequence must start with the positive code");
  }
  if (seq.control == Control::kNeg && seq.tokens[0] != tokenizer::Vocab::kCtrlNeg) {
    throw std::invalid_argument("negative-control sequence must start with the negative code");
  }
}

BoundModel::BoundModel(ad::Tape& tape, const ModelParameters& params, bool for_training)
    : tape_(tape), cfg_(params.config) {
  cfg_.validate();
  auto refs = param_refs(params);
  nodes_.reserve(refs.size());
  for (const auto& r : refs) nodes_.push_back(tape_.input(*r.array, for_training));

  size_t i = 0;
  tok_emb_ = nodes_[i++];
  pos_emb_ = nodes_[i++];
  layers_.resize(cfg_.num_layers);
  for (auto& lay : layers_) {
    lay.ln1_gain = nodes_[i++];
    lay.ln1_bias = nodes_[i++];
    lay.wq = nodes_[i++];
    lay.wk = nodes_[i++];
    lay.wv = nodes_[i++];
    lay.wo = nodes_[i++];
    lay.ln2_gain = nodes_[i++];
    lay.ln2_bias = nodes_[i++];
    lay.ff_w1 = nodes_[i++];
    lay.ff_b1 = nodes_[i++];
    lay.ff_w2 = nodes_[i++];
    lay.ff_b2 = nodes_[i++];
  }
  final_gain_ = nodes_[i++];
  final_bias_ = nodes_[i++];
  out_proj_ = nodes_[i++];
  alpha_ = nodes_[i++];
  class_bias_ = nodes_[i++];
}

ad::Tape::Node BoundModel::logprobs(const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty context");
  if (tokens.size() > cfg_.context_length) {
    throw std::invalid_argument("forward: context length " + std::to_string(tokens.size()) +
                                " exceeds " + std::to_string(cfg_.context_length));
  }
  size_t t = tokens.size();
  size_t d = cfg_.head_dim();

  std::vector<int> positions(t);
  for (size_t p = 0; p < t; ++p) positions[p] = static_cast<int>(p);
  auto x = tape_.add(tape_.embedding_lookup(tok_emb_, tokens),
                     tape_.embedding_lookup(pos_emb_, positions));

  ad::Array mask = causal_mask(t);
  double att_scale = 1.0 / std::sqrt(static_cast<double>(d));

  for (const auto& lay : layers_) {
    auto h = tape_.layer_norm(x, lay.ln1_gain, lay.ln1_bias);
    auto q = tape_.matmul(h, lay.wq);
    auto k = tape_.matmul(h, lay.wk);
    auto v = tape_.matmul(h, lay.wv);

    ad::Tape::Node merged = -1;
    for (size_t head = 0; head < cfg_.num_heads; ++head) {
      auto qi = tape_.slice_cols(q, head * d, d);
      auto ki = tape_.slice_cols(k, head * d, d);
      auto vi = tape_.slice_cols(v, head * d, d);
      auto scores = tape_.scale(tape_.matmul(qi, tape_.transpose(ki)), att_scale);
      auto att = tape_.exp_act(tape_.log_softmax(tape_.add_constant(scores, mask)));
      auto oi = tape_.matmul(att, vi);
      merged = head == 0 ? oi : tape_.concat_cols(merged, oi);
    }
    x = tape_.add(x, tape_.matmul(merged, lay.wo));

    auto h2 = tape_.layer_norm(x, lay.ln2_gain, lay.ln2_bias);
    auto f1 = tape_.tanh_act(tape_.bias_add(tape_.matmul(h2, lay.ff_w1), lay.ff_b1));
    auto f2 = tape_.bias_add(tape_.matmul(f1, lay.ff_w2), lay.ff_b2);
    x = tape_.add(x, f2);
  }

  auto final_h = tape_.layer_norm(x, final_gain_, final_bias_);
  return tape_.log_softmax(tape_.matmul(final_h, out_proj_));
}

ad::Array all_logprobs(const ModelParameters& params, const std::vector<int>& tokens) {
  ad::Tape tape;
  BoundModel m(tape, params, false);
  return tape.value(m.logprobs(tokens));
}

std::vector<double> next_token_logprobs(const ModelParameters& params,
                                        const std::vector<int>& context) {
  ad::Array lp = all_logprobs(params, context);
  size_t v = params.config.vocab_size;
  size_t last = context.size() - 1;
  return {lp.data.begin() + static_cast<long>(last * v),
          lp.data.begin() + static_cast<long>((last + 1) * v)};
}

double sequence_log_prob(const ModelParameters& params, const ControlledSequence& seq) {
  validate_sequence(seq, params.config);
  std::vector<int> context(seq.tokens.begin(), seq.tokens.end() - 1);
  ad::Array lp = all_logprobs(params, context);
  size_t v = params.config.vocab_size;
  double total = 0;
  for (size_t t = 1; t < seq.tokens.size(); ++t) {
    total += lp.data[(t - 1) * v + static_cast<size_t>(seq.tokens[t])];
  }
  return total;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace

void save_checkpoint(const ModelParameters& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kFormatVersion);
  const ModelConfig& c = params.config;
  put_u64(os, c.context_length);
  put_u64(os, c.embed_dim);
  put_u64(os, c.num_layers);
  put_u64(os, c.num_heads);
  put_u64(os, c.vocab_size);
  put_u64(os, c.seed);
  put_u64(os, params.vocab_hash);
  auto refs = param_refs(params);
  put_u64(os, refs.size());
  for (const auto& r : refs) {
    put_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<long>(r.name.size()));
    put_u32(os, static_cast<std::uint32_t>(r.array->shape.size()));
    for (size_t d : r.array->shape) put_u64(os, d);
    for (double v : r.array->data) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

ModelParameters load_checkpoint(const std::filesystem::path& path,
                                std::optional<std::uint64_t> expect_vocab_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = get_u32(is);
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.context_length = get_u64(is);
  c.embed_dim = get_u64(is);
  c.num_layers = get_u64(is);
  c.num_heads = get_u64(is);
  c.vocab_size = get_u64(is);
  c.seed = get_u64(is);
  ModelParameters p = allocate(c);
  p.vocab_hash = get_u64(is);
  if (expect_vocab_hash && *expect_vocab_hash != p.vocab_hash) {
    throw std::runtime_error("checkpoint was trained with a different vocabulary");
  }
  auto refs = param_refs(p);
  std::uint64_t count = get_u64(is);
  if (count != refs.size()) {
    throw std::runtime_error("checkpoint tensor count mismatch");
  }
  for (auto& r : refs) {
    std::uint32_t name_len = get_u32(is);
    if (name_len > 4096) throw std::runtime_error("checkpoint tensor name length implausible");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint truncated");
    if (name != r.name) {
      throw std::runtime_error("checkpoint tensor order mismatch: expected " + r.name + ", got " +
                               name);
    }
    std::uint32_t ndims = get_u32(is);
    std::vector<size_t> shape(ndims);
    for (auto& d : shape) d = get_u64(is);
    if (shape != r.array->shape) {
      throw std::runtime_error("checkpoint tensor shape mismatch for " + r.name);
    }
    for (auto& v : r.array->data) v = get_f64(is);
  }
  if (!is) throw std::runtime_error("checkpoint truncated: " + path.string());
  return p;
}

}  // namespace vsteer::model

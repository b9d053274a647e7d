#include "vsteer/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vsteer::training {

namespace {

std::vector<double> ones(size_t n) { return std::vector<double>(n, 1.0); }

std::uint64_t epoch_seed(std::uint64_t base, size_t epoch) {
  return base ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
}

// One class-agnostic sequence: cross entropy over the scored positions.
double example_ce(const model::ModelParameters& params, const model::ControlledSequence& seq,
                  const std::vector<double>& mask_in, double contribution_scale,
                  std::vector<ad::Array>* grad_accum) {
  model::validate_sequence(seq, params.config);
  std::vector<int> ctx(seq.tokens.begin(), seq.tokens.end() - 1);
  std::vector<int> targets(seq.tokens.begin() + 1, seq.tokens.end());
  std::vector<double> mask = mask_in.empty() ? ones(targets.size()) : mask_in;
  if (mask.size() != targets.size()) {
    throw std::invalid_argument("loss mask length does not match scored positions");
  }

  ad::Tape tape;
  model::BoundModel m(tape, params, grad_accum != nullptr);
  auto ce = tape.cross_entropy_from_logprobs(m.logprobs(ctx), targets, mask);
  double value = tape.value(ce).data[0];
  if (grad_accum) {
    tape.backward(tape.scale(ce, contribution_scale));
    const auto& nodes = m.param_nodes();
    for (size_t i = 0; i < nodes.size(); ++i) {
      const ad::Array& g = tape.gradient(nodes[i]);
      for (size_t j = 0; j < g.size(); ++j) (*grad_accum)[i].data[j] += g.data[j];
    }
  }
  return value;
}

struct GenerativeDiscriminative {
  double g = 0;
  double d = 0;
};

// Both class-conditional forwards for one labeled example. The generative
// part scores the sequence under its own control code; the discriminative
// part is the negative log posterior of the true class. With grad_accum set,
// gradients of contribution_scale * (lambda*g + (1-lambda)*d) are added.
GenerativeDiscriminative eval_labeled(const model::ModelParameters& params,
                                      const model::ControlledSequence& seq,
                                      const std::vector<double>& mask_in, double lambda,
                                      double contribution_scale,
                                      std::vector<ad::Array>* grad_accum) {
  using tokenizer::Vocab;
  if (seq.control == model::Control::kNone) {
    throw std::invalid_argument("labeled example lacks a control prefix");
  }
  if (!seq.label) throw std::invalid_argument("labeled example lacks a class label");
  bool pos = *seq.label;
  if (pos != (seq.control == model::Control::kPos)) {
    throw std::invalid_argument("control prefix does not match the class label");
  }
  model::validate_sequence(seq, params.config);

  std::vector<int> x(seq.tokens.begin() + 1, seq.tokens.end());
  std::vector<double> mask = mask_in.empty() ? ones(x.size()) : mask_in;
  if (mask.size() != x.size()) {
    throw std::invalid_argument("loss mask length does not match scored positions");
  }

  ad::Tape tape;
  model::BoundModel m(tape, params, grad_accum != nullptr);

  auto ctx_for = [&x](int code) {
    std::vector<int> ctx;
    ctx.reserve(x.size());
    ctx.push_back(code);
    ctx.insert(ctx.end(), x.begin(), x.end() - 1);
    return ctx;
  };
  auto lp_pos = m.logprobs(ctx_for(Vocab::kCtrlPos));
  auto lp_neg = m.logprobs(ctx_for(Vocab::kCtrlNeg));
  auto full = ones(x.size());
  auto ll_pos = tape.gather_sum(lp_pos, x, full);
  auto ll_neg = tape.gather_sum(lp_neg, x, full);

  auto ce_true = tape.cross_entropy_from_logprobs(pos ? lp_pos : lp_neg, x, mask);

  double inv_len = 1.0 / static_cast<double>(x.size());
  auto zp = tape.add(tape.pick(m.class_bias_node(), 0),
                     tape.scale(tape.mul(m.alpha_node(), ll_pos), inv_len));
  auto zn = tape.add(tape.pick(m.class_bias_node(), 1),
                     tape.scale(tape.mul(m.alpha_node(), ll_neg), inv_len));
  auto logpost = tape.log_softmax(tape.stack_scalars({zp, zn}));
  auto ld = tape.scale(tape.pick(logpost, pos ? 0 : 1), -1.0);

  GenerativeDiscriminative out{tape.value(ce_true).data[0], tape.value(ld).data[0]};
  if (grad_accum) {
    auto total = tape.add(tape.scale(ce_true, lambda), tape.scale(ld, 1.0 - lambda));
    tape.backward(tape.scale(total, contribution_scale));
    const auto& nodes = m.param_nodes();
    for (size_t i = 0; i < nodes.size(); ++i) {
      const ad::Array& g = tape.gradient(nodes[i]);
      for (size_t j = 0; j < g.size(); ++j) (*grad_accum)[i].data[j] += g.data[j];
    }
  }
  return out;
}

const std::vector<double>& mask_for(const LabeledBatch& batch, size_t i) {
  static const std::vector<double> kEmpty;
  return batch.masks.empty() ? kEmpty : batch.masks[i];
}

void check_lambda(double lambda) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("lambda must lie in [0,1]");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (lr_init <= 0) throw std::invalid_argument("train config: lr_init must be positive");
  if (lr_min < 0 || lr_min > lr_init) {
    throw std::invalid_argument("train config: lr_min must lie in [0, lr_init]");
  }
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1) {
    throw std::invalid_argument("train config: betas must lie in (0,1)");
  }
  check_lambda(lambda);
  if (heldout_fraction < 0 || heldout_fraction >= 1) {
    throw std::invalid_argument("train config: heldout_fraction must lie in [0,1)");
  }
}

std::vector<ad::Array> zero_like_params(const model::ModelParameters& params) {
  std::vector<ad::Array> out;
  for (const auto& r : param_refs(params)) out.emplace_back(r.array->shape, 0.0);
  return out;
}

AdamState make_adam_state(const model::ModelParameters& params) {
  AdamState s;
  s.m = zero_like_params(params);
  s.v = zero_like_params(params);
  return s;
}

double cosine_lr(size_t step, size_t total_steps, double lr_init, double lr_min) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond total_steps");
  double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

void adam_step(model::ModelParameters& params, const std::vector<ad::Array>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
  auto refs = param_refs(params);
  if (grads.size() != refs.size() || state.m.size() != refs.size()) {
    throw std::invalid_argument("adam_step: gradient/state count mismatch");
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < refs.size(); ++i) {
    ad::Array& p = *refs[i].array;
    const ad::Array& g = grads[i];
    if (g.shape != p.shape) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + refs[i].name);
    }
    for (size_t j = 0; j < p.size(); ++j) {
      double gv = g.data[j];
      if (std::isnan(gv)) {
        throw std::runtime_error("NaN gradient for parameter " + refs[i].name);
      }
      double m = state.m[i].data[j] = beta1 * state.m[i].data[j] + (1 - beta1) * gv;
      double v = state.v[i].data[j] = beta2 * state.v[i].data[j] + (1 - beta2) * gv * gv;
      p.data[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
  }
}

double nll_loss(const model::ModelParameters& params,
                const std::vector<model::ControlledSequence>& batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  double total = 0;
  for (const auto& seq : batch) total += example_ce(params, seq, {}, 1.0, nullptr);
  return total / static_cast<double>(batch.size());
}

double masked_nll_with_grads(const model::ModelParameters& params,
                             const std::vector<model::ControlledSequence>& batch,
                             const std::vector<std::vector<double>>& masks,
                             std::vector<ad::Array>& grad_accum) {
  if (batch.empty()) throw std::invalid_argument("masked_nll_with_grads: empty batch");
  double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0;
  static const std::vector<double> kEmpty;
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& mask = masks.empty() ? kEmpty : masks[i];
    total += example_ce(params, batch[i], mask, scale, &grad_accum);
  }
  return total * scale;
}

double generative_loss(const model::ModelParameters& params, const LabeledBatch& batch) {
  if (batch.sequences.empty()) throw std::invalid_argument("generative_loss: empty batch");
  double total = 0;
  for (size_t i = 0; i < batch.sequences.size(); ++i) {
    total += eval_labeled(params, batch.sequences[i], mask_for(batch, i), 1.0, 1.0, nullptr).g;
  }
  return total / static_cast<double>(batch.sequences.size());
}

double discriminative_loss(const model::ModelParameters& params, const LabeledBatch& batch) {
  if (batch.sequences.empty()) throw std::invalid_argument("discriminative_loss: empty batch");
  double total = 0;
  for (size_t i = 0; i < batch.sequences.size(); ++i) {
    total += eval_labeled(params, batch.sequences[i], mask_for(batch, i), 0.0, 1.0, nullptr).d;
  }
  return total / static_cast<double>(batch.sequences.size());
}

double hybrid_loss(const model::ModelParameters& params, const LabeledBatch& batch,
                   double lambda) {
  check_lambda(lambda);
  if (batch.sequences.empty()) throw std::invalid_argument("hybrid_loss: empty batch");
  double total = 0;
  for (size_t i = 0; i < batch.sequences.size(); ++i) {
    auto gd = eval_labeled(params, batch.sequences[i], mask_for(batch, i), lambda, 1.0, nullptr);
    total += lambda * gd.g + (1.0 - lambda) * gd.d;
  }
  return total / static_cast<double>(batch.sequences.size());
}

double hybrid_loss_with_grads(const model::ModelParameters& params, const LabeledBatch& batch,
                              double lambda, std::vector<ad::Array>& grad_accum) {
  check_lambda(lambda);
  if (batch.sequences.empty()) throw std::invalid_argument("hybrid_loss_with_grads: empty batch");
  double scale = 1.0 / static_cast<double>(batch.sequences.size());
  double total = 0;
  for (size_t i = 0; i < batch.sequences.size(); ++i) {
    auto gd =
        eval_labeled(params, batch.sequences[i], mask_for(batch, i), lambda, scale, &grad_accum);
    total += lambda * gd.g + (1.0 - lambda) * gd.d;
  }
  return total * scale;
}

double posterior_from_loglikelihoods(double ll_pos, double ll_neg, double alpha, double bias_pos,
                                     double bias_neg, size_t length) {
  if (length == 0) {
    throw std::invalid_argument("class posterior undefined for an empty sequence");
  }
  double s = alpha / static_cast<double>(length);
  double d = (bias_neg + s * ll_neg) - (bias_pos + s * ll_pos);
  if (d > 0) {
    double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

std::pair<double, double> class_posteriors(const model::ModelParameters& params,
                                           const std::vector<int>& tokens) {
  if (tokens.empty()) {
    throw std::invalid_argument("class posterior undefined for an empty sequence");
  }
  model::ControlledSequence pos, neg;
  pos.tokens.reserve(tokens.size() + 1);
  pos.tokens.push_back(tokenizer::Vocab::kCtrlPos);
  pos.tokens.insert(pos.tokens.end(), tokens.begin(), tokens.end());
  pos.control = model::Control::kPos;
  neg.tokens = pos.tokens;
  neg.tokens[0] = tokenizer::Vocab::kCtrlNeg;
  neg.control = model::Control::kNeg;

  double ll_pos = model::sequence_log_prob(params, pos);
  double ll_neg = model::sequence_log_prob(params, neg);
  double p = posterior_from_loglikelihoods(ll_pos, ll_neg, params.alpha.data[0],
                                           params.class_bias.data[0], params.class_bias.data[1],
                                           tokens.size());
  return {p, 1.0 - p};
}

double class_posterior(const model::ModelParameters& params, const std::vector<int>& tokens) {
  return class_posteriors(params, tokens).first;
}

MaskedSequence sequence_from_instruction(const corpus::InstructionExample& ex,
                                         const tokenizer::Vocab& vocab) {
  auto ins = tokenizer::encode(ex.instruction, vocab);
  auto ans = tokenizer::encode(ex.answer, vocab);
  MaskedSequence out;
  out.seq.tokens.reserve(ins.size() + ans.size() + 2);
  out.seq.tokens.push_back(tokenizer::Vocab::kBos);
  out.seq.tokens.insert(out.seq.tokens.end(), ins.begin(), ins.end());
  out.seq.tokens.insert(out.seq.tokens.end(), ans.begin(), ans.end());
  out.seq.tokens.push_back(tokenizer::Vocab::kEos);
  out.seq.control = model::Control::kNone;
  // answers carry the learning signal; instruction positions are masked out
  out.mask.assign(ins.size(), 0.0);
  out.mask.insert(out.mask.end(), ans.size() + 1, 1.0);
  return out;
}

model::ControlledSequence controlled_sequence_from_text(const std::string& text,
                                                        const tokenizer::Vocab& vocab,
                                                        bool positive) {
  auto enc = tokenizer::encode(text, vocab);
  model::ControlledSequence seq;
  seq.tokens.reserve(enc.size() + 2);
  seq.tokens.push_back(positive ? tokenizer::Vocab::kCtrlPos : tokenizer::Vocab::kCtrlNeg);
  seq.tokens.insert(seq.tokens.end(), enc.begin(), enc.end());
  seq.tokens.push_back(tokenizer::Vocab::kEos);
  seq.control = positive ? model::Control::kPos : model::Control::kNeg;
  seq.label = positive;
  return seq;
}

model::ModelParameters train_generator(const std::vector<corpus::InstructionExample>& data,
                                       const tokenizer::Vocab& vocab,
                                       const model::ModelConfig& model_config,
                                       const TrainConfig& config, const LogSink& log) {
  config.validate();
  model_config.validate();
  if (data.empty()) throw std::invalid_argument("train_generator: empty corpus");
  if (model_config.vocab_size < vocab.size()) {
    throw std::invalid_argument("train_generator: model vocab smaller than tokenizer vocab");
  }

  std::vector<model::ControlledSequence> seqs;
  std::vector<std::vector<double>> masks;
  for (size_t i = 0; i < data.size(); ++i) {
    MaskedSequence ms = sequence_from_instruction(data[i], vocab);
    if (ms.seq.tokens.size() > model_config.context_length) {
      throw std::invalid_argument("train_generator: example " + std::to_string(i) + " has " +
                                  std::to_string(ms.seq.tokens.size()) +
                                  " tokens, context is " +
                                  std::to_string(model_config.context_length));
    }
    seqs.push_back(std::move(ms.seq));
    masks.push_back(std::move(ms.mask));
  }

  auto params = model::init_parameters(model_config, vocab.hash());
  auto state = make_adam_state(params);
  size_t n = seqs.size();
  size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  size_t total_steps = config.epochs * steps_per_epoch;
  size_t global_step = 0;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < n; start += config.batch_size) {
      size_t end = std::min(n, start + config.batch_size);
      std::vector<model::ControlledSequence> chunk;
      std::vector<std::vector<double>> chunk_masks;
      for (size_t k = start; k < end; ++k) {
        chunk.push_back(seqs[order[k]]);
        chunk_masks.push_back(masks[order[k]]);
      }
      auto grads = zero_like_params(params);
      double loss = masked_nll_with_grads(params, chunk, chunk_masks, grads);
      double lr = cosine_lr(global_step, total_steps, config.lr_init, config.lr_min);
      adam_step(params, grads, state, lr, config.beta1, config.beta2);
      ++global_step;
      if (log) log({epoch + 1, global_step, lr, loss, loss, 0.0, std::nullopt});
    }
  }
  return params;
}

model::ModelParameters train_discriminator(const std::vector<LabeledExample>& data,
                                           const tokenizer::Vocab& vocab,
                                           const model::ModelConfig& model_config,
                                           const TrainConfig& config, const LogSink& log) {
  config.validate();
  model_config.validate();
  if (data.empty()) throw std::invalid_argument("train_discriminator: empty corpus");
  if (model_config.vocab_size < vocab.size()) {
    throw std::invalid_argument("train_discriminator: model vocab smaller than tokenizer vocab");
  }

  std::vector<model::ControlledSequence> seqs;
  std::vector<size_t> pos_idx, neg_idx;
  for (size_t i = 0; i < data.size(); ++i) {
    auto seq = controlled_sequence_from_text(data[i].text, vocab, data[i].positive);
    if (seq.tokens.size() > model_config.context_length) {
      throw std::invalid_argument("train_discriminator: example " + std::to_string(i) + " has " +
                                  std::to_string(seq.tokens.size()) + " tokens, context is " +
                                  std::to_string(model_config.context_length));
    }
    (data[i].positive ? pos_idx : neg_idx).push_back(seqs.size());
    seqs.push_back(std::move(seq));
  }
  if (pos_idx.empty() || neg_idx.empty()) {
    throw std::invalid_argument("train_discriminator: both classes must be represented");
  }

  // stratified held-out split, deterministic in the seed
  std::vector<size_t> train_idx, held_idx;
  std::mt19937_64 split_rng(epoch_seed(config.seed, 0xD15C));
  for (auto* group : {&pos_idx, &neg_idx}) {
    std::shuffle(group->begin(), group->end(), split_rng);
    size_t held = static_cast<size_t>(config.heldout_fraction * static_cast<double>(group->size()));
    for (size_t k = 0; k < group->size(); ++k) {
      (k < held ? held_idx : train_idx).push_back((*group)[k]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(held_idx.begin(), held_idx.end());

  auto heldout_accuracy = [&](const model::ModelParameters& p) -> std::optional<double> {
    if (held_idx.empty()) return std::nullopt;
    size_t correct = 0;
    for (size_t i : held_idx) {
      std::vector<int> x(seqs[i].tokens.begin() + 1, seqs[i].tokens.end());
      bool predicted_pos = class_posterior(p, x) >= 0.5;
      if (predicted_pos == *seqs[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(held_idx.size());
  };

  auto params = model::init_parameters(model_config, vocab.hash());
  auto state = make_adam_state(params);
  size_t n = train_idx.size();
  size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  size_t total_steps = config.epochs * steps_per_epoch;
  size_t global_step = 0;

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (size_t start = 0; start < n; start += config.batch_size) {
      size_t end = std::min(n, start + config.batch_size);
      LabeledBatch batch;
      for (size_t k = start; k < end; ++k) batch.sequences.push_back(seqs[train_idx[k]]);

      auto grads = zero_like_params(params);
      double g_sum = 0, d_sum = 0;
      double scale = 1.0 / static_cast<double>(batch.sequences.size());
      for (const auto& seq : batch.sequences) {
        auto gd = eval_labeled(params, seq, {}, config.lambda, scale, &grads);
        g_sum += gd.g;
        d_sum += gd.d;
      }
      double lg = g_sum * scale, ld = d_sum * scale;
      double loss = config.lambda * lg + (1.0 - config.lambda) * ld;
      double lr = cosine_lr(global_step, total_steps, config.lr_init, config.lr_min);
      adam_step(params, grads, state, lr, config.beta1, config.beta2);
      ++global_step;
      if (log) {
        bool epoch_end = end == n;
        log({epoch + 1, global_step, lr, loss, lg, ld,
             epoch_end ? heldout_accuracy(params) : std::nullopt});
      }
    }
  }
  return params;
}

}  // namespace vsteer::training

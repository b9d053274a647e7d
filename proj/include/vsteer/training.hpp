#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vsteer/corpus.hpp"
#include "vsteer/model.hpp"
#include "vsteer/tokenizer.hpp"

namespace vsteer::training {

struct TrainConfig {
  size_t epochs = 1;
  size_t batch_size = 8;
  double lr_init = 3e-4;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double lambda = 0.5;  // generative weight in the hybrid objective
  double heldout_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  std::vector<ad::Array> m;
  std::vector<ad::Array> v;
  size_t step = 0;
};

AdamState make_adam_state(const model::ModelParameters& params);
std::vector<ad::Array> zero_like_params(const model::ModelParameters& params);

double cosine_lr(size_t step, size_t total_steps, double lr_init, double lr_min);

// In-place Adam update with bias correction. Gradient arrays follow
// param_refs order; a NaN gradient aborts with the parameter's name.
void adam_step(model::ModelParameters& params, const std::vector<ad::Array>& grads,
               AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.95,
               double eps = 1e-8);

struct LabeledBatch {
  std::vector<model::ControlledSequence> sequences;
  // optional per-sequence masks over scored positions (tokens[1..]);
  // empty inner vector means all ones
  std::vector<std::vector<double>> masks;
};

double nll_loss(const model::ModelParameters& params,
                const std::vector<model::ControlledSequence>& batch);
double generative_loss(const model::ModelParameters& params, const LabeledBatch& batch);
double discriminative_loss(const model::ModelParameters& params, const LabeledBatch& batch);
double hybrid_loss(const model::ModelParameters& params, const LabeledBatch& batch, double lambda);

// Same objective, also accumulating parameter gradients (param_refs order).
double hybrid_loss_with_grads(const model::ModelParameters& params, const LabeledBatch& batch,
                              double lambda, std::vector<ad::Array>& grad_accum);
double masked_nll_with_grads(const model::ModelParameters& params,
                             const std::vector<model::ControlledSequence>& batch,
                             const std::vector<std::vector<double>>& masks,
                             std::vector<ad::Array>& grad_accum);

// Length-normalized Bayes posterior over the two control codes, computed in
// log domain from the class-conditional sequence log-likelihoods. The second
// component is defined as one minus the first, so the pair always sums to
// exactly 1.
double posterior_from_loglikelihoods(double ll_pos, double ll_neg, double alpha, double bias_pos,
                                     double bias_neg, size_t length);
std::pair<double, double> class_posteriors(const model::ModelParameters& params,
                                           const std::vector<int>& tokens);
double class_posterior(const model::ModelParameters& params, const std::vector<int>& tokens);

// Sequence assembly used by both trainers and the CLI.
struct MaskedSequence {
  model::ControlledSequence seq;
  std::vector<double> mask;  // over scored positions
};
MaskedSequence sequence_from_instruction(const corpus::InstructionExample& ex,
                                         const tokenizer::Vocab& vocab);
model::ControlledSequence controlled_sequence_from_text(const std::string& text,
                                                        const tokenizer::Vocab& vocab,
                                                        bool positive);

struct TrainLogEntry {
  size_t epoch = 0;
  size_t step = 0;
  double lr = 0;
  double loss = 0;
  double loss_g = 0;
  double loss_d = 0;
  std::optional<double> heldout_acc;
};
using LogSink = std::function<void(const TrainLogEntry&)>;

struct LabeledExample {
  std::string text;
  bool positive = false;
};

model::ModelParameters train_generator(const std::vector<corpus::InstructionExample>& data,
                                       const tokenizer::Vocab& vocab,
                                       const model::ModelConfig& model_config,
                                       const TrainConfig& config, const LogSink& log = nullptr);

model::ModelParameters train_discriminator(const std::vector<LabeledExample>& data,
                                           const tokenizer::Vocab& vocab,
                                           const model::ModelConfig& model_config,
                                           const TrainConfig& config,
                                           const LogSink& log = nullptr);

}  // namespace vsteer::training

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vsteer/autodiff.hpp"

namespace vsteer::model {

struct ModelConfig {
  size_t context_length = 256;
  size_t embed_dim = 128;
  size_t num_layers = 4;
  size_t num_heads = 4;
  size_t vocab_size = 512;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
  size_t head_dim() const { return embed_dim / num_heads; }
};

struct LayerParameters {
  ad::Array ln1_gain, ln1_bias;
  ad::Array wq, wk, wv, wo;
  ad::Array ln2_gain, ln2_bias;
  ad::Array ff_w1, ff_b1, ff_w2, ff_b2;
};

// Full parameter set. The generator and the discriminator are separate
// instances of this struct; the discriminator head (alpha, class_bias) is
// carried by every instance but only trained in the discriminator role.
struct ModelParameters {
  ModelConfig config;
  std::uint64_t vocab_hash = 0;
  ad::Array token_embedding;  // [V, E]
  ad::Array pos_embedding;    // [C, E]
  std::vector<LayerParameters> layers;
  ad::Array final_ln_gain, final_ln_bias;
  ad::Array output_projection;  // [E, V]
  ad::Array alpha;              // scalar, starts at 1
  ad::Array class_bias;         // [2] = (b_pos, b_neg), starts at 0
};

struct ParamRef {
  std::string name;
  ad::Array* array;
};
struct ConstParamRef {
  std::string name;
  const ad::Array* array;
};

// Stable, named traversal of every trainable array. Checkpoints, gradient
// accumulators and the tape binding all follow this order.
std::vector<ParamRef> param_refs(ModelParameters& p);
std::vector<ConstParamRef> param_refs(const ModelParameters& p);
size_t param_count(const ModelParameters& p);

// Deterministic Gaussian init (scale 0.02) from config.seed. The two control
// code embedding rows are made identical so both conditions start from an
// exactly symmetric class-conditional model.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t vocab_hash);

enum class Control { kNone, kPos, kNeg };

struct ControlledSequence {
  std::vector<int> tokens;  // anchor token (BOS or control code) at index 0
  Control control = Control::kNone;
  std::optional<bool> label;  // true = positive class
};

void validate_sequence(const ControlledSequence& seq, const ModelConfig& config);

// Builds the transformer forward pass on a tape. Parameters are copied onto
// the tape as inputs; with for_training set their gradients are retained and
// can be read back through param_nodes() after backward().
class BoundModel {
 public:
  BoundModel(ad::Tape& tape, const ModelParameters& params, bool for_training);

  // Log-probabilities for every position: row t predicts the token after
  // position t. Shape [T, vocab_size].
  ad::Tape::Node logprobs(const std::vector<int>& tokens);

  ad::Tape::Node alpha_node() const { return alpha_; }
  ad::Tape::Node class_bias_node() const { return class_bias_; }
  const std::vector<ad::Tape::Node>& param_nodes() const { return nodes_; }
  const ModelConfig& config() const { return cfg_; }
  ad::Tape& tape() const { return tape_; }

 private:
  struct LayerNodes {
    ad::Tape::Node ln1_gain, ln1_bias, wq, wk, wv, wo;
    ad::Tape::Node ln2_gain, ln2_bias, ff_w1, ff_b1, ff_w2, ff_b2;
  };

  ad::Tape& tape_;
  ModelConfig cfg_;
  std::vector<ad::Tape::Node> nodes_;
  ad::Tape::Node tok_emb_, pos_emb_;
  std::vector<LayerNodes> layers_;
  ad::Tape::Node final_gain_, final_bias_, out_proj_, alpha_, class_bias_;
};

// Convenience inference entry points (fresh throwaway tape per call).
ad::Array all_logprobs(const ModelParameters& params, const std::vector<int>& tokens);
std::vector<double> next_token_logprobs(const ModelParameters& params,
                                        const std::vector<int>& context);
double sequence_log_prob(const ModelParameters& params, const ControlledSequence& seq);

void save_checkpoint(const ModelParameters& params, const std::filesystem::path& path);
ModelParameters load_checkpoint(const std::filesystem::path& path,
                                std::optional<std::uint64_t> expect_vocab_hash = std::nullopt);

}  // namespace vsteer::model

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "vsteer/model.hpp"

namespace vsteer::guidance {

struct GuidanceConfig {
  double w = 1.5;            // discriminator weight in the decode mix
  double rho = 0.9;          // cumulative weighted mass kept by the rank filter
  double tau = 0.75;         // posterior floor for the threshold filter
  double temperature = 0.8;  // 0 switches to greedy argmax
  size_t max_new_tokens = 128;
  std::uint64_t seed = 0;
  // Rank the mass filter by the weighted distribution instead of the raw
  // posterior. Off by default; the posterior ranking is the documented one.
  bool rank_by_weighted = false;

  void validate() const;  // throws std::invalid_argument
};

// Decode-time view of the discriminator: class-conditional log-likelihoods of
// the tokens generated so far, plus the two cached next-token distributions
// for the current position. Refreshing the caches costs exactly two forward
// passes, one per control code, regardless of vocabulary size.
struct GuidanceState {
  std::vector<int> generated;
  double runlog_pos = 0.0;
  double runlog_neg = 0.0;
  size_t t = 0;  // number of generated tokens absorbed into the running scores
  std::vector<double> cache_pos;
  std::vector<double> cache_neg;
  bool caches_valid = false;
  size_t discriminator_forwards = 0;
};

// Runs the two class-conditional forwards over [control] + generated and
// refills the next-token caches for the current position.
void refresh_caches(GuidanceState& state, const model::ModelParameters& disc);

// Per-candidate positive-class posterior p(pos | generated, v): the running
// class scores plus the cached next-token log-probs, scaled by the trained
// alpha over the candidate length, biased and normalized over the two codes.
// Requires fresh caches; the negative posterior is one minus the returned one.
std::vector<double> token_posteriors(const GuidanceState& state,
                                     const model::ModelParameters& disc);

// Commits a sampled token: the running scores absorb its cached log-probs,
// the position advances, the caches go stale.
void advance_state(GuidanceState& state, int chosen_token);

// log p_base(v) + w * log posterior(v), unnormalized. w = 0 returns the base
// log-probs untouched.
std::vector<double> weighted_logweights(const std::vector<double>& base_logprobs,
                                        const std::vector<double>& posteriors, double w);

// Normalized probability form of the same mix; sums to 1 within 1e-12.
std::vector<double> weighted_distribution(const std::vector<double>& base_logprobs,
                                          const std::vector<double>& posteriors, double w);

struct FilterSets {
  std::vector<size_t> v_rank;  // every id, best-ranked first
  size_t m = 0;                // shortest rank prefix reaching rho weighted mass
  std::vector<size_t> v_m;     // first m of v_rank, stored as ascending ids
  std::vector<size_t> v_tau;   // ids with posterior strictly above tau, ascending
  std::vector<size_t> v_k;     // union of the two, ascending, never empty
};

// Builds the candidate filters from one step's weighted probabilities and
// posteriors. Degenerate inputs fall back to keeping the argmax of the
// weighted distribution so decoding can always make progress.
FilterSets build_filter_sets(const std::vector<double>& weighted_probs,
                             const std::vector<double>& posteriors, double rho, double tau,
                             bool rank_by_weighted = false);

// Draws one id from the candidates. Temperature 0 is greedy argmax (ties to
// the lowest id); otherwise softmax of logweights / temperature over allowed.
// Guided and unguided decoding share this so that turning the guidance knobs
// off reproduces plain sampling bit for bit.
size_t sample_index(const std::vector<double>& logweights, const std::vector<size_t>& allowed,
                    double temperature, std::mt19937_64& rng);

struct StepTrace {
  int token = 0;
  size_t kept = 0;         // |v_k| at this step
  double posterior = 0.0;  // positive-class posterior of the chosen token
};

struct GenerationResult {
  std::vector<int> tokens;  // generated ids; includes the EOS that stopped it
  std::vector<StepTrace> trace;
  size_t discriminator_forwards = 0;
};

// Guided decoding: base next-token distribution, reweighted by the
// discriminator posterior, filtered, then temperature-sampled. Stops at EOS,
// max_new_tokens, or when either model's context is exhausted.
GenerationResult generate(const model::ModelParameters& base, const model::ModelParameters& disc,
                          const std::vector<int>& prompt, const GuidanceConfig& config);

// Plain temperature sampling from the base model alone, same RNG discipline
// and stop rules as generate. Guided decoding with w = 0, rho = 1, tau = 0
// produces identical tokens under the same seed.
std::vector<int> sample_sequence(const model::ModelParameters& base, const std::vector<int>& prompt,
                                 size_t max_new_tokens, double temperature, std::uint64_t seed);

}  // namespace vsteer::guidance

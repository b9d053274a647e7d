#include "vsteer/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vsteer/tokenizer.hpp"
#include "vsteer/training.hpp"

namespace vsteer::guidance {

namespace {

// 53-bit uniform in [0, 1).
double next_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void check_prompt(const std::vector<int>& prompt, const model::ModelConfig& cfg) {
  if (prompt.empty()) {
    throw std::invalid_argument("generation prompt is empty");
  }
  if (prompt.size() > cfg.context_length) {
    throw std::invalid_argument("prompt has " + std::to_string(prompt.size()) +
                                " tokens, context is " + std::to_string(cfg.context_length));
  }
  for (int id : prompt) {
    if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size) {
      throw std::invalid_argument("prompt token id " + std::to_string(id) + " out of range");
    }
  }
}

}  // namespace

void GuidanceConfig::validate() const {
  if (!(w >= 0.0) || !std::isfinite(w)) {
    throw std::invalid_argument("guidance weight w must be finite and non-negative");
  }
  if (!(rho > 0.0) || rho > 1.0) {
    throw std::invalid_argument("rho must lie in (0, 1]");
  }
  if (!(tau >= 0.0) || tau > 1.0) {
    throw std::invalid_argument("tau must lie in [0, 1]");
  }
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be finite and non-negative");
  }
  if (max_new_tokens == 0) {
    throw std::invalid_argument("max_new_tokens must be positive");
  }
}

void refresh_caches(GuidanceState& state, const model::ModelParameters& disc) {
  std::vector<int> ctx;
  ctx.reserve(state.generated.size() + 1);
  ctx.push_back(tokenizer::Vocab::kCtrlPos);
  ctx.insert(ctx.end(), state.generated.begin(), state.generated.end());
  state.cache_pos = model::next_token_logprobs(disc, ctx);
  ctx[0] = tokenizer::Vocab::kCtrlNeg;
  state.cache_neg = model::next_token_logprobs(disc, ctx);
  state.discriminator_forwards += 2;
  state.caches_valid = true;
}

std::vector<double> token_posteriors(const GuidanceState& state,
                                     const model::ModelParameters& disc) {
  if (!state.caches_valid || state.cache_pos.empty()) {
    throw std::invalid_argument("guidance state has no fresh discriminator caches");
  }
  if (state.cache_pos.size() != state.cache_neg.size() ||
      state.cache_pos.size() != disc.config.vocab_size) {
    throw std::invalid_argument("cached distributions do not match the discriminator vocabulary");
  }
  double alpha = disc.alpha.data[0];
  double b_pos = disc.class_bias.data[0];
  double b_neg = disc.class_bias.data[1];
  std::vector<double> post(state.cache_pos.size());
  for (size_t v = 0; v < post.size(); ++v) {
    post[v] = training::posterior_from_loglikelihoods(state.runlog_pos + state.cache_pos[v],
                                                      state.runlog_neg + state.cache_neg[v], alpha,
                                                      b_pos, b_neg, state.t + 1);
  }
  return post;
}

void advance_state(GuidanceState& state, int chosen_token) {
  if (!state.caches_valid) {
    throw std::invalid_argument("advance_state needs fresh discriminator caches");
  }
  if (chosen_token < 0 || static_cast<size_t>(chosen_token) >= state.cache_pos.size()) {
    throw std::invalid_argument("token id " + std::to_string(chosen_token) + " out of range");
  }
  state.runlog_pos += state.cache_pos[chosen_token];
  state.runlog_neg += state.cache_neg[chosen_token];
  state.generated.push_back(chosen_token);
  state.t += 1;
  state.caches_valid = false;
}

std::vector<double> weighted_logweights(const std::vector<double>& base_logprobs,
                                        const std::vector<double>& posteriors, double w) {
  if (base_logprobs.size() != posteriors.size()) {
    throw std::invalid_argument("base distribution and posteriors differ in length");
  }
  if (w == 0.0) {
    return base_logprobs;
  }
  std::vector<double> lw(base_logprobs.size());
  for (size_t v = 0; v < lw.size(); ++v) {
    lw[v] = base_logprobs[v] + w * std::log(posteriors[v]);
  }
  return lw;
}

std::vector<double> weighted_distribution(const std::vector<double>& base_logprobs,
                                          const std::vector<double>& posteriors, double w) {
  std::vector<double> lw = weighted_logweights(base_logprobs, posteriors, w);
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : lw) mx = std::max(mx, x);
  if (!std::isfinite(mx)) {
    throw std::runtime_error("weighted distribution underflowed to zero everywhere");
  }
  double sum = 0.0;
  for (double x : lw) sum += std::exp(x - mx);
  double lse = mx + std::log(sum);
  for (double& x : lw) x = std::exp(x - lse);
  return lw;
}

FilterSets build_filter_sets(const std::vector<double>& weighted_probs,
                             const std::vector<double>& posteriors, double rho, double tau,
                             bool rank_by_weighted) {
  if (weighted_probs.size() != posteriors.size()) {
    throw std::invalid_argument("weighted distribution and posteriors differ in length");
  }
  size_t n = weighted_probs.size();
  FilterSets fs;
  fs.v_rank.resize(n);
  std::iota(fs.v_rank.begin(), fs.v_rank.end(), size_t{0});
  const std::vector<double>& key = rank_by_weighted ? weighted_probs : posteriors;
  std::sort(fs.v_rank.begin(), fs.v_rank.end(), [&](size_t a, size_t b) {
    if (key[a] != key[b]) return key[a] > key[b];
    return a < b;
  });

  double total = std::accumulate(weighted_probs.begin(), weighted_probs.end(), 0.0);
  if (rho <= 0.0) {
    fs.m = 0;
  } else if (rho == 1.0 || rho >= total) {
    // The full vocabulary is the answer; comparing a rounded running sum
    // against the threshold could clip real tail mass.
    fs.m = n;
  } else {
    double cum = 0.0;
    fs.m = n;
    for (size_t i = 0; i < n; ++i) {
      cum += weighted_probs[fs.v_rank[i]];
      if (cum >= rho) {
        fs.m = i + 1;
        break;
      }
    }
  }

  fs.v_m.assign(fs.v_rank.begin(), fs.v_rank.begin() + fs.m);
  std::sort(fs.v_m.begin(), fs.v_m.end());
  for (size_t v = 0; v < n; ++v) {
    if (posteriors[v] > tau) fs.v_tau.push_back(v);
  }
  std::set_union(fs.v_m.begin(), fs.v_m.end(), fs.v_tau.begin(), fs.v_tau.end(),
                 std::back_inserter(fs.v_k));
  if (fs.v_k.empty() && n > 0) {
    size_t best = 0;
    for (size_t v = 1; v < n; ++v) {
      if (weighted_probs[v] > weighted_probs[best]) best = v;
    }
    fs.v_k.push_back(best);
  }
  return fs;
}

size_t sample_index(const std::vector<double>& logweights, const std::vector<size_t>& allowed,
                    double temperature, std::mt19937_64& rng) {
  if (allowed.empty()) {
    throw std::invalid_argument("no candidate tokens to sample from");
  }
  for (size_t id : allowed) {
    if (id >= logweights.size()) {
      throw std::invalid_argument("candidate id out of range");
    }
  }
  if (temperature == 0.0) {
    size_t best = allowed[0];
    for (size_t id : allowed) {
      if (logweights[id] > logweights[best]) best = id;
    }
    return best;
  }
  double mx = logweights[allowed[0]];
  for (size_t id : allowed) mx = std::max(mx, logweights[id]);
  double sum = 0.0;
  for (size_t id : allowed) sum += std::exp((logweights[id] - mx) / temperature);
  double target = next_uniform(rng) * sum;
  double cum = 0.0;
  for (size_t id : allowed) {
    cum += std::exp((logweights[id] - mx) / temperature);
    if (cum > target) return id;
  }
  return allowed.back();
}

GenerationResult generate(const model::ModelParameters& base, const model::ModelParameters& disc,
                          const std::vector<int>& prompt, const GuidanceConfig& config) {
  config.validate();
  if (base.config.vocab_size != disc.config.vocab_size || base.vocab_hash != disc.vocab_hash) {
    throw std::invalid_argument("base model and discriminator vocabularies differ");
  }
  check_prompt(prompt, base.config);

  std::mt19937_64 rng(config.seed);
  GuidanceState state;
  GenerationResult out;
  std::vector<int> base_ctx = prompt;
  while (state.generated.size() < config.max_new_tokens) {
    if (base_ctx.size() > base.config.context_length) break;
    if (state.t + 1 > disc.config.context_length) break;

    std::vector<double> base_lp = model::next_token_logprobs(base, base_ctx);
    refresh_caches(state, disc);
    std::vector<double> post = token_posteriors(state, disc);
    std::vector<double> lw = weighted_logweights(base_lp, post, config.w);
    std::vector<double> p_w = weighted_distribution(base_lp, post, config.w);
    FilterSets fs = build_filter_sets(p_w, post, config.rho, config.tau, config.rank_by_weighted);

    size_t chosen = sample_index(lw, fs.v_k, config.temperature, rng);
    out.trace.push_back({static_cast<int>(chosen), fs.v_k.size(), post[chosen]});
    advance_state(state, static_cast<int>(chosen));
    base_ctx.push_back(static_cast<int>(chosen));
    if (static_cast<int>(chosen) == tokenizer::Vocab::kEos) break;
  }
  out.tokens = std::move(state.generated);
  out.discriminator_forwards = state.discriminator_forwards;
  return out;
}

std::vector<int> sample_sequence(const model::ModelParameters& base, const std::vector<int>& prompt,
                                 size_t max_new_tokens, double temperature, std::uint64_t seed) {
  check_prompt(prompt, base.config);
  std::mt19937_64 rng(seed);
  std::vector<size_t> all_ids(base.config.vocab_size);
  std::iota(all_ids.begin(), all_ids.end(), size_t{0});
  std::vector<int> out;
  std::vector<int> ctx = prompt;
  while (out.size() < max_new_tokens) {
    if (ctx.size() > base.config.context_length) break;
    std::vector<double> lp = model::next_token_logprobs(base, ctx);
    size_t chosen = sample_index(lp, all_ids, temperature, rng);
    out.push_back(static_cast<int>(chosen));
    ctx.push_back(static_cast<int>(chosen));
    if (static_cast<int>(chosen) == tokenizer::Vocab::kEos) break;
  }
  return out;
}

}  // namespace vsteer::guidance

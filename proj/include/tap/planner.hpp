#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tap/dataset.hpp"
#include "tap/env.hpp"
#include "tap/tap_model.hpp"

namespace tap {

struct PlannerConfig {
  int horizon_steps = 15;  // raw steps; latent horizon = horizon_steps / L
  int n_samples = 64;      // vanilla sampling
  int beam_width = 64;     // B
  int expansion = 4;       // E
  float alpha = 0.0f;      // 0 resolves to 2 * max |discounted return-to-go|
  float beta = 0.05f;      // per-code probability threshold
  float gamma = 0.99f;
  float temperature = 1.0f;  // 0 is greedy

  enum class SampleSource { kPrior, kUniform };
  SampleSource sample_source = SampleSource::kPrior;

  enum class Search { kBeam, kSample };
  Search search = Search::kBeam;

  // Expands every code at every step instead of sampling E; used by the
  // exhaustive-search oracle tests.
  bool exhaustive_expansion = false;

  void validate(const TapConfig& model_cfg) const;
};

// A scored candidate plan in raw (denormalized) units.
struct DecodedPlan {
  std::vector<int> latents;
  std::vector<float> states;   // n x S
  std::vector<float> actions;  // n x A
  std::vector<float> rewards;  // n
  std::vector<float> rtg;      // n
  double log_prior = 0.0;
  double score = 0.0;
  std::vector<float> first_action;  // clipped to the action bounds
};

// Latent-space planner over a trained model: scores candidate latent
// sequences by predicted discounted return plus an out-of-distribution
// penalty on the prior log-probability, and replans from scratch each step.
class Planner {
 public:
  Planner(const TapModel& model, NormalizationStats stats, PlannerConfig cfg,
          float max_abs_rtg);

  // score = sum_t gamma^(t-1) * r_t + gamma^n * R_n
  //         + alpha * min(log_prior, m * ln beta)
  double objective(std::span<const float> rewards, float final_rtg,
                   double log_prior, int latent_count) const;

  std::vector<DecodedPlan> sample_plans(std::span<const float> state_raw,
                                        Rng& rng) const;
  DecodedPlan beam_search(std::span<const float> state_raw, Rng& rng) const;

  // Best plan under the configured search strategy.
  DecodedPlan plan(std::span<const float> state_raw, Rng& rng) const;
  std::vector<float> act(std::span<const float> state_raw, Rng& rng) const;

  double alpha() const { return alpha_; }
  int plan_latents() const { return plan_latents_; }
  const PlannerConfig& config() const { return cfg_; }

 private:
  struct Sampled {
    int code = 0;
    double log_prob = 0.0;
  };

  DecodedPlan decode_plan(std::span<const float> s1_norm,
                          std::vector<int> codes, double log_prior) const;
  std::vector<double> prior_log_probs(std::span<const float> logits) const;

  const TapModel& model_;
  NormalizationStats stats_;
  PlannerConfig cfg_;
  double alpha_ = 0.0;
  int plan_latents_ = 0;
};

struct EvalReport {
  int n_episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_latency_ms = 0.0;
  double median_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  double mean_best_score = 0.0;  // mean first-step plan score (search value)
  std::vector<double> episode_returns;
};

// Runs full episodes with receding-horizon replanning. When log_path is
// non-empty, appends one JSON line per step.
EvalReport evaluate(const Planner& planner, Environment& env, int n_episodes,
                    std::uint64_t seed, const std::string& log_path = "");

}  // namespace tap

#include "tap/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "tap/kernels.hpp"

namespace tap {

void PlannerConfig::validate(const TapConfig& model_cfg) const {
  if (horizon_steps < model_cfg.latent_step ||
      horizon_steps % model_cfg.latent_step != 0)
    throw ConfigError("planner: horizon_steps " + std::to_string(horizon_steps) +
                      " must be a positive multiple of latent_step " +
                      std::to_string(model_cfg.latent_step));
  if (horizon_steps / model_cfg.latent_step > model_cfg.latent_count())
    throw ConfigError("planner: latent horizon exceeds the model's capacity");
  if (n_samples < 1 || beam_width < 1 || expansion < 1)
    throw ConfigError("planner: sample count, beam width, expansion >= 1");
  if (beta <= 0.0f || beta >= 1.0f)
    throw ConfigError("planner: beta must be in (0,1)");
  if (gamma <= 0.0f || gamma > 1.0f) throw ConfigError("planner: gamma in (0,1]");
  if (temperature < 0.0f) throw ConfigError("planner: temperature must be >= 0");
  if (alpha < 0.0f) throw ConfigError("planner: alpha must be >= 0");
}

Planner::Planner(const TapModel& model, NormalizationStats stats,
                 PlannerConfig cfg, float max_abs_rtg)
    : model_(model), stats_(std::move(stats)), cfg_(cfg) {
  cfg_.validate(model.config());
  if (!stats_.fitted) throw ConfigError("planner: normalization stats not fitted");
  plan_latents_ = cfg_.horizon_steps / model.config().latent_step;
  alpha_ = cfg_.alpha > 0.0f ? static_cast<double>(cfg_.alpha)
                             : 2.0 * static_cast<double>(max_abs_rtg);
  if (alpha_ <= static_cast<double>(max_abs_rtg))
    throw ConfigError(
        "planner: alpha must exceed the dataset's maximum absolute "
        "discounted return");
}

double Planner::objective(std::span<const float> rewards, float final_rtg,
                          double log_prior, int latent_count) const {
  if (!std::isfinite(log_prior) || !std::isfinite(static_cast<double>(final_rtg)))
    throw NumericError("objective: non-finite inputs");
  const double gamma = static_cast<double>(cfg_.gamma);
  double ret = 0.0;
  double g = 1.0;  // gamma^(t-1), starting at the first decoded step
  for (float r : rewards) {
    if (!std::isfinite(static_cast<double>(r)))
      throw NumericError("objective: non-finite reward");
    ret += g * static_cast<double>(r);
    g *= gamma;
  }
  ret += g * static_cast<double>(final_rtg);  // g == gamma^n here
  const double threshold =
      static_cast<double>(latent_count) * std::log(static_cast<double>(cfg_.beta));
  return ret + alpha_ * std::min(log_prior, threshold);
}

std::vector<double> Planner::prior_log_probs(std::span<const float> logits) const {
  // log softmax at temperature 1; the objective always uses the true prior.
  double mx = -1e300;
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v) - mx);
  const double logz = std::log(z) + mx;
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(logits[i]) - logz;
  return out;
}

DecodedPlan Planner::decode_plan(std::span<const float> s1_norm,
                                 std::vector<int> codes,
                                 double log_prior) const {
  const TapConfig& mc = model_.config();
  const int m = static_cast<int>(codes.size());
  const int n = m * mc.latent_step;
  const Tensor out = model_.decode(s1_norm, codes);

  DecodedPlan plan;
  plan.latents = std::move(codes);
  plan.log_prior = log_prior;
  plan.states.resize(static_cast<std::size_t>(n) * mc.state_dim);
  plan.actions.resize(static_cast<std::size_t>(n) * mc.action_dim);
  plan.rewards.resize(static_cast<std::size_t>(n));
  plan.rtg.resize(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < mc.state_dim; ++j)
      plan.states[static_cast<std::size_t>(r) * mc.state_dim + j] =
          out.at(r, j) * stats_.state_std[static_cast<std::size_t>(j)] +
          stats_.state_mean[static_cast<std::size_t>(j)];
    for (int j = 0; j < mc.action_dim; ++j)
      plan.actions[static_cast<std::size_t>(r) * mc.action_dim + j] =
          out.at(r, mc.state_dim + j) * stats_.action_std[static_cast<std::size_t>(j)] +
          stats_.action_mean[static_cast<std::size_t>(j)];
    plan.rewards[static_cast<std::size_t>(r)] =
        out.at(r, mc.state_dim + mc.action_dim) * stats_.reward_std +
        stats_.reward_mean;
    plan.rtg[static_cast<std::size_t>(r)] =
        out.at(r, mc.state_dim + mc.action_dim + 1) * stats_.rtg_std +
        stats_.rtg_mean;
  }
  plan.score = objective(plan.rewards, plan.rtg.back(), plan.log_prior, m);
  plan.first_action.resize(static_cast<std::size_t>(mc.action_dim));
  for (int j = 0; j < mc.action_dim; ++j)
    plan.first_action[static_cast<std::size_t>(j)] =
        std::min(Environment::kActionHigh,
                 std::max(Environment::kActionLow,
                          plan.actions[static_cast<std::size_t>(j)]));
  return plan;
}

std::vector<DecodedPlan> Planner::sample_plans(std::span<const float> state_raw,
                                               Rng& rng) const {
  const std::vector<float> s1 = normalize_state(state_raw, stats_);
  const int k = model_.config().codebook_size;

  struct Draft {
    std::vector<int> codes;
    double log_prior = 0.0;
  };
  std::vector<Draft> drafts(static_cast<std::size_t>(cfg_.n_samples));
  for (int i = 0; i < cfg_.n_samples; ++i) {
    auto cache = model_.make_prior_cache();
    Draft& d = drafts[static_cast<std::size_t>(i)];
    int prev = -1;
    for (int j = 0; j < plan_latents_; ++j) {
      const std::vector<float> logits = model_.prior_next_logits(cache, s1, prev);
      const std::vector<double> logp = prior_log_probs(logits);
      int code;
      if (cfg_.sample_source == PlannerConfig::SampleSource::kUniform) {
        code = rng.uniform_int(k);
      } else if (cfg_.temperature == 0.0f) {
        code = 0;
        for (int c = 1; c < k; ++c)
          if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(code)])
            code = c;
      } else {
        std::vector<float> probs(static_cast<std::size_t>(k));
        const float inv_t = 1.0f / cfg_.temperature;
        float mx = logits[0];
        for (float v : logits) mx = std::max(mx, v);
        for (int c = 0; c < k; ++c)
          probs[static_cast<std::size_t>(c)] =
              std::exp((logits[static_cast<std::size_t>(c)] - mx) * inv_t);
        code = multinomial<float>(probs, rng);
      }
      d.codes.push_back(code);
      d.log_prior += std::max(logp[static_cast<std::size_t>(code)], -1e30);
      prev = code;
    }
  }

  std::vector<DecodedPlan> plans(drafts.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled() && !kernels::in_parallel_region())
#endif
  for (std::size_t i = 0; i < drafts.size(); ++i)
    plans[i] = decode_plan(s1, drafts[i].codes, drafts[i].log_prior);
  return plans;
}

DecodedPlan Planner::beam_search(std::span<const float> state_raw,
                                 Rng& rng) const {
  const std::vector<float> s1 = normalize_state(state_raw, stats_);
  const int k = model_.config().codebook_size;

  struct Candidate {
    std::vector<int> codes;
    double log_prior = 0.0;
    TapModel::PriorCache cache;  // positions fed: BOS + codes[0..m-2]
    double score = 0.0;
  };

  // Root context: begin-of-sequence only.
  auto root_cache = model_.make_prior_cache();
  const std::vector<float> root_logits =
      model_.prior_next_logits(root_cache, s1, -1);
  const std::vector<double> root_logp = prior_log_probs(root_logits);

  auto draw_codes = [&](const std::vector<float>& logits, int count,
                        Rng& r) -> std::vector<int> {
    std::vector<int> out;
    if (cfg_.exhaustive_expansion) {
      out.resize(static_cast<std::size_t>(k));
      std::iota(out.begin(), out.end(), 0);
      return out;
    }
    out.reserve(static_cast<std::size_t>(count));
    if (cfg_.sample_source == PlannerConfig::SampleSource::kUniform) {
      for (int i = 0; i < count; ++i) out.push_back(r.uniform_int(k));
      return out;
    }
    if (cfg_.temperature == 0.0f) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)])
          best = c;
      out.assign(static_cast<std::size_t>(count), best);
      return out;
    }
    std::vector<float> probs(static_cast<std::size_t>(k));
    const float inv_t = 1.0f / cfg_.temperature;
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    for (int c = 0; c < k; ++c)
      probs[static_cast<std::size_t>(c)] =
          std::exp((logits[static_cast<std::size_t>(c)] - mx) * inv_t);
    for (int i = 0; i < count; ++i) out.push_back(multinomial<float>(probs, r));
    return out;
  };

  std::vector<Candidate> beam;
  std::vector<DecodedPlan> plans;

  for (int depth = 1; depth <= plan_latents_; ++depth) {
    std::vector<Candidate> pool;
    if (depth == 1) {
      const std::vector<int> codes =
          draw_codes(root_logits, cfg_.beam_width * cfg_.expansion, rng);
      pool.reserve(codes.size());
      for (int code : codes) {
        Candidate c;
        c.codes = {code};
        c.log_prior = std::max(root_logp[static_cast<std::size_t>(code)], -1e30);
        c.cache = root_cache;
        pool.push_back(std::move(c));
      }
    } else {
      pool.reserve(beam.size() * static_cast<std::size_t>(cfg_.expansion));
      for (Candidate& parent : beam) {
        // Advance the parent's cache by its own last code, then branch.
        const std::vector<float> logits =
            model_.prior_next_logits(parent.cache, s1, parent.codes.back());
        const std::vector<double> logp = prior_log_probs(logits);
        const std::vector<int> codes = draw_codes(logits, cfg_.expansion, rng);
        for (int code : codes) {
          Candidate c;
          c.codes = parent.codes;
          c.codes.push_back(code);
          c.log_prior =
              parent.log_prior + std::max(logp[static_cast<std::size_t>(code)], -1e30);
          c.cache = parent.cache;
          pool.push_back(std::move(c));
        }
      }
    }

    // Partially decode and score everything in the pool.
    plans.assign(pool.size(), {});
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled() && !kernels::in_parallel_region())
#endif
    for (std::size_t i = 0; i < pool.size(); ++i) {
      plans[i] = decode_plan(s1, pool[i].codes, pool[i].log_prior);
      pool[i].score = plans[i].score;
    }

    const int keep = std::min<int>(cfg_.beam_width, static_cast<int>(pool.size()));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return pool[a].score > pool[b].score;
    });
    if (depth == plan_latents_) return plans[order.front()];
    std::vector<Candidate> next;
    next.reserve(static_cast<std::size_t>(keep));
    for (int i = 0; i < keep; ++i)
      next.push_back(std::move(pool[order[static_cast<std::size_t>(i)]]));
    beam = std::move(next);
  }
  throw PlannerError("beam search produced no plan");
}

DecodedPlan Planner::plan(std::span<const float> state_raw, Rng& rng) const {
  if (cfg_.search == PlannerConfig::Search::kBeam) return beam_search(state_raw, rng);
  std::vector<DecodedPlan> plans = sample_plans(state_raw, rng);
  if (plans.empty()) throw PlannerError("sampling produced no plan");
  std::size_t best = 0;
  for (std::size_t i = 1; i < plans.size(); ++i)
    if (plans[i].score > plans[best].score) best = i;
  return std::move(plans[best]);
}

std::vector<float> Planner::act(std::span<const float> state_raw, Rng& rng) const {
  return plan(state_raw, rng).first_action;
}

EvalReport evaluate(const Planner& planner, Environment& env, int n_episodes,
                    std::uint64_t seed, const std::string& log_path) {
  EvalReport report;
  report.n_episodes = n_episodes;
  if (n_episodes <= 0) return report;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw DataError("evaluate: cannot open log: " + log_path);
  }

  Rng master(seed);
  std::vector<double> latencies;
  double score_sum = 0.0;
  std::int64_t score_count = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng = master.split(static_cast<std::uint64_t>(ep));
    std::vector<float> state = env.reset(rng);
    double ep_return = 0.0;
    bool terminated = false;
    for (int t = 0; t < env.spec().horizon_max && !terminated; ++t) {
      const auto start = std::chrono::steady_clock::now();
      const DecodedPlan plan = planner.plan(state, rng);
      const auto stop = std::chrono::steady_clock::now();
      const double ms =
          std::chrono::duration<double, std::milli>(stop - start).count();
      latencies.push_back(ms);
      score_sum += plan.score;
      ++score_count;

      const auto result = env.step(plan.first_action);
      ep_return += result.reward;
      if (log.is_open()) {
        nlohmann::ordered_json row;
        row["episode"] = ep;
        row["step"] = t;
        row["state"] = state;
        row["action"] = plan.first_action;
        row["reward"] = result.reward;
        row["score"] = plan.score;
        row["log_prior"] = plan.log_prior;
        row["latency_ms"] = ms;
        log << row.dump() << "\n";
      }
      state = result.state;
      terminated = result.terminated;
    }
    report.episode_returns.push_back(ep_return);
  }

  const double n = static_cast<double>(report.episode_returns.size());
  double sum = 0.0, sq = 0.0;
  for (double r : report.episode_returns) {
    sum += r;
    sq += r * r;
  }
  report.mean_return = sum / n;
  report.std_return = std::sqrt(std::max(0.0, sq / n - report.mean_return * report.mean_return));
  std::sort(latencies.begin(), latencies.end());
  const std::size_t ln = latencies.size();
  if (ln > 0) {
    double lsum = 0.0;
    for (double v : latencies) lsum += v;
    report.mean_latency_ms = lsum / static_cast<double>(ln);
    report.median_latency_ms = latencies[ln / 2];
    report.p95_latency_ms = latencies[(ln * 95) / 100 < ln ? (ln * 95) / 100 : ln - 1];
  }
  report.mean_best_score = score_count > 0 ? score_sum / static_cast<double>(score_count) : 0.0;
  return report;
}

}  // namespace tap

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tap/common.hpp"
#include "tap/env.hpp"
#include "tap/tensor.hpp"

namespace tap {

struct Episode {
  std::vector<float> states;   // (len+1) x S, includes the final state
  std::vector<float> actions;  // len x A
  std::vector<float> rewards;  // len
  std::vector<float> rtg;      // len, derived from rewards and gamma
  bool terminated = false;
  int len = 0;

  float undiscounted_return() const {
    double s = 0;
    for (float r : rewards) s += r;
    return static_cast<float>(s);
  }
};

// Fixed-length training window. Padded steps repeat the episode's last state
// with zero action/reward/rtg and mask 0; the mask is a prefix of ones.
struct TrajectorySegment {
  std::vector<float> states;   // T x S
  std::vector<float> actions;  // T x A
  std::vector<float> rewards;  // T
  std::vector<float> rtg;      // T
  std::vector<float> mask;     // T
  int length = 0;              // T
};

struct NormalizationStats {
  std::vector<float> state_mean, state_std;
  std::vector<float> action_mean, action_std;
  float reward_mean = 0.0f, reward_std = 1.0f;
  float rtg_mean = 0.0f, rtg_std = 1.0f;
  bool fitted = false;
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  std::string behavior;
  int n_episodes = 0;
  int total_steps = 0;
  float mean_return = 0.0f;  // undiscounted mean episode return
  float best_return = 0.0f;  // best undiscounted episode return
  float max_abs_rtg = 0.0f;  // max |discounted return-to-go| over all steps
};

// R_t = r_t + gamma * R_{t+1}, zero beyond the last reward.
std::vector<float> compute_rtg(std::span<const float> rewards, float gamma);

class OfflineDataset {
 public:
  EnvSpec env_spec;
  std::vector<Episode> episodes;
  DatasetMeta meta;
  NormalizationStats stats;
  std::vector<TrajectorySegment> segments;
  int segment_len = 0;
  int stride = 0;

  static OfflineDataset generate(Environment& env, BehaviorPolicy& behavior,
                                 int n_episodes, std::uint64_t seed);

  // Windows start at offsets 0, stride, ... For timeout-truncated episodes
  // the last 5 steps are excluded from segment starts to limit rtg bias.
  void build_segments(int t, int segment_stride);

  // Per-dimension standardization over unmasked steps; std floored at 1e-6.
  void fit_normalization();

  void save(const std::string& path) const;
  static OfflineDataset load(const std::string& path);
};

TrajectorySegment normalize_segment(const TrajectorySegment& seg,
                                    const NormalizationStats& stats, int s_dim,
                                    int a_dim);

std::vector<float> normalize_state(std::span<const float> state,
                                   const NormalizationStats& stats);

// Token matrix rows are [state, action, reward, rtg] per step, already
// normalized. s1 is the normalized first state.
struct SegmentTokens {
  Tensor tokens;            // T x (S + A + 2)
  std::vector<float> mask;  // T
  std::vector<float> s1;    // S
};

SegmentTokens segment_to_tokens(const TrajectorySegment& normalized, int s_dim,
                                int a_dim);

}  // namespace tap

#include "tap/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace tap {

namespace {

float clip_action(float a) {
  return std::min(Environment::kActionHigh, std::max(Environment::kActionLow, a));
}

// Point mass on a plane chasing a goal. State is [pos(2), goal(2), zeros];
// the first two action dims move the point by 0.05 * a, the rest are inert.
// Reward is the negative distance to the goal after the move; the episode
// terminates within 0.1 of the goal.
class PointReachEnv final : public Environment {
 public:
  explicit PointReachEnv(EnvSpec spec) : Environment(std::move(spec)) {
    if (spec_.state_dim < 4)
      throw ConfigError("pointreach: state_dim must be >= 4");
  }

  std::vector<float> reset(Rng& rng) override {
    terminal_ = false;
    if (spec_.deterministic) {
      pos_ = {-0.5f, -0.5f};
      goal_ = {0.5f, 0.5f};
    } else {
      // Start/goal separation kept in a narrow band so episode returns are
      // comparable across layouts.
      for (int tries = 0; tries < 1000; ++tries) {
        pos_ = {sample_coord(rng), sample_coord(rng)};
        goal_ = {sample_coord(rng), sample_coord(rng)};
        const float d = dist(pos_, goal_);
        if (d >= 0.9f && d <= 1.3f) break;
      }
    }
    return state();
  }

  StepResult step(std::span<const float> action) override {
    if (terminal_) throw ArgumentError("pointreach: step after terminal state");
    if (static_cast<int>(action.size()) != spec_.action_dim)
      throw DimensionError("pointreach: action width mismatch");
    pos_[0] += 0.05f * clip_action(action[0]);
    pos_[1] += 0.05f * clip_action(action[1]);
    const float d = dist(pos_, goal_);
    StepResult r;
    r.reward = -d;
    r.terminated = d < 0.1f;
    terminal_ = r.terminated;
    r.state = state();
    return r;
  }

 private:
  static float sample_coord(Rng& rng) {
    return -0.8f + 1.6f * rng.uniform_float();
  }

  static float dist(const std::array<float, 2>& a, const std::array<float, 2>& b) {
    const float dx = a[0] - b[0], dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
  }

  std::vector<float> state() const {
    std::vector<float> s(static_cast<std::size_t>(spec_.state_dim), 0.0f);
    s[0] = pos_[0];
    s[1] = pos_[1];
    s[2] = goal_[0];
    s[3] = goal_[1];
    return s;
  }

  std::array<float, 2> pos_{0, 0};
  std::array<float, 2> goal_{0, 0};
  bool terminal_ = false;
};

// 1-d discrete chain embedded in R: move right on a[0] > 0, +1 reward when
// the right end is reached, which also terminates the episode.
class ChainEnv final : public Environment {
 public:
  static constexpr int kCells = 10;

  explicit ChainEnv(EnvSpec spec) : Environment(std::move(spec)) {}

  std::vector<float> reset(Rng&) override {
    terminal_ = false;
    cell_ = 0;
    return state();
  }

  StepResult step(std::span<const float> action) override {
    if (terminal_) throw ArgumentError("chain: step after terminal state");
    if (static_cast<int>(action.size()) != spec_.action_dim)
      throw DimensionError("chain: action width mismatch");
    cell_ += clip_action(action[0]) > 0.0f ? 1 : -1;
    cell_ = std::max(0, std::min(kCells - 1, cell_));
    StepResult r;
    r.terminated = cell_ == kCells - 1;
    r.reward = r.terminated ? 1.0f : 0.0f;
    terminal_ = r.terminated;
    r.state = state();
    return r;
  }

 private:
  std::vector<float> state() const {
    std::vector<float> s(static_cast<std::size_t>(spec_.state_dim), 0.0f);
    s[0] = static_cast<float>(cell_);
    return s;
  }

  int cell_ = 0;
  bool terminal_ = false;
};

class WaypointMixturePolicy final : public BehaviorPolicy {
 public:
  WaypointMixturePolicy(int modes, float noise, int action_dim)
      : modes_(modes), noise_(noise), action_dim_(action_dim) {
    if (modes < 1) throw ConfigError("behavior: modes must be >= 1");
    if (noise < 0.0f) throw ConfigError("behavior: noise must be >= 0");
  }

  void begin_episode(std::span<const float>, Rng& rng) override {
    mode_ = modes_ == 1 ? 0 : rng.uniform_int(modes_);
  }

  // Waypoints sit on a fixed-radius circle around the goal at per-mode world
  // angles, so detour costs depend on the episode geometry and the target is
  // a pure function of (state, mode); segments cut from the middle of an
  // episode stay fully predictable from their own first state.
  std::vector<float> act(std::span<const float> state, Rng& rng) override {
    const float px = state[0], py = state[1];
    const float gx = state[2], gy = state[3];
    const float phi = 2.0f * 3.14159265f * static_cast<float>(mode_) /
                          static_cast<float>(modes_) +
                      0.3f;
    const float wx = gx + kWaypointRadius * std::cos(phi);
    const float wy = gy + kWaypointRadius * std::sin(phi);
    const float goal_dist =
        std::sqrt((gx - px) * (gx - px) + (gy - py) * (gy - py));
    // Head for the waypoint while still far from the goal, then home in.
    const bool to_waypoint = goal_dist > kWaypointRadius + 0.1f;
    const float tx = to_waypoint ? wx : gx;
    const float ty = to_waypoint ? wy : gy;
    std::vector<float> a(static_cast<std::size_t>(action_dim_), 0.0f);
    a[0] = clip_action(1.5f * (tx - px) + noise_ * rng.normal_float());
    a[1] = clip_action(1.5f * (ty - py) + noise_ * rng.normal_float());
    for (int j = 2; j < action_dim_; ++j)
      a[static_cast<std::size_t>(j)] = clip_action(noise_ * rng.normal_float());
    return a;
  }

  std::string describe() const override {
    return "waypoint_mixture(modes=" + std::to_string(modes_) +
           ",noise=" + std::to_string(noise_) + ")";
  }

 private:
  static constexpr float kWaypointRadius = 0.45f;

  int modes_;
  float noise_;
  int action_dim_;
  int mode_ = 0;
};

// Chain behavior: right-biased random walk.
class ChainPolicy final : public BehaviorPolicy {
 public:
  ChainPolicy(float noise, int action_dim)
      : noise_(noise), action_dim_(action_dim) {}

  void begin_episode(std::span<const float>, Rng&) override {}

  std::vector<float> act(std::span<const float>, Rng& rng) override {
    std::vector<float> a(static_cast<std::size_t>(action_dim_), 0.0f);
    const float bias = rng.uniform_float() < 0.75f ? 0.5f : -0.5f;
    a[0] = clip_action(bias + noise_ * rng.normal_float());
    for (int j = 1; j < action_dim_; ++j)
      a[static_cast<std::size_t>(j)] = clip_action(noise_ * rng.normal_float());
    return a;
  }

  std::string describe() const override {
    return "chain_right_bias(noise=" + std::to_string(noise_) + ")";
  }

 private:
  float noise_;
  int action_dim_;
};

}  // namespace

std::unique_ptr<Environment> make_env(const EnvSpec& spec) {
  if (spec.name == "pointreach") return std::make_unique<PointReachEnv>(spec);
  if (spec.name == "chain") return std::make_unique<ChainEnv>(spec);
  throw ConfigError("unknown environment: " + spec.name);
}

std::unique_ptr<BehaviorPolicy> make_behavior(const EnvSpec& spec, int modes,
                                              float noise) {
  if (spec.name == "pointreach")
    return std::make_unique<WaypointMixturePolicy>(modes, noise, spec.action_dim);
  if (spec.name == "chain")
    return std::make_unique<ChainPolicy>(noise, spec.action_dim);
  throw ConfigError("unknown environment: " + spec.name);
}

}  // namespace tap

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tap/common.hpp"
#include "tap/rng.hpp"

namespace tap {

struct EnvSpec {
  std::string name = "pointreach";
  int state_dim = 8;
  int action_dim = 2;
  int horizon_max = 60;
  float gamma = 0.99f;
  bool deterministic = false;  // fixed reset layout when true

  void validate() const {
    if (state_dim < 1 || action_dim < 1)
      throw ConfigError("env: state_dim and action_dim must be >= 1");
    if (horizon_max < 1) throw ConfigError("env: horizon_max must be >= 1");
    if (gamma <= 0.0f || gamma > 1.0f)
      throw ConfigError("env: gamma must be in (0,1]");
  }
};

// Actions are clipped to [-1, 1] per dimension in every environment.
class Environment {
 public:
  static constexpr float kActionLow = -1.0f;
  static constexpr float kActionHigh = 1.0f;

  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }

  struct StepResult {
    std::vector<float> state;
    float reward = 0.0f;
    bool terminated = false;
  };

  virtual std::vector<float> reset(Rng& rng) = 0;
  // Throws ArgumentError when called after termination.
  virtual StepResult step(std::span<const float> action) = 0;

 protected:
  EnvSpec spec_;
};

std::unique_ptr<Environment> make_env(const EnvSpec& spec);

class BehaviorPolicy {
 public:
  virtual ~BehaviorPolicy() = default;
  virtual void begin_episode(std::span<const float> state, Rng& rng) = 0;
  virtual std::vector<float> act(std::span<const float> state, Rng& rng) = 0;
  virtual std::string describe() const = 0;
};

// Mixture of `modes` noisy proportional controllers. Each episode picks one
// component, steers to that component's waypoint first and then to the goal,
// which makes the action distribution multimodal at every start state.
std::unique_ptr<BehaviorPolicy> make_behavior(const EnvSpec& spec, int modes,
                                              float noise);

}  // namespace tap

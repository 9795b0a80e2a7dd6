#pragma once

#include <memory>
#include <string>

#include "tap/dataset.hpp"
#include "tap/env.hpp"
#include "tap/tap_model.hpp"

namespace tap {

struct CheckpointBundle {
  TapConfig config;
  EnvSpec env;
  NormalizationStats stats;
  float max_abs_rtg = 0.0f;  // planner alpha derives from this
  std::shared_ptr<TapModel> model;
};

// Binary format: magic "TAPC", u32 version, length-prefixed config text,
// then named little-endian float32 parameter blocks.
void save_checkpoint(const std::string& path, const TapModel& model,
                     const EnvSpec& env, const NormalizationStats& stats,
                     float max_abs_rtg);

CheckpointBundle load_checkpoint(const std::string& path);

}  // namespace tap

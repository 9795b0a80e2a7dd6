#pragma once

#include <functional>
#include <memory>
#include <string>

#include "tap/checkpoint.hpp"
#include "tap/planner.hpp"
#include "tap/run_config.hpp"
#include "tap/train.hpp"

namespace tap {

// Shared train/eval plumbing used by the CLI, the ablation runner, and the
// acceptance suite.

// Loads data.path when set, otherwise generates from the env/data keys and
// segments + normalizes it.
OfflineDataset build_dataset(const RunConfig& cfg);

struct TrainedArtifacts {
  std::shared_ptr<TapModel> model;
  OfflineDataset dataset;
  std::vector<TrainMetrics> metrics;
};

using EpochCallback = std::function<void(const TrainMetrics&, const TapModel&)>;

// Full training run; the callback fires after every epoch (checkpointing,
// metric rows).
TrainedArtifacts train_pipeline(const RunConfig& cfg,
                                const EpochCallback& on_epoch = nullptr);

// Builds the planner for a trained model and evaluates it in the configured
// environment.
EvalReport eval_pipeline(const TapModel& model, const NormalizationStats& stats,
                         float max_abs_rtg, const RunConfig& cfg,
                         const std::string& episode_log_path = "");

}  // namespace tap

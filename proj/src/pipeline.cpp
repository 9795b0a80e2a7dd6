#include "tap/pipeline.hpp"

namespace tap {

OfflineDataset build_dataset(const RunConfig& cfg) {
  const std::string path = cfg.get_string("data.path");
  if (!path.empty()) {
    OfflineDataset ds = OfflineDataset::load(path);
    if (ds.segments.empty() || ds.segment_len != cfg.get_int("model.segment_len"))
      ds.build_segments(cfg.get_int("model.segment_len"), cfg.get_int("data.stride"));
    if (!ds.stats.fitted) ds.fit_normalization();
    return ds;
  }
  if (!cfg.get_bool("data.generate"))
    throw ConfigError("config: data.path empty and data.generate is false");
  const EnvSpec spec = cfg.env_spec();
  auto env = make_env(spec);
  auto behavior =
      make_behavior(spec, cfg.get_int("data.modes"), cfg.get_float("data.noise"));
  OfflineDataset ds = OfflineDataset::generate(*env, *behavior,
                                               cfg.get_int("data.episodes"),
                                               cfg.get_u64("data.seed"));
  ds.build_segments(cfg.get_int("model.segment_len"), cfg.get_int("data.stride"));
  ds.fit_normalization();
  return ds;
}

TrainedArtifacts train_pipeline(const RunConfig& cfg, const EpochCallback& on_epoch) {
  TrainedArtifacts out;
  out.dataset = build_dataset(cfg);
  const TapConfig model_cfg = cfg.tap_config();
  Rng init_rng(cfg.get_u64("train.seed"));
  out.model = std::make_shared<TapModel>(model_cfg, init_rng);
  Trainer trainer(*out.model, out.dataset, cfg.get_u64("train.seed"));
  const int epochs = cfg.get_int("train.epochs");
  for (int e = 0; e < epochs; ++e) {
    const TrainMetrics m = trainer.train_epoch();
    out.metrics.push_back(m);
    if (on_epoch) on_epoch(m, *out.model);
  }
  return out;
}

EvalReport eval_pipeline(const TapModel& model, const NormalizationStats& stats,
                         float max_abs_rtg, const RunConfig& cfg,
                         const std::string& episode_log_path) {
  const EnvSpec spec = cfg.env_spec();
  auto env = make_env(spec);
  Planner planner(model, stats, cfg.planner_config(), max_abs_rtg);
  return evaluate(planner, *env, cfg.get_int("eval.episodes"),
                  cfg.get_u64("eval.seed"), episode_log_path);
}

}  // namespace tap

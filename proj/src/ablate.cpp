#include "tap/ablate.hpp"

#include <algorithm>

#include "tap/pipeline.hpp"

namespace tap {

namespace {

bool axis_changes_training(const std::string& axis) {
  return axis == "latent_step" || axis == "unconditional_decoder";
}

void apply_axis_value(RunConfig& cfg, const std::string& axis,
                      const std::string& value) {
  if (axis == "latent_step") {
    cfg.set("model.latent_step", value);
  } else if (axis == "beta") {
    cfg.set("plan.beta", value);
  } else if (axis == "horizon") {
    cfg.set("plan.horizon_steps", value);
  } else if (axis == "sampler") {
    if (value == "beam") {
      cfg.set("plan.search", "beam");
      cfg.set("plan.sample_source", "prior");
    } else if (value == "prior") {
      cfg.set("plan.search", "sample");
      cfg.set("plan.sample_source", "prior");
    } else if (value == "uniform") {
      cfg.set("plan.search", "sample");
      cfg.set("plan.sample_source", "uniform");
    } else {
      throw ArgumentError("ablate: sampler value must be beam|prior|uniform");
    }
  } else if (axis == "unconditional_decoder") {
    if (value == "true" || value == "false") {
      cfg.set("model.condition_decoder_on_state",
              value == "true" ? "false" : "true");
    } else {
      throw ArgumentError("ablate: unconditional_decoder value must be true|false");
    }
  } else {
    throw ArgumentError("ablate: unknown axis '" + axis + "'");
  }
}

AblationRow evaluate_arm(const TrainedArtifacts& art, const RunConfig& cfg,
                         const std::string& axis, const std::string& value,
                         std::uint64_t seed) {
  const EvalReport report =
      eval_pipeline(*art.model, art.dataset.stats, art.dataset.meta.max_abs_rtg, cfg);
  AblationRow row;
  row.axis = axis;
  row.value = value;
  row.seed = seed;
  row.mean_return = report.mean_return;
  row.std_return = report.std_return;
  row.final_recon_mse = art.metrics.empty() ? 0.0 : art.metrics.back().recon_mse;
  row.final_prior_nll = art.metrics.empty() ? 0.0 : art.metrics.back().prior_nll;
  row.mean_best_score = report.mean_best_score;
  row.median_latency_ms = report.median_latency_ms;
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress) {
  if (std::find(ablation_axes().begin(), ablation_axes().end(), axis) ==
      ablation_axes().end())
    throw ArgumentError("ablate: unknown axis '" + axis + "'");
  if (values.empty()) throw ArgumentError("ablate: empty value list");
  if (seeds.empty()) throw ArgumentError("ablate: empty seed list");

  std::vector<AblationRow> rows;
  for (const std::uint64_t seed : seeds) {
    RunConfig seeded = base;
    seeded.set("train.seed", std::to_string(seed));
    seeded.set("data.seed", std::to_string(base.get_u64("data.seed")));
    seeded.set("eval.seed", std::to_string(base.get_u64("eval.seed") + seed));

    if (axis_changes_training(axis)) {
      for (const std::string& value : values) {
        RunConfig cfg = seeded;
        apply_axis_value(cfg, axis, value);
        if (progress)
          *progress << "[ablate] axis=" << axis << " value=" << value
                    << " seed=" << seed << ": training\n";
        const TrainedArtifacts art = train_pipeline(cfg);
        rows.push_back(evaluate_arm(art, cfg, axis, value, seed));
      }
    } else {
      if (progress)
        *progress << "[ablate] axis=" << axis << " seed=" << seed
                  << ": training shared model\n";
      const TrainedArtifacts art = train_pipeline(seeded);
      for (const std::string& value : values) {
        RunConfig cfg = seeded;
        apply_axis_value(cfg, axis, value);
        rows.push_back(evaluate_arm(art, cfg, axis, value, seed));
      }
    }
  }
  return rows;
}

}  // namespace tap

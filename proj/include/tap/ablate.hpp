#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "tap/run_config.hpp"

namespace tap {

struct AblationRow {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double final_recon_mse = 0.0;
  double final_prior_nll = 0.0;
  double mean_best_score = 0.0;  // best search value at the visited states
  double median_latency_ms = 0.0;
};

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {
      "latent_step", "beta", "horizon", "sampler", "unconditional_decoder"};
  return axes;
}

// One row per (value, seed). Axes that only touch planning reuse one trained
// model per seed; latent_step and unconditional_decoder retrain per value.
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress = nullptr);

}  // namespace tap

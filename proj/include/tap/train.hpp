#pragma once

#include <cstdint>
#include <vector>

#include "tap/dataset.hpp"
#include "tap/optim.hpp"
#include "tap/tap_model.hpp"

namespace tap {

struct TrainMetrics {
  int epoch = 0;
  double recon_mse = 0.0;
  double codebook_loss = 0.0;
  double commitment_loss = 0.0;
  double prior_nll = 0.0;
  int codes_used = 0;
  int dead_resets = 0;
};

// Joint training loop: per minibatch one Adam step on the autoencoder, then
// one on the prior with the current encoder's indices as fixed targets.
// Dead codes are re-seeded from recent encoder outputs at each epoch end.
class Trainer {
 public:
  Trainer(TapModel& model, const OfflineDataset& dataset, std::uint64_t seed);

  // Throws NumericError when a loss goes non-finite.
  TrainMetrics train_epoch();

  const std::vector<TrainMetrics>& history() const { return history_; }
  void set_dead_code_reset(bool enabled) { dead_code_reset_ = enabled; }

 private:
  TapModel& model_;
  const OfflineDataset& dataset_;
  std::vector<SegmentTokens> tokens_;  // normalized, built once
  Adam ae_opt_;
  Adam prior_opt_;
  Rng rng_;
  int epoch_ = 0;
  bool dead_code_reset_ = true;
  std::vector<TrainMetrics> history_;
  std::vector<float> encoder_pool_;  // recent encoder outputs for resets
  int pool_rows_ = 0;
};

}  // namespace tap

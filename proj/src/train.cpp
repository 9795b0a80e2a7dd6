#include "tap/train.hpp"

#include <algorithm>
#include <cmath>

namespace tap {

namespace {
constexpr int kPoolCapacityRows = 4096;
}

Trainer::Trainer(TapModel& model, const OfflineDataset& dataset,
                 std::uint64_t seed)
    : model_(model),
      dataset_(dataset),
      ae_opt_(model.autoencoder_params(), model.config().learning_rate),
      prior_opt_(model.prior_params(), model.config().learning_rate),
      rng_(seed) {
  if (dataset.segments.empty())
    throw DataError("trainer: dataset has no segments");
  if (!dataset.stats.fitted)
    throw DataError("trainer: dataset normalization not fitted");
  if (dataset.segment_len != model.config().segment_len)
    throw ConfigError("trainer: segment length mismatch between dataset and model");
  const int s_dim = model.config().state_dim;
  const int a_dim = model.config().action_dim;
  tokens_.reserve(dataset.segments.size());
  for (const TrajectorySegment& seg : dataset.segments)
    tokens_.push_back(segment_to_tokens(
        normalize_segment(seg, dataset.stats, s_dim, a_dim), s_dim, a_dim));
}

TrainMetrics Trainer::train_epoch() {
  const TapConfig& cfg = model_.config();
  const int n = static_cast<int>(tokens_.size());
  Rng epoch_rng = rng_.split(static_cast<std::uint64_t>(epoch_));

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(epoch_rng.uniform_int(i + 1))]);

  TrainMetrics metrics;
  metrics.epoch = epoch_;
  std::int64_t seen = 0;

  const int e_dim = cfg.d_model;
  for (int start = 0; start < n; start += cfg.batch_size) {
    const int batch_n = std::min(cfg.batch_size, n - start);

    ae_opt_.zero_grad();
    for (int b = 0; b < batch_n; ++b) {
      const SegmentTokens& st =
          tokens_[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
      Tape tape;
      auto parts = model_.reconstruction_loss(st.tokens, st.mask, st.s1, &epoch_rng);
      const float loss = parts.total.item();
      if (!std::isfinite(loss))
        throw NumericError("trainer: non-finite autoencoder loss at epoch " +
                           std::to_string(epoch_));
      tape.backward(parts.total);
      metrics.recon_mse += parts.recon_mse.item();
      metrics.codebook_loss += parts.q.codebook_loss.item();
      metrics.commitment_loss += parts.q.commitment_loss.item();
      ++seen;
      // Stash encoder outputs for dead-code resets.
      const auto xb = parts.encoder_outputs.data();
      const int rows = parts.encoder_outputs.rows();
      for (int r = 0; r < rows; ++r) {
        if (pool_rows_ < kPoolCapacityRows) {
          encoder_pool_.insert(encoder_pool_.end(),
                               xb.begin() + static_cast<std::size_t>(r) * e_dim,
                               xb.begin() + static_cast<std::size_t>(r + 1) * e_dim);
          ++pool_rows_;
        } else {
          const int slot = epoch_rng.uniform_int(kPoolCapacityRows);
          std::copy_n(xb.begin() + static_cast<std::size_t>(r) * e_dim, e_dim,
                      encoder_pool_.begin() + static_cast<std::size_t>(slot) * e_dim);
        }
      }
    }
    ae_opt_.scale_grads(1.0f / static_cast<float>(batch_n));
    ae_opt_.step();

    // Prior step on the freshly updated encoder's indices (fixed targets).
    prior_opt_.zero_grad();
    for (int b = 0; b < batch_n; ++b) {
      const SegmentTokens& st =
          tokens_[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
      const auto enc = model_.encode(st.tokens);  // eval mode
      Tape tape;
      Tensor nll = model_.prior_nll(st.s1, enc.indices, &epoch_rng);
      const float loss = nll.item();
      if (!std::isfinite(loss))
        throw NumericError("trainer: non-finite prior loss at epoch " +
                           std::to_string(epoch_));
      tape.backward(nll);
      metrics.prior_nll += loss;
    }
    prior_opt_.scale_grads(1.0f / static_cast<float>(batch_n));
    prior_opt_.step();
  }

  metrics.recon_mse /= static_cast<double>(seen);
  metrics.codebook_loss /= static_cast<double>(seen);
  metrics.commitment_loss /= static_cast<double>(seen);
  metrics.prior_nll /= static_cast<double>(seen);
  metrics.codes_used = model_.codebook().used_count();
  if (dead_code_reset_) {
    metrics.dead_resets =
        model_.codebook().reset_dead_codes(encoder_pool_, pool_rows_, epoch_rng);
  } else {
    model_.codebook().zero_usage();
  }
  encoder_pool_.clear();
  pool_rows_ = 0;

  ++epoch_;
  history_.push_back(metrics);
  return metrics;
}

}  // namespace tap

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tap/common.hpp"
#include "tap/rng.hpp"
#include "tap/tensor.hpp"
#include "tap/transformer.hpp"
#include "tap/vq.hpp"

namespace tap {

// The latent embedding width equals d_model throughout; the two are exposed
// as a single knob.
struct TapConfig {
  int state_dim = 8;
  int action_dim = 2;
  int segment_len = 24;   // T
  int latent_step = 3;    // L, steps represented by one latent code
  int codebook_size = 64; // K
  int d_model = 128;
  int n_layers = 3;
  int n_heads = 4;
  int d_ff = 0;  // 0 means 4 * d_model
  float dropout_p = 0.1f;
  float gamma = 0.99f;
  float learning_rate = 2e-4f;
  int batch_size = 32;
  float commitment_weight = 0.25f;
  bool condition_decoder_on_state = true;
  // Reconstruction channel-group weights (state, action, reward, rtg).
  // Uniform by default; heterogeneous tokens can up-weight the channels that
  // matter for planning.
  float loss_weight_state = 1.0f;
  float loss_weight_action = 1.0f;
  float loss_weight_reward = 1.0f;
  float loss_weight_rtg = 1.0f;

  int token_dim() const { return state_dim + action_dim + 2; }
  int latent_count() const { return segment_len / latent_step; }
  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }

  void validate() const {
    if (state_dim < 1 || action_dim < 1)
      throw ConfigError("tap: state_dim and action_dim must be >= 1");
    if (latent_step < 1 || segment_len < 1 ||
        segment_len % latent_step != 0)
      throw ConfigError("tap: segment_len " + std::to_string(segment_len) +
                        " must be a positive multiple of latent_step " +
                        std::to_string(latent_step));
    if (codebook_size < 2) throw ConfigError("tap: codebook_size must be >= 2");
    if (gamma <= 0.0f || gamma > 1.0f) throw ConfigError("tap: gamma in (0,1]");
    if (learning_rate <= 0.0f) throw ConfigError("tap: learning rate positive");
    if (batch_size < 1) throw ConfigError("tap: batch_size must be >= 1");
    if (commitment_weight < 0.0f)
      throw ConfigError("tap: commitment weight must be >= 0");
    if (loss_weight_state < 0.0f || loss_weight_action < 0.0f ||
        loss_weight_reward < 0.0f || loss_weight_rtg < 0.0f)
      throw ConfigError("tap: loss weights must be >= 0");
    if (loss_weight_state + loss_weight_action + loss_weight_reward +
            loss_weight_rtg <= 0.0f)
      throw ConfigError("tap: loss weights must not all be zero");
    encoder_config().validate();
    prior_config().validate();
  }

  TransformerConfig encoder_config() const {
    return {n_layers, n_heads, d_model, ff_dim(), segment_len, dropout_p};
  }
  TransformerConfig decoder_config() const { return encoder_config(); }
  TransformerConfig prior_config() const {
    return {n_layers, n_heads, d_model, ff_dim(), latent_count(), dropout_p};
  }

  // Model sizes from the original setup (locomotion column).
  static TapConfig paper_defaults() {
    TapConfig cfg;
    cfg.d_model = 512;
    cfg.n_layers = 4;
    cfg.n_heads = 4;
    cfg.codebook_size = 512;
    cfg.segment_len = 24;
    cfg.latent_step = 3;
    cfg.learning_rate = 2e-4f;
    cfg.batch_size = 512;
    return cfg;
  }
};

// State-conditioned trajectory VQ-VAE plus an autoregressive latent prior.
// Encoder: tokens -> causal transformer -> maxpool(L) -> linear -> quantize.
// Decoder: codes tiled L times, first state concatenated onto every row,
// mixed by the decoder transformer's input projection, read out as tokens.
// Prior: p(z_t | z_<t, s1) over the codebook with a learned begin token.
template <typename T>
class TapModelT {
 public:
  TapModelT(const TapConfig& cfg, Rng& rng)
      : cfg_(cfg),
        encoder_(cfg.encoder_config(), cfg.token_dim(), rng),
        post_pool_w_(TensorT<T>::randn({cfg.d_model, cfg.d_model}, rng,
                                       static_cast<T>(0.02), true)),
        post_pool_b_(TensorT<T>::zeros({cfg.d_model}, true)),
        codebook_(cfg.codebook_size, cfg.d_model, rng),
        decoder_(cfg.decoder_config(), cfg.d_model + cfg.state_dim, rng),
        head_w_(TensorT<T>::randn({cfg.d_model, cfg.token_dim()}, rng,
                                  static_cast<T>(0.02), true)),
        head_b_(TensorT<T>::zeros({cfg.token_dim()}, true)),
        prior_(cfg.prior_config(), cfg.d_model + cfg.state_dim, rng),
        prior_head_w_(TensorT<T>::randn({cfg.d_model, cfg.codebook_size}, rng,
                                        static_cast<T>(0.02), true)),
        prior_head_b_(TensorT<T>::zeros({cfg.codebook_size}, true)),
        bos_(TensorT<T>::randn({1, cfg.d_model}, rng, static_cast<T>(0.02), true)) {
    cfg_.validate();
  }

  const TapConfig& config() const { return cfg_; }
  CodebookT<T>& codebook() { return codebook_; }
  const CodebookT<T>& codebook() const { return codebook_; }

  struct EncodeResult {
    std::vector<int> indices;        // M latent codes
    QuantizationResultT<T> q;        // straight-through values and vq losses
    TensorT<T> encoder_outputs;      // M x E, pre-quantization
  };

  EncodeResult encode(const TensorT<T>& tokens, Rng* dropout_rng = nullptr) {
    if (tokens.rank() != 2 || tokens.rows() != cfg_.segment_len)
      throw DimensionError("encode: expected " +
                           std::to_string(cfg_.segment_len) + " token rows");
    TensorT<T> feats = encoder_.forward(tokens, dropout_rng);
    TensorT<T> pooled = maxpool1d(feats, cfg_.latent_step);
    TensorT<T> xbar = linear(pooled, post_pool_w_, post_pool_b_);
    EncodeResult out;
    out.q = codebook_.quantize(xbar);
    out.indices = out.q.indices;
    out.encoder_outputs = xbar;
    return out;
  }

  // Decodes m quantized code vectors into m*L token rows (normalized units).
  TensorT<T> decode_quantized(std::span<const T> s1, const TensorT<T>& codes,
                              Rng* dropout_rng = nullptr) const {
    if (codes.rank() != 2 || codes.cols() != cfg_.d_model)
      throw DimensionError("decode: code width mismatch");
    if (static_cast<int>(s1.size()) != cfg_.state_dim)
      throw DimensionError("decode: state width mismatch");
    const int m = codes.rows();
    TensorT<T> tiled = tile_rows(codes, cfg_.latent_step);
    TensorT<T> state_rows = TensorT<T>::zeros({m * cfg_.latent_step, cfg_.state_dim});
    if (cfg_.condition_decoder_on_state) {
      for (int r = 0; r < m * cfg_.latent_step; ++r)
        std::copy(s1.begin(), s1.end(),
                  state_rows.data().data() +
                      static_cast<std::size_t>(r) * cfg_.state_dim);
    }
    TensorT<T> mixed_in = concat_cols(tiled, state_rows);
    TensorT<T> feats = decoder_.forward(mixed_in, dropout_rng);
    return linear(feats, head_w_, head_b_);
  }

  // Decoding from raw latent indices (planning path).
  TensorT<T> decode(std::span<const T> s1, std::span<const int> latents,
                    Rng* dropout_rng = nullptr) const {
    if (latents.empty()) throw ArgumentError("decode: empty latent sequence");
    std::vector<int> idx(latents.begin(), latents.end());
    TensorT<T> codes = embedding(codebook_.vectors(), idx);
    return decode_quantized(s1, codes, dropout_rng);
  }

  // Row j holds the logits for z_{j+1} given z_{<=j} and s1; row 0 follows
  // the learned begin-of-sequence embedding.
  TensorT<T> prior_logits(std::span<const T> s1, std::span<const int> prefix,
                          Rng* dropout_rng = nullptr) const {
    if (static_cast<int>(s1.size()) != cfg_.state_dim)
      throw DimensionError("prior: state width mismatch");
    if (static_cast<int>(prefix.size()) > cfg_.latent_count() - 1)
      throw CapacityError("prior: prefix too long");
    TensorT<T> emb = bos_;
    if (!prefix.empty()) {
      std::vector<int> idx(prefix.begin(), prefix.end());
      emb = concat_rows(bos_, detach(embedding(codebook_.vectors(), idx)));
    }
    const int rows = emb.rows();
    TensorT<T> state_rows = TensorT<T>::zeros({rows, cfg_.state_dim});
    for (int r = 0; r < rows; ++r)
      std::copy(s1.begin(), s1.end(),
                state_rows.data().data() + static_cast<std::size_t>(r) * cfg_.state_dim);
    TensorT<T> feats = prior_.forward(concat_cols(emb, state_rows), dropout_rng);
    return linear(feats, prior_head_w_, prior_head_b_);
  }

  struct LossParts {
    TensorT<T> total;
    TensorT<T> recon_mse;
    QuantizationResultT<T> q;
    TensorT<T> encoder_outputs;
  };

  // Per-channel weight vector for the reconstruction loss; empty when the
  // group weights are uniform.
  std::vector<T> channel_weights() const {
    const bool uniform = cfg_.loss_weight_state == 1.0f &&
                         cfg_.loss_weight_action == 1.0f &&
                         cfg_.loss_weight_reward == 1.0f &&
                         cfg_.loss_weight_rtg == 1.0f;
    if (uniform) return {};
    std::vector<T> w(static_cast<std::size_t>(cfg_.token_dim()));
    int j = 0;
    for (int i = 0; i < cfg_.state_dim; ++i)
      w[static_cast<std::size_t>(j++)] = static_cast<T>(cfg_.loss_weight_state);
    for (int i = 0; i < cfg_.action_dim; ++i)
      w[static_cast<std::size_t>(j++)] = static_cast<T>(cfg_.loss_weight_action);
    w[static_cast<std::size_t>(j++)] = static_cast<T>(cfg_.loss_weight_reward);
    w[static_cast<std::size_t>(j++)] = static_cast<T>(cfg_.loss_weight_rtg);
    return w;
  }

  // Masked reconstruction MSE plus the vq losses.
  LossParts reconstruction_loss(const TensorT<T>& tokens,
                                const std::vector<T>& mask,
                                std::span<const T> s1,
                                Rng* dropout_rng = nullptr) {
    EncodeResult enc = encode(tokens, dropout_rng);
    TensorT<T> recon = decode_quantized(s1, enc.q.quantized, dropout_rng);
    LossParts parts;
    parts.recon_mse = mse_masked(recon, tokens, mask, channel_weights());
    parts.total = add(parts.recon_mse,
                      vq_losses(enc.q, static_cast<T>(cfg_.commitment_weight)));
    parts.q = std::move(enc.q);
    parts.encoder_outputs = std::move(enc.encoder_outputs);
    return parts;
  }

  // Cross entropy of the prior on a full latent sequence.
  TensorT<T> prior_nll(std::span<const T> s1, const std::vector<int>& indices,
                       Rng* dropout_rng = nullptr) const {
    if (static_cast<int>(indices.size()) != cfg_.latent_count())
      throw DimensionError("prior_nll: expected M latent codes");
    const std::span<const int> prefix(indices.data(), indices.size() - 1);
    TensorT<T> logits = prior_logits(s1, prefix, dropout_rng);
    return softmax_cross_entropy(logits, indices);
  }

  // Token-by-token prior evaluation for sampling. prev_code < 0 feeds the
  // begin-of-sequence embedding.
  struct PriorCache {
    typename CausalTransformerT<T>::Cache tf;
  };

  PriorCache make_prior_cache() const { return PriorCache{prior_.make_cache()}; }

  std::vector<T> prior_next_logits(PriorCache& cache, std::span<const T> s1,
                                   int prev_code) const {
    if (prev_code >= cfg_.codebook_size)
      throw IndexError("prior: code out of range");
    std::vector<T> token(static_cast<std::size_t>(cfg_.d_model + cfg_.state_dim));
    if (prev_code < 0) {
      std::copy_n(bos_.data().data(), cfg_.d_model, token.data());
    } else {
      std::copy_n(codebook_.vectors().data().data() +
                      static_cast<std::size_t>(prev_code) * cfg_.d_model,
                  cfg_.d_model, token.data());
    }
    std::copy(s1.begin(), s1.end(), token.data() + cfg_.d_model);
    const std::vector<T> feats = prior_.forward_incremental(cache.tf, token);
    std::vector<T> logits(static_cast<std::size_t>(cfg_.codebook_size));
    for (int j = 0; j < cfg_.codebook_size; ++j)
      logits[static_cast<std::size_t>(j)] = prior_head_b_.data()[j];
    for (int l = 0; l < cfg_.d_model; ++l) {
      const T f = feats[static_cast<std::size_t>(l)];
      const T* wrow = prior_head_w_.data().data() +
                      static_cast<std::size_t>(l) * cfg_.codebook_size;
      for (int j = 0; j < cfg_.codebook_size; ++j)
        logits[static_cast<std::size_t>(j)] += f * wrow[j];
    }
    return logits;
  }

  // Autoencoder side: encoder, bottleneck, codebook, decoder, output head.
  std::vector<TensorT<T>> autoencoder_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> named;
    encoder_.collect_params("encoder", named);
    named.emplace_back("post_pool_w", post_pool_w_);
    named.emplace_back("post_pool_b", post_pool_b_);
    named.emplace_back("codebook", codebook_.vectors());
    decoder_.collect_params("decoder", named);
    named.emplace_back("head_w", head_w_);
    named.emplace_back("head_b", head_b_);
    std::vector<TensorT<T>> out;
    out.reserve(named.size());
    for (auto& [name, p] : named) out.push_back(p);
    return out;
  }

  std::vector<TensorT<T>> prior_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> named;
    prior_.collect_params("prior", named);
    named.emplace_back("prior_head_w", prior_head_w_);
    named.emplace_back("prior_head_b", prior_head_b_);
    named.emplace_back("bos", bos_);
    std::vector<TensorT<T>> out;
    out.reserve(named.size());
    for (auto& [name, p] : named) out.push_back(p);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> named;
    encoder_.collect_params("encoder", named);
    named.emplace_back("post_pool_w", post_pool_w_);
    named.emplace_back("post_pool_b", post_pool_b_);
    named.emplace_back("codebook", codebook_.vectors());
    decoder_.collect_params("decoder", named);
    named.emplace_back("head_w", head_w_);
    named.emplace_back("head_b", head_b_);
    prior_.collect_params("prior", named);
    named.emplace_back("prior_head_w", prior_head_w_);
    named.emplace_back("prior_head_b", prior_head_b_);
    named.emplace_back("bos", bos_);
    return named;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : named_params()) n += p.size();
    return n;
  }

 private:
  TapConfig cfg_;
  CausalTransformerT<T> encoder_;
  TensorT<T> post_pool_w_, post_pool_b_;
  CodebookT<T> codebook_;
  CausalTransformerT<T> decoder_;
  TensorT<T> head_w_, head_b_;
  CausalTransformerT<T> prior_;
  TensorT<T> prior_head_w_, prior_head_b_;
  TensorT<T> bos_;
};

using TapModel = TapModelT<float>;

}  // namespace tap

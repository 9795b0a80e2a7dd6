#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "tap/transformer.hpp"

using tap::CausalTransformer;
using tap::Rng;
using tap::TransformerConfig;

namespace {

TransformerConfig small_config() {
  TransformerConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.max_seq_len = 12;
  cfg.dropout_p = 0.1f;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  TransformerConfig cfg = small_config();
  cfg.d_model = 15;  // not divisible by 2 heads
  CHECK_THROWS_AS(cfg.validate(), tap::ConfigError);
  cfg = small_config();
  cfg.dropout_p = 1.0f;
  CHECK_THROWS_AS(cfg.validate(), tap::ConfigError);
}

TEST_CASE("forward shape and capacity error") {
  Rng rng(1);
  CausalTransformer model(small_config(), 6, rng);
  Rng data_rng(2);
  tap::Tensor tokens = tap::Tensor::randn({8, 6}, data_rng, 1.0f);
  tap::Tensor out = model.forward(tokens);
  CHECK(out.rows() == 8);
  CHECK(out.cols() == 16);

  tap::Tensor wide = tap::Tensor::randn({8, 7}, data_rng, 1.0f);
  CHECK_THROWS_AS(model.forward(wide), tap::DimensionError);
  tap::Tensor long_seq = tap::Tensor::randn({13, 6}, data_rng, 1.0f);
  CHECK_THROWS_AS(model.forward(long_seq), tap::CapacityError);
}

TEST_CASE("causality: perturbing position t leaves earlier outputs bit-identical") {
  Rng rng(3);
  CausalTransformer model(small_config(), 6, rng);
  Rng data_rng(4);
  tap::Tensor tokens = tap::Tensor::randn({8, 6}, data_rng, 1.0f);
  tap::Tensor base = model.forward(tokens);

  const int t = 3;
  tap::Tensor perturbed = tap::Tensor::from_data(
      tokens.shape(), {tokens.data().begin(), tokens.data().end()});
  for (int j = 0; j < 6; ++j)
    perturbed.data()[static_cast<std::size_t>(t) * 6 + j] += 1.0f + j;
  tap::Tensor out = model.forward(perturbed);

  for (int i = 0; i < t; ++i)
    for (int j = 0; j < 16; ++j) CHECK(out.at(i, j) == base.at(i, j));
  bool later_changed = false;
  for (int i = t; i < 8; ++i)
    for (int j = 0; j < 16; ++j) later_changed |= out.at(i, j) != base.at(i, j);
  CHECK(later_changed);
}

TEST_CASE("single token equals position zero of a longer sequence") {
  Rng rng(5);
  CausalTransformer model(small_config(), 6, rng);
  Rng data_rng(6);
  tap::Tensor tokens = tap::Tensor::randn({5, 6}, data_rng, 1.0f);
  tap::Tensor full = model.forward(tokens);
  tap::Tensor single = model.forward(tap::slice_rows(tokens, 0, 1));
  for (int j = 0; j < 16; ++j) CHECK(single.at(0, j) == full.at(0, j));
}

TEST_CASE("incremental forward matches full forward within 1e-5") {
  Rng rng(7);
  CausalTransformer model(small_config(), 6, rng);
  Rng data_rng(8);
  const int t = 8;
  tap::Tensor tokens = tap::Tensor::randn({t, 6}, data_rng, 1.0f);
  tap::Tensor full = model.forward(tokens);

  auto cache = model.make_cache();
  float max_diff = 0.0f;
  for (int i = 0; i < t; ++i) {
    const auto feats = model.forward_incremental(
        cache, std::span<const float>(tokens.data().data() + i * 6, 6));
    CHECK(cache.len == i + 1);
    for (int j = 0; j < 16; ++j)
      max_diff = std::max(max_diff, std::abs(feats[j] - full.at(i, j)));
  }
  CHECK(max_diff < 1e-5f);
}

TEST_CASE("incremental base case and capacity") {
  Rng rng(9);
  CausalTransformer model(small_config(), 6, rng);
  Rng data_rng(10);
  tap::Tensor token = tap::Tensor::randn({1, 6}, data_rng, 1.0f);
  tap::Tensor full = model.forward(token);
  auto cache = model.make_cache();
  const auto feats = model.forward_incremental(
      cache, std::span<const float>(token.data().data(), 6));
  for (int j = 0; j < 16; ++j)
    CHECK(std::abs(feats[j] - full.at(0, j)) < 1e-5f);

  TransformerConfig tiny = small_config();
  tiny.max_seq_len = 1;
  Rng rng2(11);
  CausalTransformer capped(tiny, 6, rng2);
  auto cache2 = capped.make_cache();
  (void)capped.forward_incremental(cache2, std::span<const float>(token.data().data(), 6));
  CHECK_THROWS_AS(
      capped.forward_incremental(cache2, std::span<const float>(token.data().data(), 6)),
      tap::CapacityError);
}

TEST_CASE("dropout only active in train mode") {
  Rng rng(12);
  CausalTransformer model(small_config(), 6, rng);
  Rng data_rng(13);
  tap::Tensor tokens = tap::Tensor::randn({4, 6}, data_rng, 1.0f);
  tap::Tensor eval1 = model.forward(tokens);
  tap::Tensor eval2 = model.forward(tokens);
  for (std::int64_t i = 0; i < eval1.size(); ++i)
    CHECK(eval1.data()[i] == eval2.data()[i]);

  Rng d1(100), d2(101);
  tap::Tensor train1 = model.forward(tokens, &d1);
  tap::Tensor train2 = model.forward(tokens, &d2);
  bool differs = false;
  for (std::int64_t i = 0; i < train1.size(); ++i)
    differs |= train1.data()[i] != train2.data()[i];
  CHECK(differs);
}

TEST_CASE("parameter count is a deterministic function of the config") {
  Rng rng(14);
  TransformerConfig cfg = small_config();
  const int d_in = 6;
  CausalTransformer model(cfg, d_in, rng);
  const std::int64_t d = cfg.d_model, ff = cfg.d_ff, L = cfg.n_layers;
  const std::int64_t expected = d_in * d + d            // input projection
                                + cfg.max_seq_len * d   // positions
                                + L * (2 * d            // ln1
                                       + 4 * (d * d + d)  // attention
                                       + 2 * d          // ln2
                                       + d * ff + ff + ff * d + d)  // mlp
                                + 2 * d;                // final ln
  CHECK(model.param_count() == expected);
  CHECK(model.param_count() == 4784);  // frozen for this config

  Rng rng2(15);
  CausalTransformer again(cfg, d_in, rng2);
  CHECK(again.param_count() == model.param_count());
}

TEST_CASE("gradients flow through the transformer") {
  using DTransformer = tap::CausalTransformerT<double>;
  TransformerConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.max_seq_len = 4;
  cfg.dropout_p = 0.0f;
  Rng rng(16);
  DTransformer model(cfg, 5, rng);
  Rng data_rng(17);
  tap::TensorT<double> tokens = tap::TensorT<double>::randn({3, 5}, data_rng, 1.0);

  std::vector<std::pair<std::string, tap::TensorT<double>>> named;
  model.collect_params("m", named);
  std::vector<tap::TensorT<double>> params;
  for (auto& [name, p] : named) params.push_back(p);

  Rng check_rng(18);
  const double err = tap::grad_check<double>(
      [&](std::vector<tap::TensorT<double>>&) {
        return tap::mean(model.forward(tokens));
      },
      params, check_rng, 3);
  CHECK(err < 1e-3);
}

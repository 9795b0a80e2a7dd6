#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tap/common.hpp"
#include "tap/rng.hpp"
#include "tap/tensor.hpp"

namespace tap {

template <typename T>
struct QuantizationResultT {
  std::vector<int> indices;
  TensorT<T> quantized;        // code vectors, straight-through to the inputs
  TensorT<T> codebook_loss;    // ||sg(x) - e||^2, pulls codes toward inputs
  TensorT<T> commitment_loss;  // ||x - sg(e)||^2, pulls inputs toward codes
};

// K learnable embedding vectors of width E. Nearest-neighbour quantization
// with straight-through gradients; per-epoch usage counts drive dead-code
// resets during training.
template <typename T>
class CodebookT {
 public:
  CodebookT(int k, int e_dim, Rng& rng) : k_(k), e_(e_dim) {
    if (k < 2) throw ConfigError("codebook: K must be >= 2");
    if (e_dim < 1) throw ConfigError("codebook: embedding width must be >= 1");
    vectors_ = TensorT<T>::randn(
        {k, e_dim}, rng, T(1) / std::sqrt(static_cast<T>(e_dim)), true);
    usage_.assign(static_cast<std::size_t>(k), 0);
  }

  int size() const { return k_; }
  int dim() const { return e_; }
  TensorT<T>& vectors() { return vectors_; }
  const TensorT<T>& vectors() const { return vectors_; }
  std::span<const std::int64_t> usage() const { return usage_; }

  int used_count() const {
    int n = 0;
    for (auto c : usage_)
      if (c > 0) ++n;
    return n;
  }

  void zero_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

  // Per row: nearest code by Euclidean distance (ties to the lowest index).
  // Distances accumulate in double so the result matches a double-precision
  // argmin exactly.
  QuantizationResultT<T> quantize(const TensorT<T>& x) {
    if (x.rank() != 2 || x.cols() != e_)
      throw DimensionError("quantize: input width does not match codebook");
    if (!all_finite(x)) throw NumericError("quantize: non-finite input");
    const int m = x.rows();
    QuantizationResultT<T> result;
    result.indices.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      const T* row = x.data().data() + static_cast<std::size_t>(i) * e_;
      int best = 0;
      double best_d = distance2(row, 0);
      for (int c = 1; c < k_; ++c) {
        const double d = distance2(row, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      result.indices[static_cast<std::size_t>(i)] = best;
      ++usage_[static_cast<std::size_t>(best)];
    }

    // Forward output is the code vectors bit-exactly; the backward pass
    // copies the downstream gradient to the encoder outputs unchanged.
    const bool tracked = TapeT<T>::active() != nullptr && x.requires_grad();
    result.quantized = TensorT<T>::zeros({m, e_}, tracked);
    for (int i = 0; i < m; ++i)
      std::copy_n(vectors_.data().data() +
                      static_cast<std::size_t>(result.indices[i]) * e_,
                  e_,
                  result.quantized.data().data() + static_cast<std::size_t>(i) * e_);
    if (tracked) {
      auto xs = x.storage();
      auto os = result.quantized.storage();
      detail::ensure_grad(xs);
      TapeT<T>::active()->record([xs, os] {
        for (std::size_t i = 0; i < xs->grad.size(); ++i)
          xs->grad[i] += os->grad[i];
      });
    }

    const T inv_m = T(1) / static_cast<T>(m);
    TensorT<T> selected = embedding(vectors_, result.indices);
    TensorT<T> cb_diff = sub(selected, detach(x));
    result.codebook_loss = scale(sum(mul(cb_diff, cb_diff)), inv_m);
    TensorT<T> cm_diff = sub(x, detach(selected));
    result.commitment_loss = scale(sum(mul(cm_diff, cm_diff)), inv_m);
    return result;
  }

  // Re-initializes codes unused since the last reset from a pool of recent
  // encoder outputs (pool_rows rows of width E, row-major). Returns the
  // number of codes reset; zeroes all usage counts.
  int reset_dead_codes(std::span<const T> pool, int pool_rows, Rng& rng) {
    if (pool_rows > 0 &&
        pool.size() != static_cast<std::size_t>(pool_rows) * e_)
      throw DimensionError("reset_dead_codes: pool size mismatch");
    int resets = 0;
    if (pool_rows > 0) {
      for (int c = 0; c < k_; ++c) {
        if (usage_[static_cast<std::size_t>(c)] != 0) continue;
        const int pick = rng.uniform_int(pool_rows);
        std::copy_n(pool.data() + static_cast<std::size_t>(pick) * e_, e_,
                    vectors_.data().data() + static_cast<std::size_t>(c) * e_);
        ++resets;
      }
    }
    zero_usage();
    return resets;
  }

 private:
  double distance2(const T* row, int code) const {
    const T* cv = vectors_.data().data() + static_cast<std::size_t>(code) * e_;
    double acc = 0.0;
    for (int j = 0; j < e_; ++j) {
      const double d = static_cast<double>(row[j]) - static_cast<double>(cv[j]);
      acc += d * d;
    }
    return acc;
  }

  int k_ = 0;
  int e_ = 0;
  TensorT<T> vectors_;
  std::vector<std::int64_t> usage_;
};

// codebook_loss + weight * commitment_loss.
template <typename T>
TensorT<T> vq_losses(const QuantizationResultT<T>& result, T commitment_weight) {
  if (commitment_weight < T(0))
    throw ArgumentError("vq_losses: commitment weight must be >= 0");
  return add(result.codebook_loss, scale(result.commitment_loss, commitment_weight));
}

using Codebook = CodebookT<float>;
using QuantizationResult = QuantizationResultT<float>;

}  // namespace tap

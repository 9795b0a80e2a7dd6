#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tap/common.hpp"
#include "tap/rng.hpp"
#include "tap/tensor.hpp"

namespace tap {

struct TransformerConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 512;
  int d_ff = 2048;
  int max_seq_len = 24;
  float dropout_p = 0.1f;

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_seq_len < 1)
      throw ConfigError("transformer: all extents must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("transformer: d_model must be divisible by n_heads");
    if (dropout_p < 0.0f || dropout_p >= 1.0f)
      throw ConfigError("transformer: dropout_p must be in [0,1)");
  }
};

// GPT-style causal Transformer over a token matrix [t x d_in]. Pre-layer-norm
// residual blocks, learned positional embeddings, additive -1e9 causal mask.
// Dropout runs only when a generator is supplied to forward().
template <typename T>
class CausalTransformerT {
 public:
  CausalTransformerT(const TransformerConfig& cfg, int d_in, Rng& rng)
      : cfg_(cfg), d_in_(d_in) {
    cfg_.validate();
    if (d_in < 1) throw ConfigError("transformer: d_in must be positive");
    const T sd = static_cast<T>(0.02);
    auto w = [&](int r, int c) {
      return TensorT<T>::randn({r, c}, rng, sd, true);
    };
    auto zeros1 = [&](int nvals) { return TensorT<T>::zeros({nvals}, true); };
    auto ones1 = [&](int nvals) { return TensorT<T>::filled({nvals}, T(1), true); };
    w_in_ = w(d_in_, cfg_.d_model);
    b_in_ = zeros1(cfg_.d_model);
    pos_ = w(cfg_.max_seq_len, cfg_.d_model);
    blocks_.reserve(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      Block blk;
      blk.ln1_g = ones1(cfg_.d_model);
      blk.ln1_b = zeros1(cfg_.d_model);
      blk.wq = w(cfg_.d_model, cfg_.d_model);
      blk.bq = zeros1(cfg_.d_model);
      blk.wk = w(cfg_.d_model, cfg_.d_model);
      blk.bk = zeros1(cfg_.d_model);
      blk.wv = w(cfg_.d_model, cfg_.d_model);
      blk.bv = zeros1(cfg_.d_model);
      blk.wo = w(cfg_.d_model, cfg_.d_model);
      blk.bo = zeros1(cfg_.d_model);
      blk.ln2_g = ones1(cfg_.d_model);
      blk.ln2_b = zeros1(cfg_.d_model);
      blk.w1 = w(cfg_.d_model, cfg_.d_ff);
      blk.b1 = zeros1(cfg_.d_ff);
      blk.w2 = w(cfg_.d_ff, cfg_.d_model);
      blk.b2 = zeros1(cfg_.d_model);
      blocks_.push_back(std::move(blk));
    }
    lnf_g_ = ones1(cfg_.d_model);
    lnf_b_ = zeros1(cfg_.d_model);
  }

  const TransformerConfig& config() const { return cfg_; }
  int d_in() const { return d_in_; }

  TensorT<T> forward(const TensorT<T>& tokens, Rng* dropout_rng = nullptr) const {
    if (tokens.rank() != 2 || tokens.cols() != d_in_)
      throw DimensionError("transformer: token width mismatch");
    const int t = tokens.rows();
    if (t > cfg_.max_seq_len)
      throw CapacityError("transformer: sequence exceeds max_seq_len");
    const T p = static_cast<T>(cfg_.dropout_p);
    const bool train = dropout_rng != nullptr;

    TensorT<T> h = linear(tokens, w_in_, b_in_);
    h = add(h, slice_rows(pos_, 0, t));
    h = dropout(h, p, train, dropout_rng);

    const TensorT<T> mask = causal_mask(t);
    const int dh = cfg_.d_model / cfg_.n_heads;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    for (const Block& blk : blocks_) {
      TensorT<T> a = layer_norm(h, blk.ln1_g, blk.ln1_b);
      TensorT<T> q = linear(a, blk.wq, blk.bq);
      TensorT<T> k = linear(a, blk.wk, blk.bk);
      TensorT<T> v = linear(a, blk.wv, blk.bv);
      std::vector<TensorT<T>> heads;
      heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
      for (int hd = 0; hd < cfg_.n_heads; ++hd) {
        TensorT<T> qh = slice_cols(q, hd * dh, dh);
        TensorT<T> kh = slice_cols(k, hd * dh, dh);
        TensorT<T> vh = slice_cols(v, hd * dh, dh);
        TensorT<T> scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
        scores = add(scores, mask);
        TensorT<T> attn = softmax_rows(scores);
        attn = dropout(attn, p, train, dropout_rng);
        heads.push_back(matmul(attn, vh));
      }
      TensorT<T> ctx = concat_cols(heads);
      TensorT<T> att_out = dropout(linear(ctx, blk.wo, blk.bo), p, train, dropout_rng);
      h = add(h, att_out);
      TensorT<T> m = layer_norm(h, blk.ln2_g, blk.ln2_b);
      TensorT<T> ff = linear(gelu(linear(m, blk.w1, blk.b1)), blk.w2, blk.b2);
      ff = dropout(ff, p, train, dropout_rng);
      h = add(h, ff);
    }
    return layer_norm(h, lnf_g_, lnf_b_);
  }

  // Key/value cache for token-by-token inference (eval mode only).
  struct Cache {
    int len = 0;
    std::vector<std::vector<T>> keys;    // per layer, len * d_model
    std::vector<std::vector<T>> values;  // per layer, len * d_model
  };

  Cache make_cache() const {
    Cache c;
    c.keys.resize(static_cast<std::size_t>(cfg_.n_layers));
    c.values.resize(static_cast<std::size_t>(cfg_.n_layers));
    return c;
  }

  // Appends one token to the cache and returns the features at its position.
  // Matches the last row of forward() on the concatenated sequence.
  std::vector<T> forward_incremental(Cache& cache, std::span<const T> token) const {
    if (static_cast<int>(token.size()) != d_in_)
      throw DimensionError("transformer: token width mismatch");
    if (cache.len + 1 > cfg_.max_seq_len)
      throw CapacityError("transformer: cache exceeds max_seq_len");
    const int d = cfg_.d_model;
    const int dh = d / cfg_.n_heads;
    const int pos = cache.len;

    std::vector<T> x(static_cast<std::size_t>(d));
    matvec(token, w_in_, b_in_, x);
    const T* prow = pos_.data().data() + static_cast<std::size_t>(pos) * d;
    for (int j = 0; j < d; ++j) x[j] += prow[j];

    std::vector<T> a(static_cast<std::size_t>(d)), q(static_cast<std::size_t>(d)),
        k(static_cast<std::size_t>(d)), v(static_cast<std::size_t>(d)),
        ctx(static_cast<std::size_t>(d)), tmp(static_cast<std::size_t>(d));
    std::vector<T> ff(static_cast<std::size_t>(cfg_.d_ff));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const Block& blk = blocks_[static_cast<std::size_t>(l)];
      layer_norm_row(x, blk.ln1_g, blk.ln1_b, a);
      matvec(a, blk.wq, blk.bq, q);
      matvec(a, blk.wk, blk.bk, k);
      matvec(a, blk.wv, blk.bv, v);
      auto& kcache = cache.keys[static_cast<std::size_t>(l)];
      auto& vcache = cache.values[static_cast<std::size_t>(l)];
      kcache.insert(kcache.end(), k.begin(), k.end());
      vcache.insert(vcache.end(), v.begin(), v.end());
      const int span = pos + 1;
      const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
      std::vector<T> scores(static_cast<std::size_t>(span));
      for (int hd = 0; hd < cfg_.n_heads; ++hd) {
        const int hoff = hd * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (int s = 0; s < span; ++s) {
          const T* krow = kcache.data() + static_cast<std::size_t>(s) * d + hoff;
          T dot = T(0);
          for (int j = 0; j < dh; ++j) dot += q[hoff + j] * krow[j];
          scores[s] = dot * inv_sqrt_dh;
          mx = std::max(mx, scores[s]);
        }
        double z = 0.0;
        for (int s = 0; s < span; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          z += static_cast<double>(scores[s]);
        }
        const T inv = static_cast<T>(1.0 / z);
        for (int j = 0; j < dh; ++j) ctx[hoff + j] = T(0);
        for (int s = 0; s < span; ++s) {
          const T wgt = scores[s] * inv;
          const T* vrow = vcache.data() + static_cast<std::size_t>(s) * d + hoff;
          for (int j = 0; j < dh; ++j) ctx[hoff + j] += wgt * vrow[j];
        }
      }
      matvec(ctx, blk.wo, blk.bo, tmp);
      for (int j = 0; j < d; ++j) x[j] += tmp[j];
      layer_norm_row(x, blk.ln2_g, blk.ln2_b, a);
      matvec(a, blk.w1, blk.b1, ff);
      for (auto& fv : ff) {
        const T u = static_cast<T>(0.7978845608028654) *
                    (fv + static_cast<T>(0.044715) * fv * fv * fv);
        fv = T(0.5) * fv * (T(1) + std::tanh(u));
      }
      matvec(ff, blk.w2, blk.b2, tmp);
      for (int j = 0; j < d; ++j) x[j] += tmp[j];
    }
    layer_norm_row(x, lnf_g_, lnf_b_, a);
    cache.len += 1;
    return a;
  }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, TensorT<T>>>& out) const {
    out.emplace_back(prefix + ".w_in", w_in_);
    out.emplace_back(prefix + ".b_in", b_in_);
    out.emplace_back(prefix + ".pos", pos_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const std::string bp = prefix + ".block" + std::to_string(l);
      const Block& blk = blocks_[l];
      out.emplace_back(bp + ".ln1_g", blk.ln1_g);
      out.emplace_back(bp + ".ln1_b", blk.ln1_b);
      out.emplace_back(bp + ".wq", blk.wq);
      out.emplace_back(bp + ".bq", blk.bq);
      out.emplace_back(bp + ".wk", blk.wk);
      out.emplace_back(bp + ".bk", blk.bk);
      out.emplace_back(bp + ".wv", blk.wv);
      out.emplace_back(bp + ".bv", blk.bv);
      out.emplace_back(bp + ".wo", blk.wo);
      out.emplace_back(bp + ".bo", blk.bo);
      out.emplace_back(bp + ".ln2_g", blk.ln2_g);
      out.emplace_back(bp + ".ln2_b", blk.ln2_b);
      out.emplace_back(bp + ".w1", blk.w1);
      out.emplace_back(bp + ".b1", blk.b1);
      out.emplace_back(bp + ".w2", blk.w2);
      out.emplace_back(bp + ".b2", blk.b2);
    }
    out.emplace_back(prefix + ".lnf_g", lnf_g_);
    out.emplace_back(prefix + ".lnf_b", lnf_b_);
  }

  std::int64_t param_count() const {
    std::vector<std::pair<std::string, TensorT<T>>> ps;
    collect_params("t", ps);
    std::int64_t n = 0;
    for (const auto& [name, tensor] : ps) n += tensor.size();
    return n;
  }

 private:
  struct Block {
    TensorT<T> ln1_g, ln1_b;
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<T> ln2_g, ln2_b;
    TensorT<T> w1, b1, w2, b2;
  };

  TensorT<T> causal_mask(int t) const {
    TensorT<T> m = TensorT<T>::zeros({t, t});
    for (int i = 0; i < t; ++i)
      for (int j = i + 1; j < t; ++j)
        m.data()[static_cast<std::size_t>(i) * t + j] = static_cast<T>(-1e9);
    return m;
  }

  // out = row * w + b for a single row vector.
  static void matvec(std::span<const T> row, const TensorT<T>& w,
                     const TensorT<T>& b, std::vector<T>& out) {
    const int in = w.rows(), on = w.cols();
    for (int j = 0; j < on; ++j) out[static_cast<std::size_t>(j)] = b.data()[j];
    for (int l = 0; l < in; ++l) {
      const T rv = row[static_cast<std::size_t>(l)];
      const T* wrow = w.data().data() + static_cast<std::size_t>(l) * on;
      for (int j = 0; j < on; ++j) out[static_cast<std::size_t>(j)] += rv * wrow[j];
    }
  }

  static void layer_norm_row(std::span<const T> x, const TensorT<T>& gain,
                             const TensorT<T>& bias, std::vector<T>& out) {
    const int f = static_cast<int>(x.size());
    T mu = T(0);
    for (T v : x) mu += v;
    mu /= static_cast<T>(f);
    T var = T(0);
    for (T v : x) var += (v - mu) * (v - mu);
    var /= static_cast<T>(f);
    const T is = T(1) / std::sqrt(var + static_cast<T>(1e-5));
    for (int j = 0; j < f; ++j)
      out[static_cast<std::size_t>(j)] =
          gain.data()[j] * (x[static_cast<std::size_t>(j)] - mu) * is +
          bias.data()[j];
  }

  TransformerConfig cfg_;
  int d_in_ = 0;
  TensorT<T> w_in_, b_in_, pos_;
  std::vector<Block> blocks_;
  TensorT<T> lnf_g_, lnf_b_;
};

using CausalTransformer = CausalTransformerT<float>;

}  // namespace tap

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tap/common.hpp"
#include "tap/kernels.hpp"
#include "tap/rng.hpp"

namespace tap {

template <typename T>
struct StorageT {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;
};

// Value-semantics handle over a dense row-major float buffer. Rank is 1 or 2.
// Gradients accumulate into the storage's grad buffer during Tape::backward.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static TensorT filled(std::vector<int> shape, T value,
                        bool requires_grad = false) {
    auto s = std::make_shared<StorageT<T>>();
    s->shape = std::move(shape);
    s->data.assign(checked_size(s->shape), value);
    s->requires_grad = requires_grad;
    if (requires_grad) s->grad.assign(s->data.size(), T(0));
    return TensorT(std::move(s));
  }

  static TensorT from_data(std::vector<int> shape, std::vector<T> values,
                           bool requires_grad = false) {
    auto s = std::make_shared<StorageT<T>>();
    s->shape = std::move(shape);
    if (values.size() != checked_size(s->shape))
      throw DimensionError("tensor: data length does not match shape");
    s->data = std::move(values);
    s->requires_grad = requires_grad;
    if (requires_grad) s->grad.assign(s->data.size(), T(0));
    return TensorT(std::move(s));
  }

  static TensorT scalar(T value) { return filled({1}, value); }

  static TensorT randn(std::vector<int> shape, Rng& rng, T stddev,
                       bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.storage()->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return s_ != nullptr; }
  const std::vector<int>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int rows() const { return s_->shape[0]; }
  int cols() const {
    if (rank() != 2) throw DimensionError("tensor: cols() requires rank 2");
    return s_->shape[1];
  }
  std::int64_t size() const { return static_cast<std::int64_t>(s_->data.size()); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  std::span<T> grad() {
    ensure_grad();
    return s_->grad;
  }
  std::span<const T> grad() const { return s_->grad; }
  bool requires_grad() const { return s_ && s_->requires_grad; }

  void zero_grad() {
    if (s_ && s_->requires_grad) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw DimensionError("tensor: item() requires a scalar");
    return s_->data[0];
  }

  T at(int i, int j) const {
    return s_->data[static_cast<std::size_t>(i) * cols() + j];
  }

  const std::shared_ptr<StorageT<T>>& storage() const { return s_; }

  void ensure_grad() {
    if (!s_->requires_grad) throw Error("tensor: grad on non-gradient tensor");
    if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
  }

 private:
  explicit TensorT(std::shared_ptr<StorageT<T>> s) : s_(std::move(s)) {}

  static std::size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 2)
      throw DimensionError("tensor: rank must be 1 or 2");
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw DimensionError("tensor: extents must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::shared_ptr<StorageT<T>> s_;
};

// Records the backward closure of every differentiable op executed while it
// is the innermost active tape on this thread. Construction order is the
// topological order, so backward() just replays the list in reverse.
template <typename T>
class TapeT {
 public:
  TapeT() { stack().push_back(this); }
  ~TapeT() { stack().pop_back(); }
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* active() { return stack().empty() ? nullptr : stack().back(); }

  void record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return records_.size(); }

  void backward(TensorT<T> loss) {
    if (done_) throw Error("tape: backward already ran");
    if (loss.size() != 1) throw DimensionError("tape: loss must be scalar");
    if (!loss.requires_grad())
      throw Error("tape: loss does not depend on any gradient tensor");
    done_ = true;
    loss.grad()[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

 private:
  static std::vector<TapeT*>& stack() {
    thread_local std::vector<TapeT*> s;
    return s;
  }

  std::vector<std::function<void()>> records_;
  bool done_ = false;
};

namespace detail {

template <typename T>
bool track(std::initializer_list<const TensorT<T>*> inputs) {
  if (TapeT<T>::active() == nullptr) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
TensorT<T> make_output(std::vector<int> shape, bool tracked) {
  return TensorT<T>::zeros(std::move(shape), tracked);
}

template <typename T>
void ensure_grad(const std::shared_ptr<StorageT<T>>& s) {
  if (s->requires_grad && s->grad.size() != s->data.size())
    s->grad.assign(s->data.size(), T(0));
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- matrix products ----

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: inner extents do not match");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  const bool tracked = detail::track<T>({&a, &b});
  TensorT<T> out = detail::make_output<T>({m, n}, tracked);
  kernels::matmul_nn(a.data().data(), b.data().data(), out.data().data(), m, k,
                     n, false);
  if (tracked) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    detail::ensure_grad(b.storage());
    TapeT<T>::active()->record([as, bs, os, m, k, n] {
      if (as->requires_grad)
        kernels::matmul_nt(os->grad.data(), bs->data.data(), as->grad.data(), m,
                           n, k, true);
      if (bs->requires_grad)
        kernels::matmul_tn(as->data.data(), os->grad.data(), bs->grad.data(), k,
                           m, n, true);
    });
  }
  return out;
}

// a * b^T without materializing the transpose; b is [n x k].
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner extents do not match");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  const bool tracked = detail::track<T>({&a, &b});
  TensorT<T> out = detail::make_output<T>({m, n}, tracked);
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data().data(), m, k,
                     n, false);
  if (tracked) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    detail::ensure_grad(b.storage());
    TapeT<T>::active()->record([as, bs, os, m, k, n] {
      // dA = dC * B ; dB = dC^T * A
      if (as->requires_grad)
        kernels::matmul_nn(os->grad.data(), bs->data.data(), as->grad.data(), m,
                           n, k, true);
      if (bs->requires_grad)
        kernels::matmul_tn(os->grad.data(), as->data.data(), bs->grad.data(), n,
                           m, k, true);
    });
  }
  return out;
}

// ---- elementwise ----

namespace detail {
template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                      const char* what) {
  if (a.shape() != b.shape()) throw DimensionError(std::string(what) + ": shape mismatch");
}
}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  const bool tracked = detail::track<T>({&a, &b});
  TensorT<T> out = detail::make_output<T>(a.shape(), tracked);
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  if (tracked) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    detail::ensure_grad(b.storage());
    TapeT<T>::active()->record([as, bs, os] {
      if (as->requires_grad) detail::add_into(as->grad, os->grad);
      if (bs->requires_grad) detail::add_into(bs->grad, os->grad);
    });
  }
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  const bool tracked = detail::track<T>({&a, &b});
  TensorT<T> out = detail::make_output<T>(a.shape(), tracked);
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  if (tracked) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    detail::ensure_grad(b.storage());
    TapeT<T>::active()->record([as, bs, os] {
      if (as->requires_grad) detail::add_into(as->grad, os->grad);
      if (bs->requires_grad)
        for (std::size_t i = 0; i < bs->grad.size(); ++i)
          bs->grad[i] -= os->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  const bool tracked = detail::track<T>({&a, &b});
  TensorT<T> out = detail::make_output<T>(a.shape(), tracked);
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (tracked) {
    auto as = a.storage();
    auto bs = b.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    detail::ensure_grad(b.storage());
    TapeT<T>::active()->record([as, bs, os] {
      if (as->requires_grad)
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += os->grad[i] * bs->data[i];
      if (bs->requires_grad)
        for (std::size_t i = 0; i < bs->grad.size(); ++i)
          bs->grad[i] += os->grad[i] * as->data[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  const bool tracked = detail::track<T>({&a});
  TensorT<T> out = detail::make_output<T>(a.shape(), tracked);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (tracked) {
    auto as = a.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    TapeT<T>::active()->record([as, os, c] {
      for (std::size_t i = 0; i < as->grad.size(); ++i)
        as->grad[i] += os->grad[i] * c;
    });
  }
  return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
  const bool tracked = detail::track<T>({&a});
  TensorT<T> out = detail::make_output<T>(a.shape(), tracked);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
  if (tracked) {
    auto as = a.storage();
    auto os = out.storage();
    detail::ensure_grad(a.storage());
    TapeT<T>::active()->record(
        [as, os] { detail::add_into(as->grad, os->grad); });
  }
  return out;
}

// x[N x F] + row-broadcast bias[F]
template <typename T>
TensorT<T> add_row_broadcast(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.rows() != x.cols())
    throw DimensionError("add_row_broadcast: bias width mismatch");
  const int n = x.rows(), f = x.cols();
  const bool tracked = detail::track<T>({&x, &b});
  TensorT<T> out = detail::make_output<T>({n, f}, tracked);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j)
      out.data()[static_cast<std::size_t>(i) * f + j] =
          x.data()[static_cast<std::size_t>(i) * f + j] + b.data()[j];
  if (tracked) {
    auto xs = x.storage();
    auto bs = b.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    detail::ensure_grad(b.storage());
    TapeT<T>::active()->record([xs, bs, os, n, f] {
      if (xs->requires_grad) detail::add_into(xs->grad, os->grad);
      if (bs->requires_grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < f; ++j)
            bs->grad[j] += os->grad[static_cast<std::size_t>(i) * f + j];
    });
  }
  return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  return add_row_broadcast(matmul(x, w), b);
}

// ---- nonlinearities and normalization ----

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  static const T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  static const T kA = static_cast<T>(0.044715);
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>(x.shape(), tracked);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    const T u = kC * (v + kA * v * v * v);
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(u));
  }
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os] {
      for (std::size_t i = 0; i < xs->grad.size(); ++i) {
        const T v = xs->data[i];
        const T u = kC * (v + kA * v * v * v);
        const T th = std::tanh(u);
        const T sech2 = T(1) - th * th;
        const T du = kC * (T(1) + T(3) * kA * v * v);
        const T dydx = T(0.5) * (T(1) + th) + T(0.5) * v * sech2 * du;
        xs->grad[i] += os->grad[i] * dydx;
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps = static_cast<T>(1e-5)) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 ||
      gain.rows() != x.cols() || bias.rows() != x.cols())
    throw DimensionError("layer_norm: parameter width mismatch");
  const int n = x.rows(), f = x.cols();
  const bool tracked = detail::track<T>({&x, &gain, &bias});
  TensorT<T> out = detail::make_output<T>({n, f}, tracked);
  std::vector<T> inv_sigma(static_cast<std::size_t>(n));
  std::vector<T> xhat(static_cast<std::size_t>(n) * f);
  for (int i = 0; i < n; ++i) {
    const T* row = x.data().data() + static_cast<std::size_t>(i) * f;
    T mu = T(0);
    for (int j = 0; j < f; ++j) mu += row[j];
    mu /= static_cast<T>(f);
    T var = T(0);
    for (int j = 0; j < f; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(f);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < f; ++j) {
      const T xh = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(i) * f + j] = xh;
      out.data()[static_cast<std::size_t>(i) * f + j] =
          gain.data()[j] * xh + bias.data()[j];
    }
  }
  if (tracked) {
    auto xs = x.storage();
    auto gs = gain.storage();
    auto bs = bias.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    detail::ensure_grad(gain.storage());
    detail::ensure_grad(bias.storage());
    TapeT<T>::active()->record(
        [xs, gs, bs, os, n, f, inv_sigma = std::move(inv_sigma),
         xhat = std::move(xhat)] {
          for (int i = 0; i < n; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * f;
            const T* dy = os->grad.data() + off;
            const T* xh = xhat.data() + off;
            if (gs->requires_grad || bs->requires_grad) {
              for (int j = 0; j < f; ++j) {
                if (gs->requires_grad) gs->grad[j] += dy[j] * xh[j];
                if (bs->requires_grad) bs->grad[j] += dy[j];
              }
            }
            if (xs->requires_grad) {
              T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
              for (int j = 0; j < f; ++j) {
                const T dxh = dy[j] * gs->data[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh[j];
              }
              mean_dxhat /= static_cast<T>(f);
              mean_dxhat_xhat /= static_cast<T>(f);
              for (int j = 0; j < f; ++j) {
                const T dxh = dy[j] * gs->data[j];
                xs->grad[off + j] +=
                    inv_sigma[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
              }
            }
          }
        });
  }
  return out;
}

// Inverted dropout; identity when train is false. The mask is drawn from the
// caller's generator so runs stay reproducible.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, T p, bool train, Rng* rng) {
  if (p < T(0) || p >= T(1)) throw ArgumentError("dropout: p must be in [0,1)");
  if (!train || p == T(0)) return x;
  if (rng == nullptr) throw ArgumentError("dropout: train mode needs an rng");
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>(x.shape(), tracked);
  std::vector<T> mask(static_cast<std::size_t>(x.size()));
  const T keep = T(1) - p;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    mask[i] = (static_cast<T>(rng->uniform()) < keep) ? T(1) / keep : T(0);
    out.data()[i] = x.data()[i] * mask[i];
  }
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, mask = std::move(mask)] {
      for (std::size_t i = 0; i < xs->grad.size(); ++i)
        xs->grad[i] += os->grad[i] * mask[i];
    });
  }
  return out;
}

// ---- gather / scatter, reshaping ----

// Row gather from table[K x E]; backward scatter-adds into the table.
template <typename T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& indices) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  const int k = table.rows(), e = table.cols();
  for (int idx : indices)
    if (idx < 0 || idx >= k) throw IndexError("embedding: index out of range");
  const int n = static_cast<int>(indices.size());
  if (n == 0) throw DimensionError("embedding: empty index list");
  const bool tracked = detail::track<T>({&table});
  TensorT<T> out = detail::make_output<T>({n, e}, tracked);
  for (int i = 0; i < n; ++i)
    std::copy_n(table.data().data() + static_cast<std::size_t>(indices[i]) * e,
                e, out.data().data() + static_cast<std::size_t>(i) * e);
  if (tracked) {
    auto ts = table.storage();
    auto os = out.storage();
    detail::ensure_grad(table.storage());
    TapeT<T>::active()->record([ts, os, indices, e] {
      for (std::size_t i = 0; i < indices.size(); ++i) {
        T* dst = ts->grad.data() + static_cast<std::size_t>(indices[i]) * e;
        const T* src = os->grad.data() + i * e;
        for (int j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const int n = parts[0].rows();
  int total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != n)
      throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  const bool tracked = TapeT<T>::active() != nullptr && any_grad;
  TensorT<T> out = detail::make_output<T>({n, total}, tracked);
  int off = 0;
  for (const auto& p : parts) {
    const int f = p.cols();
    for (int i = 0; i < n; ++i)
      std::copy_n(p.data().data() + static_cast<std::size_t>(i) * f, f,
                  out.data().data() + static_cast<std::size_t>(i) * total + off);
    off += f;
  }
  if (tracked) {
    std::vector<std::shared_ptr<StorageT<T>>> srcs;
    std::vector<int> widths;
    for (const auto& p : parts) {
      detail::ensure_grad(p.storage());
      srcs.push_back(p.storage());
      widths.push_back(p.cols());
    }
    auto os = out.storage();
    TapeT<T>::active()->record([srcs, widths, os, n, total] {
      int off = 0;
      for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
        const int f = widths[pi];
        if (srcs[pi]->requires_grad) {
          for (int i = 0; i < n; ++i) {
            const T* src =
                os->grad.data() + static_cast<std::size_t>(i) * total + off;
            T* dst = srcs[pi]->grad.data() + static_cast<std::size_t>(i) * f;
            for (int j = 0; j < f; ++j) dst[j] += src[j];
          }
        }
        off += f;
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat_cols(const TensorT<T>& a, const TensorT<T>& b) {
  return concat_cols(std::vector<TensorT<T>>{a, b});
}

template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const int f = parts[0].rank() == 2 ? parts[0].cols() : 0;
  if (f == 0) throw DimensionError("concat_rows: rank 2 required");
  int total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != f)
      throw DimensionError("concat_rows: column counts differ");
    total += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  const bool tracked = TapeT<T>::active() != nullptr && any_grad;
  TensorT<T> out = detail::make_output<T>({total, f}, tracked);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data().data(), p.size(), out.data().data() + off);
    off += static_cast<std::size_t>(p.size());
  }
  if (tracked) {
    std::vector<std::shared_ptr<StorageT<T>>> srcs;
    for (const auto& p : parts) {
      detail::ensure_grad(p.storage());
      srcs.push_back(p.storage());
    }
    auto os = out.storage();
    TapeT<T>::active()->record([srcs, os] {
      std::size_t off = 0;
      for (const auto& s : srcs) {
        if (s->requires_grad)
          for (std::size_t i = 0; i < s->data.size(); ++i)
            s->grad[i] += os->grad[off + i];
        off += s->data.size();
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
  return concat_rows(std::vector<TensorT<T>>{a, b});
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& x, int start, int len) {
  if (x.rank() != 2) throw DimensionError("slice_rows: rank 2 required");
  if (start < 0 || len < 1 || start + len > x.rows())
    throw DimensionError("slice_rows: range out of bounds");
  const int f = x.cols();
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>({len, f}, tracked);
  std::copy_n(x.data().data() + static_cast<std::size_t>(start) * f,
              static_cast<std::size_t>(len) * f, out.data().data());
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, start, len, f] {
      T* dst = xs->grad.data() + static_cast<std::size_t>(start) * f;
      for (std::size_t i = 0; i < static_cast<std::size_t>(len) * f; ++i)
        dst[i] += os->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& x, int start, int len) {
  if (x.rank() != 2) throw DimensionError("slice_cols: rank 2 required");
  if (start < 0 || len < 1 || start + len > x.cols())
    throw DimensionError("slice_cols: range out of bounds");
  const int n = x.rows(), f = x.cols();
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>({n, len}, tracked);
  for (int i = 0; i < n; ++i)
    std::copy_n(x.data().data() + static_cast<std::size_t>(i) * f + start, len,
                out.data().data() + static_cast<std::size_t>(i) * len);
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, n, f, start, len] {
      for (int i = 0; i < n; ++i) {
        T* dst = xs->grad.data() + static_cast<std::size_t>(i) * f + start;
        const T* src = os->grad.data() + static_cast<std::size_t>(i) * len;
        for (int j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Repeats each row `reps` times, keeping row blocks contiguous:
// rows (r1, r2) with reps=3 become (r1, r1, r1, r2, r2, r2).
template <typename T>
TensorT<T> tile_rows(const TensorT<T>& x, int reps) {
  if (x.rank() != 2) throw DimensionError("tile_rows: rank 2 required");
  if (reps < 1) throw ArgumentError("tile_rows: reps must be >= 1");
  const int n = x.rows(), f = x.cols();
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>({n * reps, f}, tracked);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < reps; ++r)
      std::copy_n(x.data().data() + static_cast<std::size_t>(i) * f, f,
                  out.data().data() +
                      (static_cast<std::size_t>(i) * reps + r) * f);
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, n, f, reps] {
      for (int i = 0; i < n; ++i)
        for (int r = 0; r < reps; ++r) {
          const T* src =
              os->grad.data() + (static_cast<std::size_t>(i) * reps + r) * f;
          T* dst = xs->grad.data() + static_cast<std::size_t>(i) * f;
          for (int j = 0; j < f; ++j) dst[j] += src[j];
        }
    });
  }
  return out;
}

// ---- pooling ----

// 1-d max pooling over time with kernel size == stride; gradient flows to the
// argmax position only, first occurrence on ties.
template <typename T>
TensorT<T> maxpool1d(const TensorT<T>& x, int kernel_and_stride) {
  if (x.rank() != 2) throw DimensionError("maxpool1d: rank 2 required");
  const int t = x.rows(), f = x.cols(), l = kernel_and_stride;
  if (l < 1 || t % l != 0)
    throw DimensionError("maxpool1d: rows not divisible by kernel");
  const int m = t / l;
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>({m, f}, tracked);
  std::vector<int> arg(static_cast<std::size_t>(m) * f);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < f; ++j) {
      int best = i * l;
      T bv = x.data()[static_cast<std::size_t>(best) * f + j];
      for (int r = 1; r < l; ++r) {
        const T v = x.data()[static_cast<std::size_t>(i * l + r) * f + j];
        if (v > bv) {
          bv = v;
          best = i * l + r;
        }
      }
      out.data()[static_cast<std::size_t>(i) * f + j] = bv;
      arg[static_cast<std::size_t>(i) * f + j] = best;
    }
  }
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, arg = std::move(arg), m, f] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < f; ++j)
          xs->grad[static_cast<std::size_t>(
                       arg[static_cast<std::size_t>(i) * f + j]) *
                       f +
                   j] += os->grad[static_cast<std::size_t>(i) * f + j];
    });
  }
  return out;
}

// ---- softmax family ----

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
  if (x.rank() != 2) throw DimensionError("softmax_rows: rank 2 required");
  const int n = x.rows(), f = x.cols();
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>({n, f}, tracked);
  for (int i = 0; i < n; ++i) {
    const T* row = x.data().data() + static_cast<std::size_t>(i) * f;
    T* orow = out.data().data() + static_cast<std::size_t>(i) * f;
    T mx = row[0];
    for (int j = 1; j < f; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < f; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += static_cast<double>(orow[j]);
    }
    const T inv = static_cast<T>(1.0 / z);
    for (int j = 0; j < f; ++j) orow[j] *= inv;
  }
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, n, f] {
      for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * f;
        T dot = T(0);
        for (int j = 0; j < f; ++j) dot += os->grad[off + j] * os->data[off + j];
        for (int j = 0; j < f; ++j)
          xs->grad[off + j] += os->data[off + j] * (os->grad[off + j] - dot);
      }
    });
  }
  return out;
}

// Mean negative log-likelihood of the target class per row, stabilized by
// max subtraction.
template <typename T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits,
                                 const std::vector<int>& targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: rank 2 required");
  const int n = logits.rows(), k = logits.cols();
  if (static_cast<int>(targets.size()) != n)
    throw DimensionError("cross_entropy: target count mismatch");
  for (int tgt : targets)
    if (tgt < 0 || tgt >= k) throw IndexError("cross_entropy: target out of range");
  const bool tracked = detail::track<T>({&logits});
  std::vector<T> probs(static_cast<std::size_t>(n) * k);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* row = logits.data().data() + static_cast<std::size_t>(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      probs[static_cast<std::size_t>(i) * k + j] = static_cast<T>(e);
      z += e;
    }
    const double logz = std::log(z);
    total += logz - static_cast<double>(row[targets[i]] - mx);
    const T inv = static_cast<T>(1.0 / z);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] *= inv;
  }
  TensorT<T> out = detail::make_output<T>({1}, tracked);
  out.data()[0] = static_cast<T>(total / n);
  if (tracked) {
    auto ls = logits.storage();
    auto os = out.storage();
    detail::ensure_grad(logits.storage());
    TapeT<T>::active()->record([ls, os, probs = std::move(probs), targets, n, k] {
      const T d = os->grad[0] / static_cast<T>(n);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
          T p = probs[off + j];
          if (j == targets[i]) p -= T(1);
          ls->grad[off + j] += d * p;
        }
      }
    });
  }
  return out;
}

// ---- losses and reductions ----

// Mean squared error over rows whose mask entry is nonzero (all rows when the
// mask is empty). col_weights, when given, re-weights the channels; the
// divisor is kept-rows * sum(weights), which reduces to the uniform mean for
// all-ones weights.
template <typename T>
TensorT<T> mse_masked(const TensorT<T>& pred, const TensorT<T>& target,
                      const std::vector<T>& row_mask = {},
                      const std::vector<T>& col_weights = {}) {
  detail::check_same_shape(pred, target, "mse");
  if (pred.rank() != 2) throw DimensionError("mse: rank 2 required");
  const int n = pred.rows(), f = pred.cols();
  if (!row_mask.empty() && static_cast<int>(row_mask.size()) != n)
    throw DimensionError("mse: mask length mismatch");
  if (!col_weights.empty() && static_cast<int>(col_weights.size()) != f)
    throw DimensionError("mse: weight length mismatch");
  std::int64_t kept = 0;
  for (int i = 0; i < n; ++i)
    if (row_mask.empty() || row_mask[i] > T(0.5)) ++kept;
  if (kept == 0) throw DataError("mse: all rows masked");
  double weight_total = static_cast<double>(f);
  if (!col_weights.empty()) {
    weight_total = 0.0;
    for (T w : col_weights) {
      if (w < T(0)) throw ArgumentError("mse: weights must be >= 0");
      weight_total += static_cast<double>(w);
    }
    if (weight_total <= 0.0) throw ArgumentError("mse: zero weight mass");
  }
  const double denom = static_cast<double>(kept) * weight_total;
  const bool tracked = detail::track<T>({&pred, &target});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!row_mask.empty() && row_mask[i] <= T(0.5)) continue;
    const std::size_t off = static_cast<std::size_t>(i) * f;
    for (int j = 0; j < f; ++j) {
      const double dnm = static_cast<double>(pred.data()[off + j]) -
                         static_cast<double>(target.data()[off + j]);
      const double w =
          col_weights.empty() ? 1.0 : static_cast<double>(col_weights[j]);
      total += w * dnm * dnm;
    }
  }
  TensorT<T> out = detail::make_output<T>({1}, tracked);
  out.data()[0] = static_cast<T>(total / denom);
  if (tracked) {
    auto ps = pred.storage();
    auto ts = target.storage();
    auto os = out.storage();
    std::vector<T> mask(row_mask.begin(), row_mask.end());
    std::vector<T> weights(col_weights.begin(), col_weights.end());
    detail::ensure_grad(pred.storage());
    detail::ensure_grad(target.storage());
    TapeT<T>::active()->record([ps, ts, os, mask = std::move(mask),
                                weights = std::move(weights), n, f, denom] {
      const T d = os->grad[0];
      for (int i = 0; i < n; ++i) {
        if (!mask.empty() && mask[i] <= T(0.5)) continue;
        const std::size_t off = static_cast<std::size_t>(i) * f;
        for (int j = 0; j < f; ++j) {
          const T w = weights.empty() ? T(1) : weights[j];
          const T g = static_cast<T>(2.0 / denom) * w *
                      (ps->data[off + j] - ts->data[off + j]) * d;
          if (ps->requires_grad) ps->grad[off + j] += g;
          if (ts->requires_grad) ts->grad[off + j] -= g;
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  const bool tracked = detail::track<T>({&x});
  double total = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i)
    total += static_cast<double>(x.data()[i]);
  TensorT<T> out = detail::make_output<T>({1}, tracked);
  out.data()[0] = static_cast<T>(total);
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os] {
      for (auto& g : xs->grad) g += os->grad[0];
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& x) {
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>(x.shape(), tracked);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    if (x.data()[i] <= T(0)) throw NumericError("log: non-positive input");
    out.data()[i] = std::log(x.data()[i]);
  }
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os] {
      for (std::size_t i = 0; i < xs->grad.size(); ++i)
        xs->grad[i] += os->grad[i] / xs->data[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> exp_op(const TensorT<T>& x) {
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>(x.shape(), tracked);
  for (std::int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::exp(x.data()[i]);
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os] {
      for (std::size_t i = 0; i < xs->grad.size(); ++i)
        xs->grad[i] += os->grad[i] * os->data[i];
    });
  }
  return out;
}

// Clamp with pass-through gradient strictly inside the bounds.
template <typename T>
TensorT<T> clip(const TensorT<T>& x, T lo, T hi) {
  if (lo > hi) throw ArgumentError("clip: lo > hi");
  const bool tracked = detail::track<T>({&x});
  TensorT<T> out = detail::make_output<T>(x.shape(), tracked);
  for (std::int64_t i = 0; i < x.size(); ++i)
    out.data()[i] = std::min(hi, std::max(lo, x.data()[i]));
  if (tracked) {
    auto xs = x.storage();
    auto os = out.storage();
    detail::ensure_grad(x.storage());
    TapeT<T>::active()->record([xs, os, lo, hi] {
      for (std::size_t i = 0; i < xs->grad.size(); ++i)
        if (xs->data[i] > lo && xs->data[i] < hi) xs->grad[i] += os->grad[i];
    });
  }
  return out;
}

// Value copy with no gradient path.
template <typename T>
TensorT<T> detach(const TensorT<T>& x) {
  return TensorT<T>::from_data(x.shape(),
                               std::vector<T>(x.data().begin(), x.data().end()));
}

// ---- non-differentiable utilities ----

template <typename T>
std::vector<int> argmax_rows(const TensorT<T>& x) {
  if (x.rank() != 2) throw DimensionError("argmax_rows: rank 2 required");
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (int i = 0; i < x.rows(); ++i) {
    const T* row = x.data().data() + static_cast<std::size_t>(i) * x.cols();
    int best = 0;
    for (int j = 1; j < x.cols(); ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

template <typename T>
std::vector<int> argmin_rows(const TensorT<T>& x) {
  if (x.rank() != 2) throw DimensionError("argmin_rows: rank 2 required");
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (int i = 0; i < x.rows(); ++i) {
    const T* row = x.data().data() + static_cast<std::size_t>(i) * x.cols();
    int best = 0;
    for (int j = 1; j < x.cols(); ++j)
      if (row[j] < row[best]) best = j;
    out[i] = best;
  }
  return out;
}

// Draws an index from an unnormalized probability row.
template <typename T>
int multinomial(std::span<const T> probs, Rng& rng) {
  if (probs.empty()) throw ArgumentError("multinomial: empty distribution");
  double total = 0.0;
  for (T p : probs) {
    if (!(p >= T(0)) || !std::isfinite(static_cast<double>(p)))
      throw NumericError("multinomial: invalid probability");
    total += static_cast<double>(p);
  }
  if (total <= 0.0) throw NumericError("multinomial: zero mass");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += static_cast<double>(probs[i]);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

template <typename T>
bool all_finite(const TensorT<T>& x) {
  for (T v : x.data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// ---- gradient checking ----

// Compares tape gradients of f(params) against central finite differences at
// the given step, sampling up to coords_per_param coordinates per parameter.
// Returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Intended for the double instantiation; the step arithmetic follows the
// tensor scalar type.
template <typename T, typename F>
T grad_check(F&& f, std::vector<TensorT<T>> params, Rng& rng,
             int coords_per_param = 12, T step = static_cast<T>(1e-3)) {
  for (auto& p : params)
    if (!p.requires_grad())
      throw ArgumentError("grad_check: parameters must require gradients");
  std::vector<std::vector<T>> analytic;
  {
    for (auto& p : params) p.zero_grad();
    TapeT<T> tape;
    TensorT<T> loss = f(params);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
    for (auto& p : params)
      analytic.emplace_back(p.grad().begin(), p.grad().end());
  }
  auto eval = [&]() -> double {
    TensorT<T> loss = f(params);
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  T worst = T(0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::int64_t n = p.size();
    const int samples =
        std::min<std::int64_t>(n, static_cast<std::int64_t>(coords_per_param));
    for (int s = 0; s < samples; ++s) {
      const std::int64_t idx =
          (samples == n) ? s : rng.uniform_int(static_cast<int>(n));
      const T saved = p.data()[idx];
      p.data()[idx] = saved + step;
      const double up = eval();
      p.data()[idx] = saved - step;
      const double down = eval();
      p.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(analytic[pi][idx]);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, static_cast<T>(std::abs(a - numeric) / denom));
    }
  }
  return worst;
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace tap

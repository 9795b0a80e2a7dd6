#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "tap/vq.hpp"

using tap::Codebook;
using tap::Rng;
using tap::Tensor;
using DCodebook = tap::CodebookT<double>;
using DTensor = tap::TensorT<double>;

namespace {

Codebook diag_codebook() {
  Rng rng(1);
  Codebook cb(3, 2, rng);
  const std::vector<float> rows = {0, 0, 1, 1, 2, 2};
  std::copy(rows.begin(), rows.end(), cb.vectors().data().begin());
  return cb;
}

}  // namespace

TEST_CASE("nearest neighbour selection and exact forward values") {
  Codebook cb = diag_codebook();
  Tensor x = Tensor::from_data({1, 2}, {0.9f, 1.2f});
  auto q = cb.quantize(x);
  CHECK(q.indices[0] == 1);
  CHECK(q.quantized.data()[0] == 1.0f);
  CHECK(q.quantized.data()[1] == 1.0f);

  // Input exactly on a code: both auxiliary losses vanish.
  Tensor exact = Tensor::from_data({1, 2}, {2.0f, 2.0f});
  auto q2 = cb.quantize(exact);
  CHECK(q2.indices[0] == 2);
  CHECK(q2.codebook_loss.item() == 0.0f);
  CHECK(q2.commitment_loss.item() == 0.0f);

  // Equidistant between codes 0 and 1: tie breaks to the lowest index.
  Tensor tie = Tensor::from_data({1, 2}, {0.5f, 0.5f});
  CHECK(cb.quantize(tie).indices[0] == 0);

  Tensor bad = Tensor::from_data({1, 2}, {std::nanf(""), 0.0f});
  CHECK_THROWS_AS(cb.quantize(bad), tap::NumericError);
  Tensor wide = Tensor::from_data({1, 3}, {0, 0, 0});
  CHECK_THROWS_AS(cb.quantize(wide), tap::DimensionError);
}

TEST_CASE("loss hand case: squared distances") {
  Rng rng(2);
  Codebook cb(2, 2, rng);
  const std::vector<float> rows = {3, 4, 10, 10};
  std::copy(rows.begin(), rows.end(), cb.vectors().data().begin());
  Tensor x = Tensor::from_data({1, 2}, {0.0f, 0.0f});
  auto q = cb.quantize(x);
  CHECK(q.indices[0] == 0);
  CHECK(q.codebook_loss.item() == doctest::Approx(25.0f));
  CHECK(q.commitment_loss.item() == doctest::Approx(25.0f));
  CHECK(tap::vq_losses(q, 0.25f).item() == doctest::Approx(25.0f + 0.25f * 25.0f));
  CHECK_THROWS_AS(tap::vq_losses(q, -1.0f), tap::ArgumentError);
}

TEST_CASE("codebook loss reaches codes, commitment reaches inputs") {
  Rng rng(3);
  DCodebook cb(4, 3, rng);
  DTensor x = DTensor::randn({5, 3}, rng, 1.0, true);

  tap::TapeT<double> tape;
  auto q = cb.quantize(x);
  auto loss = tap::vq_losses(q, 0.25);
  tape.backward(loss);

  double code_grad_norm = 0.0, x_grad_norm = 0.0;
  for (double g : cb.vectors().grad()) code_grad_norm += g * g;
  for (double g : x.grad()) x_grad_norm += g * g;
  CHECK(code_grad_norm > 0.0);
  CHECK(x_grad_norm > 0.0);
}

// Finite differences cannot see through a stop-gradient, so each loss term is
// checked against the parameters it actually trains: the codebook loss against
// the code vectors and the commitment loss against the encoder outputs. Inputs
// sit close to their codes so the assignment is stable under the step.
TEST_CASE("gradient of the vq losses matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    DCodebook cb(4, 3, rng);
    DTensor x = DTensor::zeros({4, 3}, true);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j)
        x.data()[static_cast<std::size_t>(i) * 3 + j] =
            cb.vectors().at(i, j) + 0.05 * rng.normal();

    Rng cr1(seed * 31 + 1);
    const double code_err = tap::grad_check<double>(
        [&](std::vector<DTensor>& ps) {
          (void)ps;
          return cb.quantize(x).codebook_loss;
        },
        {cb.vectors()}, cr1, 6);
    CAPTURE(seed);
    CHECK(code_err < 1e-3);

    Rng cr2(seed * 31 + 2);
    const double commit_err = tap::grad_check<double>(
        [&](std::vector<DTensor>& ps) { return cb.quantize(ps[0]).commitment_loss; },
        {x}, cr2, 6);
    CHECK(commit_err < 1e-3);
  }
}

TEST_CASE("straight-through: gradient to the inputs equals the identity path") {
  Rng rng(5);
  Codebook cb(8, 4, rng);
  Rng data_rng(6);
  Tensor x = Tensor::randn({6, 4}, data_rng, 1.0f, true);
  Tensor w = Tensor::randn({6, 4}, data_rng, 1.0f);

  {
    tap::Tape tape;
    auto q = cb.quantize(x);
    tape.backward(tap::sum(tap::mul(q.quantized, w)));
  }
  std::vector<float> st_grad(x.grad().begin(), x.grad().end());

  // Replacing the quantizer output by x + constant yields the same gradient.
  Tensor x2 = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
  {
    tap::Tape tape;
    auto q = cb.quantize(x2);
    Tensor shifted = tap::add(x2, tap::detach(tap::sub(q.quantized, x2)));
    tape.backward(tap::sum(tap::mul(shifted, w)));
  }
  std::vector<float> surrogate_grad(x2.grad().begin(), x2.grad().end());
  CHECK(st_grad == surrogate_grad);

  // No straight-through gradient reaches the codebook.
  Tensor x3 = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
  {
    tap::Tape tape;
    auto q = cb.quantize(x3);
    tape.backward(tap::sum(tap::mul(q.quantized, w)));
    bool any = false;
    for (float g : cb.vectors().grad()) any |= g != 0.0f;
    CHECK_FALSE(any);
  }
}

TEST_CASE("quantizer matches brute-force double argmin") {
  Rng rng(7);
  const int k = 257, e = 6;
  Codebook cb(k, e, rng);
  Rng data_rng(8);
  Tensor x = Tensor::randn({200, e}, data_rng, 1.2f);
  auto q = cb.quantize(x);
  for (int i = 0; i < 200; ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < k; ++c) {
      double d = 0;
      for (int j = 0; j < e; ++j) {
        const double diff = static_cast<double>(x.at(i, j)) -
                            static_cast<double>(cb.vectors().at(c, j));
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    CHECK(q.indices[static_cast<std::size_t>(i)] == best);
  }
}

TEST_CASE("usage counting and dead-code resets") {
  Rng rng(9);
  Codebook cb(4, 2, rng);
  const std::vector<float> rows = {0, 0, 1, 1, 2, 2, 50, 50};
  std::copy(rows.begin(), rows.end(), cb.vectors().data().begin());

  Tensor x = Tensor::from_data({3, 2}, {0.1f, 0.0f, 1.1f, 0.9f, 1.9f, 2.0f});
  cb.quantize(x);
  CHECK(cb.used_count() == 3);  // code 3 is far away and unused

  // Empty pool: no-op.
  Rng reset_rng(10);
  CHECK(cb.reset_dead_codes({}, 0, reset_rng) == 0);

  cb.quantize(x);
  std::vector<float> pool = {0.4f, 0.45f};  // one donor row
  const int resets = cb.reset_dead_codes(pool, 1, reset_rng);
  CHECK(resets == 1);
  CHECK(cb.vectors().at(3, 0) == 0.4f);
  CHECK(cb.vectors().at(3, 1) == 0.45f);
  CHECK(cb.used_count() == 0);  // counters zeroed

  // Quantizing the donor output now selects the reset code (or something
  // strictly nearer, which this layout rules out).
  Tensor donor = Tensor::from_data({1, 2}, {0.4f, 0.45f});
  CHECK(cb.quantize(donor).indices[0] == 3);

  // All codes used: zero resets.
  Tensor all = Tensor::from_data({4, 2}, {0, 0, 1, 1, 2, 2, 0.4f, 0.45f});
  cb.quantize(all);
  CHECK(cb.used_count() == 4);
  CHECK(cb.reset_dead_codes(pool, 1, reset_rng) == 0);
}

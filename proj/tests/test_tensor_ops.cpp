#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "affseg/ops.hpp"
#include "affseg/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace affseg;
using test::max_gradient_error;
using test::random_tensor;
using test::random_tensor_away_from_zero;

namespace {

// Direct nested-loop convolution, independent of the ops implementation.
std::vector<double> conv_oracle(const std::vector<double>& in, int c_in, int h, int w,
                                const std::vector<double>& wt, int c_out, int k,
                                const std::vector<double>& bias, int stride, int pad, int oh,
                                int ow) {
  std::vector<double> out(static_cast<size_t>(c_out) * oh * ow, 0.0);
  for (int co = 0; co < c_out; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias[static_cast<size_t>(co)];
        for (int ci = 0; ci < c_in; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += wt[((static_cast<size_t>(co) * c_in + ci) * k + ky) * k + kx] *
                     in[(static_cast<size_t>(ci) * h + iy) * w + ix];
            }
          }
        }
        out[(static_cast<size_t>(co) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the direct-loop oracle on the all-ones example") {
  TensorPtr input = Tensor::full({1, 3, 3}, 1.0);
  TensorPtr weight = Tensor::full({1, 1, 3, 3}, 1.0);
  TensorPtr bias = Tensor::zeros({1});
  TensorPtr out = ops::conv2d(input, weight, bias, 1, 1);

  std::vector<double> expected = conv_oracle(input->data(), 1, 3, 3, weight->data(), 1, 3,
                                             bias->data(), 1, 1, 3, 3);
  REQUIRE(out->shape() == std::vector<int>{1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(out->data()[i] == doctest::Approx(expected[i]));
  // centre 9, edge midpoints 6, corners 4
  CHECK(out->data()[4] == doctest::Approx(9.0));
  CHECK(out->data()[1] == doctest::Approx(6.0));
  CHECK(out->data()[0] == doctest::Approx(4.0));
}

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
  std::mt19937_64 rng(7);
  TensorPtr input = random_tensor({2, 4, 5}, rng);
  TensorPtr weight = Tensor::zeros({2, 2, 1, 1});
  weight->data()[0] = 1.0;  // out0 <- in0
  weight->data()[3] = 1.0;  // out1 <- in1
  TensorPtr bias = Tensor::zeros({2});
  TensorPtr out = ops::conv2d(input, weight, bias);
  for (long i = 0; i < input->numel(); ++i) CHECK(out->data()[i] == input->data()[i]);
}

TEST_CASE("conv2d output shape follows the floor formula") {
  TensorPtr input = Tensor::zeros({1, 4, 4});
  TensorPtr weight = Tensor::zeros({1, 1, 3, 3});
  TensorPtr bias = Tensor::zeros({1});
  TensorPtr out = ops::conv2d(input, weight, bias, 1, 0);
  CHECK(out->shape() == std::vector<int>{1, 2, 2});

  std::mt19937_64 rng(3);
  for (int k = 1; k <= 4; ++k) {
    for (int stride = 1; stride <= 3; ++stride) {
      for (int pad = 0; pad <= 2; ++pad) {
        const int h = 7, w = 9;
        if (k > h + 2 * pad || k > w + 2 * pad) continue;
        TensorPtr in = random_tensor({2, h, w}, rng, -1, 1, false);
        TensorPtr wt = random_tensor({3, 2, k, k}, rng, -1, 1, false);
        TensorPtr b = random_tensor({3}, rng, -1, 1, false);
        TensorPtr o = ops::conv2d(in, wt, b, stride, pad);
        CHECK(o->dim(1) == (h + 2 * pad - k) / stride + 1);
        CHECK(o->dim(2) == (w + 2 * pad - k) / stride + 1);
        // values against the oracle
        std::vector<double> expected = conv_oracle(in->data(), 2, h, w, wt->data(), 3, k,
                                                   b->data(), stride, pad, o->dim(1), o->dim(2));
        for (size_t i = 0; i < expected.size(); ++i) {
          CHECK(o->data()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("conv2d rejects inconsistent shapes with a descriptive message") {
  TensorPtr input = Tensor::zeros({2, 4, 4});
  TensorPtr weight = Tensor::zeros({1, 3, 3, 3});  // expects 3 input channels
  TensorPtr bias = Tensor::zeros({1});
  CHECK_THROWS_WITH_AS(ops::conv2d(input, weight, bias),
                       doctest::Contains("input channels"), std::invalid_argument);

  TensorPtr big_kernel = Tensor::zeros({1, 2, 9, 9});
  CHECK_THROWS_WITH_AS(ops::conv2d(input, big_kernel, bias),
                       doctest::Contains("exceeds padded input"), std::invalid_argument);

  TensorPtr bad_bias = Tensor::zeros({4});
  TensorPtr ok_kernel = Tensor::zeros({1, 2, 3, 3});
  CHECK_THROWS_WITH_AS(ops::conv2d(input, ok_kernel, bad_bias), doctest::Contains("bias"),
                       std::invalid_argument);
}

TEST_CASE("maxpool2x2 basics") {
  TensorPtr in = Tensor::from_values({1, 2, 2}, {1, 2, 3, 4});
  auto [out, argmax] = ops::maxpool2x2(in);
  CHECK(out->shape() == std::vector<int>{1, 1, 1});
  CHECK(out->data()[0] == 4.0);
  CHECK(argmax[0] == 3);

  TensorPtr c = Tensor::full({3, 4, 4}, 2.5);
  CHECK(ops::maxpool2x2(c).output->data()[0] == 2.5);

  TensorPtr odd = Tensor::zeros({1, 3, 4});
  CHECK_THROWS_AS(ops::maxpool2x2(odd), std::invalid_argument);
}

TEST_CASE("maxpool2x2 routes gradient to the argmax only") {
  std::mt19937_64 rng(11);
  TensorPtr in = random_tensor({2, 4, 4}, rng);
  test::separate_pool_windows(in);
  auto result = ops::maxpool2x2(in);
  TensorPtr loss = ops::sum(result.output);
  backward(loss);
  for (long i = 0; i < in->numel(); ++i) {
    const bool is_argmax =
        std::find(result.argmax.begin(), result.argmax.end(), static_cast<int>(i)) !=
        result.argmax.end();
    CHECK(in->grad()[static_cast<size_t>(i)] == (is_argmax ? 1.0 : 0.0));
  }

  // the same statement via finite differences
  TensorPtr in2 = random_tensor({1, 4, 4}, rng);
  test::separate_pool_windows(in2);
  CHECK(max_gradient_error({in2}, [&] { return ops::sum(ops::maxpool2x2(in2).output); }) < 1e-4);
}

TEST_CASE("upsample_nearest2x replicates blocks and is undone by maxpool") {
  TensorPtr in = Tensor::from_values({1, 1, 1}, {5.0});
  TensorPtr up = ops::upsample_nearest2x(in);
  CHECK(up->shape() == std::vector<int>{1, 2, 2});
  for (double v : up->data()) CHECK(v == 5.0);

  std::mt19937_64 rng(13);
  TensorPtr x = random_tensor({2, 3, 4}, rng, -1, 1, false);
  TensorPtr recovered = ops::maxpool2x2(ops::upsample_nearest2x(x)).output;
  for (long i = 0; i < x->numel(); ++i) CHECK(recovered->data()[i] == x->data()[i]);

  TensorPtr g = random_tensor({2, 3, 3}, rng);
  CHECK(max_gradient_error({g}, [&] {
          return ops::sum(ops::mul(ops::upsample_nearest2x(g), ops::upsample_nearest2x(g)));
        }) < 1e-4);
}

TEST_CASE("activations: values and gradients") {
  TensorPtr in = Tensor::from_values({3}, {-1.0, 0.0, 2.0});
  TensorPtr r = ops::relu(in);
  CHECK(r->data() == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(ops::sigmoid(Tensor::scalar(0.0))->data()[0] == doctest::Approx(0.5));
  CHECK(ops::tanh(Tensor::scalar(0.0))->data()[0] == doctest::Approx(0.0));

  std::mt19937_64 rng(17);
  for (auto kind : {ops::Activation::kRelu, ops::Activation::kSigmoid, ops::Activation::kTanh}) {
    TensorPtr x = kind == ops::Activation::kRelu
                      ? random_tensor_away_from_zero({2, 2, 2}, rng)
                      : random_tensor({2, 2, 2}, rng);
    const double err = max_gradient_error({x}, [&] {
      TensorPtr y = ops::activation(x, kind);
      return ops::sum(ops::mul(y, y));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("softmax_spatial: uniformity, known values, limits, invariance") {
  TensorPtr zeros = Tensor::zeros({1, 2, 2});
  TensorPtr u = ops::softmax_spatial(zeros);
  for (double v : u->data()) CHECK(v == doctest::Approx(0.25));

  TensorPtr in = Tensor::from_values({1, 2, 2}, {std::log(2.0), 0.0, 0.0, 0.0});
  TensorPtr s = ops::softmax_spatial(in);
  CHECK(s->data()[0] == doctest::Approx(0.4));
  CHECK(s->data()[1] == doctest::Approx(0.2));

  TensorPtr peak = Tensor::from_values({1, 2, 2}, {50.0, 0.0, 0.0, 0.0});
  CHECK(ops::softmax_spatial(peak)->data()[0] > 0.999);

  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    TensorPtr x = random_tensor({1, 3, 4}, rng, -5, 5, false);
    TensorPtr y = ops::softmax_spatial(x);
    double total = 0.0;
    for (double v : y->data()) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

    TensorPtr shifted = Tensor::zeros({1, 3, 4});
    for (long i = 0; i < x->numel(); ++i) shifted->data()[i] = x->data()[i] + 3.21;
    TensorPtr y2 = ops::softmax_spatial(shifted);
    for (long i = 0; i < y->numel(); ++i) {
      CHECK(std::abs(y->data()[i] - y2->data()[i]) < 1e-9);
    }
  }

  TensorPtr g = random_tensor({1, 2, 3}, rng);
  CHECK(max_gradient_error({g}, [&] {
          TensorPtr y = ops::softmax_spatial(g);
          return ops::sum(ops::mul(y, y));
        }) < 1e-4);

  TensorPtr two_channel = Tensor::zeros({2, 2, 2});
  CHECK_THROWS_AS(ops::softmax_spatial(two_channel), std::invalid_argument);
}

TEST_CASE("concat_channels layout and gradient split") {
  TensorPtr a = Tensor::from_values({1, 1, 1}, {3.0});
  TensorPtr b = Tensor::from_values({1, 1, 1}, {4.0});
  TensorPtr c = ops::concat_channels(a, b);
  CHECK(c->shape() == std::vector<int>{2, 1, 1});
  CHECK(c->data() == std::vector<double>{3.0, 4.0});

  std::mt19937_64 rng(23);
  TensorPtr x = random_tensor({2, 3, 3}, rng, -1, 1, false);
  TensorPtr y = random_tensor({3, 3, 3}, rng, -1, 1, false);
  TensorPtr cat = ops::concat_channels(x, y);
  for (long i = 0; i < x->numel(); ++i) CHECK(cat->data()[i] == x->data()[i]);

  TensorPtr gx = random_tensor({1, 2, 2}, rng);
  TensorPtr gy = random_tensor({2, 2, 2}, rng);
  CHECK(max_gradient_error({gx, gy}, [&] {
          TensorPtr m = ops::concat_channels(gx, gy);
          return ops::sum(ops::mul(m, m));
        }) < 1e-4);

  TensorPtr mismatched = Tensor::zeros({1, 4, 3});
  CHECK_THROWS_WITH_AS(ops::concat_channels(x, mismatched), doctest::Contains("height mismatch"),
                       std::invalid_argument);
}

TEST_CASE("mul_broadcast_mask: identity, zero, gradients") {
  std::mt19937_64 rng(29);
  TensorPtr x = random_tensor({3, 2, 2}, rng, -1, 1, false);
  TensorPtr ones = Tensor::full({1, 2, 2}, 1.0);
  TensorPtr same = ops::mul_broadcast_mask(ones, x);
  for (long i = 0; i < x->numel(); ++i) CHECK(same->data()[i] == x->data()[i]);

  TensorPtr zeros = Tensor::zeros({1, 2, 2});
  TensorPtr masked = ops::mul_broadcast_mask(zeros, x);
  for (double v : masked->data()) CHECK(v == 0.0);

  TensorPtr mask = random_tensor({1, 2, 2}, rng);
  TensorPtr xx = random_tensor({3, 2, 2}, rng);
  CHECK(max_gradient_error({mask, xx}, [&] {
          TensorPtr y = ops::mul_broadcast_mask(mask, xx);
          return ops::sum(ops::mul(y, y));
        }) < 1e-4);

  TensorPtr bad = Tensor::zeros({1, 3, 2});
  CHECK_THROWS_AS(ops::mul_broadcast_mask(bad, x), std::invalid_argument);
}

TEST_CASE("linear: identity, hand dot product, gradient") {
  TensorPtr x = Tensor::from_values({2}, {2.0, 3.0});
  TensorPtr eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  TensorPtr zero2 = Tensor::zeros({2});
  TensorPtr same = ops::linear(x, eye, zero2);
  CHECK(same->data() == x->data());

  TensorPtr w = Tensor::from_values({1, 2}, {1.0, 1.0});
  TensorPtr b = Tensor::from_values({1}, {1.0});
  CHECK(ops::linear(x, w, b)->data()[0] == doctest::Approx(6.0));

  std::mt19937_64 rng(31);
  TensorPtr gx = random_tensor({3}, rng);
  TensorPtr gw = random_tensor({2, 3}, rng);
  TensorPtr gb = random_tensor({2}, rng);
  CHECK(max_gradient_error({gx, gw, gb}, [&] {
          TensorPtr y = ops::linear(gx, gw, gb);
          return ops::sum(ops::mul(y, y));
        }) < 1e-4);

  CHECK_THROWS_AS(ops::linear(gx, eye, zero2), std::invalid_argument);
}

TEST_CASE("pixelwise_cross_entropy: uniform value, limit, oracle, errors") {
  TensorPtr uniform = Tensor::zeros({10, 2, 2});
  LabelMap target(2, 2, 3);
  CHECK(ops::pixelwise_cross_entropy(uniform, target)->value() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-9));

  TensorPtr confident = Tensor::zeros({10, 2, 2});
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      confident->data()[(3 * 2 + y) * 2 + x] = 50.0;
    }
  }
  CHECK(ops::pixelwise_cross_entropy(confident, target)->value() < 1e-6);

  // scalar-loop oracle on random logits
  std::mt19937_64 rng(37);
  TensorPtr logits = random_tensor({3, 2, 2}, rng, -2, 2, false);
  LabelMap labels(2, 2);
  std::uniform_int_distribution<int> cls(0, 2);
  for (auto& v : labels.values) v = cls(rng);
  double expected = 0.0;
  for (int p = 0; p < 4; ++p) {
    double denom = 0.0;
    for (int c = 0; c < 3; ++c) denom += std::exp(logits->data()[c * 4 + p]);
    expected += -std::log(std::exp(logits->data()[labels.values[static_cast<size_t>(p)] * 4 + p]) / denom);
  }
  expected /= 4.0;
  CHECK(ops::pixelwise_cross_entropy(logits, labels)->value() ==
        doctest::Approx(expected).epsilon(1e-10));

  LabelMap bad(2, 2, 12);
  CHECK_THROWS_WITH_AS(ops::pixelwise_cross_entropy(logits, bad),
                       doctest::Contains("at pixel (y=0, x=0)"), std::invalid_argument);

  TensorPtr glogits = random_tensor({3, 2, 2}, rng);
  CHECK(max_gradient_error({glogits},
                           [&] { return ops::pixelwise_cross_entropy(glogits, labels); }) < 1e-4);
}

TEST_CASE("cross_entropy: uniform, limit, oracle, errors") {
  TensorPtr uniform = Tensor::zeros({9});
  CHECK(ops::cross_entropy(uniform, 4)->value() == doctest::Approx(std::log(9.0)).epsilon(1e-9));

  TensorPtr confident = Tensor::zeros({9});
  confident->data()[2] = 50.0;
  CHECK(ops::cross_entropy(confident, 2)->value() < 1e-6);

  std::mt19937_64 rng(41);
  TensorPtr logits = random_tensor({9}, rng, -2, 2, false);
  double denom = 0.0;
  for (double v : logits->data()) denom += std::exp(v);
  const double expected = -std::log(std::exp(logits->data()[5]) / denom);
  CHECK(ops::cross_entropy(logits, 5)->value() == doctest::Approx(expected).epsilon(1e-10));

  CHECK_THROWS_AS(ops::cross_entropy(logits, 9), std::invalid_argument);
  CHECK_THROWS_AS(ops::cross_entropy(logits, -1), std::invalid_argument);

  TensorPtr g = random_tensor({5}, rng);
  CHECK(max_gradient_error({g}, [&] { return ops::cross_entropy(g, 2); }) < 1e-4);
}

TEST_CASE("backward: seed gradients, analytic checks, error surface") {
  std::mt19937_64 rng(43);
  TensorPtr x = random_tensor({2, 3, 3}, rng);
  TensorPtr loss = ops::sum(x);
  backward(loss);
  for (double g : x->grad()) CHECK(g == 1.0);

  TensorPtr y = random_tensor({4}, rng);
  TensorPtr loss2 = ops::sum(ops::mul(y, y));
  backward(loss2);
  for (long i = 0; i < y->numel(); ++i) {
    CHECK(y->grad()[static_cast<size_t>(i)] == doctest::Approx(2.0 * y->data()[i]));
  }

  // repeated backward without rebuilding is an error
  CHECK_THROWS_AS(backward(loss2), std::logic_error);
  // non-scalar loss
  TensorPtr vec = ops::mul(y, y);
  CHECK_THROWS_AS(backward(vec), std::invalid_argument);
  // detached loss
  TensorPtr leaf = Tensor::scalar(1.0, true);
  CHECK_THROWS_AS(backward(leaf), std::invalid_argument);
}

TEST_CASE("backward visits every graph node exactly once") {
  std::mt19937_64 rng(47);
  TensorPtr x = random_tensor({2, 4, 4}, rng);
  TensorPtr w = random_tensor({2, 2, 3, 3}, rng);
  TensorPtr b = random_tensor({2}, rng);
  // A diamond: both branches share the conv node.
  TensorPtr conv = ops::conv2d(x, w, b, 1, 1);
  TensorPtr left = ops::relu(conv);
  TensorPtr right = ops::tanh(conv);
  TensorPtr loss = ops::sum(ops::mul(left, right));
  backward(loss);

  int with_backward = 0;
  for (Tensor* node : graph_nodes(loss)) {
    if (node->has_backward_fn()) {
      ++with_backward;
      CHECK(node->backward_visits() == 1);
    }
  }
  CHECK(with_backward >= 5);
}

TEST_CASE("gradient sink collects leaf gradients without touching tensors") {
  std::mt19937_64 rng(53);
  TensorPtr x = random_tensor({3}, rng);
  GradSink sink;
  TensorPtr loss = ops::sum(ops::mul(x, x));
  backward(loss, &sink);
  CHECK(sink.size() == 1);
  CHECK_FALSE(x->has_grad());
  sink.merge_scaled(0.5);
  for (long i = 0; i < x->numel(); ++i) {
    CHECK(x->grad()[static_cast<size_t>(i)] == doctest::Approx(x->data()[i]));
  }
}

TEST_CASE("no-grad mode skips graph recording") {
  std::mt19937_64 rng(59);
  TensorPtr x = random_tensor({4}, rng);
  NoGradGuard guard;
  TensorPtr y = ops::mul(x, x);
  CHECK_FALSE(y->requires_grad());
  CHECK(y->parents().empty());
}

TEST_CASE("50-seed gradient sweep over the composite op chain") {
  // Broad but cheap: conv -> pool -> upsample -> mask multiply -> losses.
  for (uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    TensorPtr x = random_tensor_away_from_zero({2, 4, 4}, rng);
    test::separate_pool_windows(x);
    TensorPtr w = random_tensor({2, 2, 3, 3}, rng);
    TensorPtr b = random_tensor({2}, rng);
    TensorPtr mask = random_tensor({1, 4, 4}, rng);

    const double err = max_gradient_error({x, w, b, mask}, [&] {
      TensorPtr h = ops::relu(ops::conv2d(x, w, b, 1, 1));
      h = ops::upsample_nearest2x(ops::maxpool2x2(h).output);
      h = ops::mul_broadcast_mask(mask, h);
      return ops::sum(ops::mul(h, h));
    });
    CHECK(err < 1e-4);
  }
}

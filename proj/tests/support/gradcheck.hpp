#pragma once

// Central finite-difference gradient checking used across the op and
// model tests. The numeric side never touches the autodiff backward
// path: it re-runs forward passes under NoGradGuard.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "affseg/tensor.hpp"

namespace affseg::test {

inline TensorPtr random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                               double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  TensorPtr t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t->data()) v = dist(rng);
  return t;
}

/// Random tensor whose entries stay clear of zero, for kinked ops (relu).
inline TensorPtr random_tensor_away_from_zero(std::vector<int> shape, std::mt19937_64& rng,
                                              double margin = 1e-2) {
  TensorPtr t = random_tensor(std::move(shape), rng);
  for (double& v : t->data()) {
    if (std::abs(v) < margin) v = v < 0.0 ? v - margin : v + margin;
  }
  return t;
}

/// Nudges 2x2 max-pool windows until each has a unique maximum with a
/// comfortable gap, so finite differences cannot flip the argmax.
inline void separate_pool_windows(const TensorPtr& t, double gap = 1e-2) {
  const int c = t->dim(0), h = t->dim(1), w = t->dim(2);
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < h / 2; ++oy) {
      for (int ox = 0; ox < w / 2; ++ox) {
        double* vals[4];
        int k = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            vals[k++] = &t->data()[(static_cast<size_t>(ci) * h + oy * 2 + dy) * w + ox * 2 + dx];
          }
        }
        // Spread the window values by index so ordering gaps exceed `gap`.
        for (int i = 0; i < 4; ++i) *vals[i] += i * 3.0 * gap;
      }
    }
  }
}

/// Max relative gradient error over every element of every leaf.
/// make_loss must rebuild the graph from the leaves on each call.
inline double max_gradient_error(const std::vector<TensorPtr>& leaves,
                                 const std::function<TensorPtr()>& make_loss, double h = 1e-5) {
  for (const auto& leaf : leaves) leaf->zero_grad();
  TensorPtr loss = make_loss();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(leaf->grad());

  double worst = 0.0;
  NoGradGuard no_grad;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = *leaves[li];
    for (long i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf.data()[static_cast<size_t>(i)];
      leaf.data()[static_cast<size_t>(i)] = saved + h;
      const double f_plus = make_loss()->value();
      leaf.data()[static_cast<size_t>(i)] = saved - h;
      const double f_minus = make_loss()->value();
      leaf.data()[static_cast<size_t>(i)] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[li][static_cast<size_t>(i)];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace affseg::test

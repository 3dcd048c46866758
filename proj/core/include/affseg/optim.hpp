#pragma once

#include <random>
#include <vector>

#include "affseg/tensor.hpp"

namespace affseg {

/// Uniform samples in +-sqrt(6 / (fan_in + fan_out)).
TensorPtr xavier_init(std::vector<int> shape, long fan_in, long fan_out, std::mt19937_64& rng);

struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update of `values` in place; `t` counts steps
/// from 1. Moments are resized lazily on first use.
void adam_step(std::vector<double>& values, const std::vector<double>& grad, AdamMoments& moments,
               const AdamConfig& config, long t);

}  // namespace affseg

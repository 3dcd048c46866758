#include "affseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace affseg {

TensorPtr xavier_init(std::vector<int> shape, long fan_in, long fan_out, std::mt19937_64& rng) {
  if (fan_in <= 0 || fan_out <= 0) {
    throw std::invalid_argument("xavier_init: fans must be positive");
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  TensorPtr t = Tensor::zeros(std::move(shape));
  for (double& v : t->data()) v = dist(rng);
  return t;
}

void adam_step(std::vector<double>& values, const std::vector<double>& grad, AdamMoments& moments,
               const AdamConfig& config, long t) {
  if (t < 1) throw std::invalid_argument("adam_step: step count t must be >= 1");
  if (grad.size() != values.size()) {
    throw std::invalid_argument("adam_step: gradient size does not match parameter size");
  }
  if (moments.m.empty()) moments.m.assign(values.size(), 0.0);
  if (moments.v.empty()) moments.v.assign(values.size(), 0.0);
  if (moments.m.size() != values.size() || moments.v.size() != values.size()) {
    throw std::invalid_argument("adam_step: moment size does not match parameter size");
  }

  const double b1 = config.beta1, b2 = config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (size_t i = 0; i < values.size(); ++i) {
    const double g = grad[i];
    moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

}  // namespace affseg

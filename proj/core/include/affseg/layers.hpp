#pragma once

#include <array>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "affseg/ops.hpp"
#include "affseg/tensor.hpp"

namespace affseg {

/// One learnable tensor plus the metadata needed to initialise and
/// serialise it under a stable name.
struct ParamEntry {
  std::string name;
  TensorPtr tensor;
  long fan_in = 0;
  long fan_out = 0;
  bool is_bias = false;
};

/// Ordered collection of every learnable tensor in a model. Registration
/// order is construction order, which makes initialisation and
/// checkpoint layout deterministic.
class ParamRegistry {
 public:
  TensorPtr add(const std::string& name, std::vector<int> shape, long fan_in, long fan_out,
                bool is_bias);
  const std::vector<ParamEntry>& entries() const { return entries_; }
  TensorPtr find(const std::string& name) const;  // null if absent
  void zero_grad();
  long total_parameters() const;
  /// Xavier-uniform weights, zero biases.
  void init_xavier(std::mt19937_64& rng);

 private:
  std::vector<ParamEntry> entries_;
};

/// 3x3 (or 1x1) stride-1 convolution layer with optional bias.
class Conv2d {
 public:
  Conv2d(ParamRegistry& params, const std::string& name, int in_channels, int out_channels,
         int kernel, int padding, bool with_bias = true);
  TensorPtr forward(const TensorPtr& x) const;
  const TensorPtr& weight() const { return weight_; }
  const TensorPtr& bias() const { return bias_; }

 private:
  TensorPtr weight_;
  TensorPtr bias_;  // non-trainable zeros when with_bias is false
  int padding_;
};

/// VGG-style 11-conv feature extractor: stage widths (b, 2b, 4b, 8b)
/// with conv counts (2, 2, 3, 4), ReLU after every conv and 2x2 max
/// pooling after the first three stages. Returns the 8b x H/8 x W/8
/// feature plus the three pre-pool activations as skip sources.
class VggEncoder {
 public:
  static constexpr int kConvCount = 11;

  VggEncoder(ParamRegistry& params, const std::string& prefix, int in_channels, int base_width);

  struct Output {
    TensorPtr feature;
    std::array<TensorPtr, 3> skips;  // full, 1/2 and 1/4 resolution
  };
  Output forward(const TensorPtr& x) const;

  int out_channels() const { return base_width_ * 8; }

 private:
  std::vector<Conv2d> convs_;
  int base_width_;
};

/// Pre-activation residual block: x + conv(relu(conv(relu(x)))),
/// both convs 3x3 same-width.
class ResidualBlock {
 public:
  ResidualBlock(ParamRegistry& params, const std::string& prefix, int channels);
  TensorPtr forward(const TensorPtr& x) const;

 private:
  Conv2d conv1_;
  Conv2d conv2_;
};

struct ConvLstmState {
  TensorPtr hidden;
  TensorPtr cell;
};

/// Convolutional LSTM cell, 3x3 gate convolutions, hidden width equal to
/// the input width. Gate biases live on the input convolutions.
class ConvLstmCell {
 public:
  ConvLstmCell(ParamRegistry& params, const std::string& prefix, int channels);

  ConvLstmState zero_state(int h, int w) const;
  /// Returns (h', new state); h' aliases state.hidden.
  std::pair<TensorPtr, ConvLstmState> step(const TensorPtr& x, const ConvLstmState& state) const;

 private:
  Conv2d xi_, xf_, xo_, xg_;  // input->gate, with bias
  Conv2d hi_, hf_, ho_, hg_;  // hidden->gate, no bias
  int channels_;
};

/// Action classifier: global average pooling over space, then
/// FC(d -> d/2) + ReLU, FC(d/2 -> d/4) + ReLU, FC(d/4 -> actions).
class MlpHead {
 public:
  MlpHead(ParamRegistry& params, const std::string& prefix, int in_channels, int actions);
  TensorPtr forward(const TensorPtr& x) const;

 private:
  TensorPtr w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace affseg

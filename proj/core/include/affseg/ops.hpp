#pragma once

#include <utility>
#include <vector>

#include "affseg/label_map.hpp"
#include "affseg/tensor.hpp"

namespace affseg {
namespace ops {

/// 2-D convolution over a C_in x H x W input with a C_out x C_in x k x k
/// kernel. Output extent per axis is floor((N + 2*padding - k) / stride) + 1.
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias,
                 int stride = 1, int padding = 0);

struct MaxPoolResult {
  TensorPtr output;
  std::vector<int> argmax;  // flat input index per output element
};

/// 2x2 max pooling with stride 2; requires even spatial extents.
/// Gradient routes to the argmax position only, ties broken row-major.
MaxPoolResult maxpool2x2(const TensorPtr& input);

/// Nearest-neighbour 2x upsampling: each element becomes a 2x2 block.
TensorPtr upsample_nearest2x(const TensorPtr& input);

enum class Activation { kRelu, kSigmoid, kTanh };

TensorPtr activation(const TensorPtr& input, Activation kind);
TensorPtr relu(const TensorPtr& input);
TensorPtr sigmoid(const TensorPtr& input);
TensorPtr tanh(const TensorPtr& input);

/// Softmax over all spatial positions of a 1 x h x w map (max-subtracted).
TensorPtr softmax_spatial(const TensorPtr& input);

/// Stacks a and b along the channel axis; spatial extents must match.
TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b);

/// out[c,y,x] = mask[0,y,x] * x[c,y,x].
TensorPtr mul_broadcast_mask(const TensorPtr& mask, const TensorPtr& x);

/// weight (m x n) * x (n) + bias (m).
TensorPtr linear(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias);

/// Mean over all pixels of -log softmax_channel(logits)[target].
TensorPtr pixelwise_cross_entropy(const TensorPtr& logits, const LabelMap& target);

/// -log softmax(logits)[target] for a logit vector.
TensorPtr cross_entropy(const TensorPtr& logits, int target);

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double factor);
TensorPtr sum(const TensorPtr& x);

/// d x h x w -> d vector of per-channel spatial means.
TensorPtr global_avg_pool(const TensorPtr& x);

}  // namespace ops
}  // namespace affseg

#include "affseg/layers.hpp"

#include <stdexcept>

#include "affseg/optim.hpp"

namespace affseg {

TensorPtr ParamRegistry::add(const std::string& name, std::vector<int> shape, long fan_in,
                             long fan_out, bool is_bias) {
  if (find(name)) {
    throw std::logic_error("parameter registered twice: " + name);
  }
  TensorPtr t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  entries_.push_back({name, t, fan_in, fan_out, is_bias});
  return t;
}

TensorPtr ParamRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  return nullptr;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor->zero_grad();
}

long ParamRegistry::total_parameters() const {
  long n = 0;
  for (const auto& e : entries_) n += e.tensor->numel();
  return n;
}

void ParamRegistry::init_xavier(std::mt19937_64& rng) {
  for (auto& e : entries_) {
    if (e.is_bias) {
      std::fill(e.tensor->data().begin(), e.tensor->data().end(), 0.0);
    } else {
      TensorPtr init = xavier_init(e.tensor->shape(), e.fan_in, e.fan_out, rng);
      e.tensor->data() = init->data();
    }
  }
}

Conv2d::Conv2d(ParamRegistry& params, const std::string& name, int in_channels, int out_channels,
               int kernel, int padding, bool with_bias)
    : padding_(padding) {
  const long fan_in = static_cast<long>(in_channels) * kernel * kernel;
  const long fan_out = static_cast<long>(out_channels) * kernel * kernel;
  weight_ = params.add(name + ".weight", {out_channels, in_channels, kernel, kernel}, fan_in,
                       fan_out, false);
  if (with_bias) {
    bias_ = params.add(name + ".bias", {out_channels}, fan_in, fan_out, true);
  } else {
    bias_ = Tensor::zeros({out_channels});
  }
}

TensorPtr Conv2d::forward(const TensorPtr& x) const {
  return ops::conv2d(x, weight_, bias_, /*stride=*/1, padding_);
}

VggEncoder::VggEncoder(ParamRegistry& params, const std::string& prefix, int in_channels,
                       int base_width)
    : base_width_(base_width) {
  if (base_width < 1) throw std::invalid_argument("encoder base width must be positive");
  // Stage layout: widths (b, 2b, 4b, 8b), conv counts (2, 2, 3, 4).
  const int stage_convs[4] = {2, 2, 3, 4};
  int in_c = in_channels;
  int idx = 0;
  for (int s = 0; s < 4; ++s) {
    const int out_c = base_width << s;
    for (int k = 0; k < stage_convs[s]; ++k) {
      convs_.emplace_back(params, prefix + ".conv" + std::to_string(idx++), in_c, out_c, 3, 1);
      in_c = out_c;
    }
  }
}

VggEncoder::Output VggEncoder::forward(const TensorPtr& x) const {
  if (x->dim(1) % 8 != 0 || x->dim(2) % 8 != 0) {
    throw std::invalid_argument("encoder input extents must be divisible by 8, got " +
                                shape_string(x->shape()));
  }
  Output out;
  TensorPtr h = x;
  size_t conv_idx = 0;
  const int stage_convs[4] = {2, 2, 3, 4};
  for (int s = 0; s < 4; ++s) {
    for (int k = 0; k < stage_convs[s]; ++k) {
      h = ops::relu(convs_[conv_idx++].forward(h));
    }
    if (s < 3) {
      out.skips[static_cast<size_t>(s)] = h;
      h = ops::maxpool2x2(h).output;
    }
  }
  out.feature = h;
  return out;
}

ResidualBlock::ResidualBlock(ParamRegistry& params, const std::string& prefix, int channels)
    : conv1_(params, prefix + ".conv0", channels, channels, 3, 1),
      conv2_(params, prefix + ".conv1", channels, channels, 3, 1) {}

TensorPtr ResidualBlock::forward(const TensorPtr& x) const {
  TensorPtr h = conv2_.forward(ops::relu(conv1_.forward(ops::relu(x))));
  return ops::add(x, h);
}

ConvLstmCell::ConvLstmCell(ParamRegistry& params, const std::string& prefix, int channels)
    : xi_(params, prefix + ".xi", channels, channels, 3, 1),
      xf_(params, prefix + ".xf", channels, channels, 3, 1),
      xo_(params, prefix + ".xo", channels, channels, 3, 1),
      xg_(params, prefix + ".xg", channels, channels, 3, 1),
      hi_(params, prefix + ".hi", channels, channels, 3, 1, /*with_bias=*/false),
      hf_(params, prefix + ".hf", channels, channels, 3, 1, /*with_bias=*/false),
      ho_(params, prefix + ".ho", channels, channels, 3, 1, /*with_bias=*/false),
      hg_(params, prefix + ".hg", channels, channels, 3, 1, /*with_bias=*/false),
      channels_(channels) {}

ConvLstmState ConvLstmCell::zero_state(int h, int w) const {
  return {Tensor::zeros({channels_, h, w}), Tensor::zeros({channels_, h, w})};
}

std::pair<TensorPtr, ConvLstmState> ConvLstmCell::step(const TensorPtr& x,
                                                       const ConvLstmState& state) const {
  if (x->dim(1) != state.hidden->dim(1) || x->dim(2) != state.hidden->dim(2)) {
    throw std::invalid_argument("convlstm: input extents " + shape_string(x->shape()) +
                                " do not match state " + shape_string(state.hidden->shape()));
  }
  const TensorPtr& h = state.hidden;
  TensorPtr i = ops::sigmoid(ops::add(xi_.forward(x), hi_.forward(h)));
  TensorPtr f = ops::sigmoid(ops::add(xf_.forward(x), hf_.forward(h)));
  TensorPtr o = ops::sigmoid(ops::add(xo_.forward(x), ho_.forward(h)));
  TensorPtr g = ops::tanh(ops::add(xg_.forward(x), hg_.forward(h)));
  TensorPtr c_next = ops::add(ops::mul(f, state.cell), ops::mul(i, g));
  TensorPtr h_next = ops::mul(o, ops::tanh(c_next));
  return {h_next, ConvLstmState{h_next, c_next}};
}

MlpHead::MlpHead(ParamRegistry& params, const std::string& prefix, int in_channels, int actions) {
  if (in_channels < 4) {
    throw std::invalid_argument("mlp head: input width " + std::to_string(in_channels) +
                                " is below the minimum of 4 (layer widths d/2 and d/4)");
  }
  const int h1 = in_channels / 2;
  const int h2 = in_channels / 4;
  w1_ = params.add(prefix + ".fc1.weight", {h1, in_channels}, in_channels, h1, false);
  b1_ = params.add(prefix + ".fc1.bias", {h1}, in_channels, h1, true);
  w2_ = params.add(prefix + ".fc2.weight", {h2, h1}, h1, h2, false);
  b2_ = params.add(prefix + ".fc2.bias", {h2}, h1, h2, true);
  w3_ = params.add(prefix + ".fc3.weight", {actions, h2}, h2, actions, false);
  b3_ = params.add(prefix + ".fc3.bias", {actions}, h2, actions, true);
}

TensorPtr MlpHead::forward(const TensorPtr& x) const {
  TensorPtr v = ops::global_avg_pool(x);
  v = ops::relu(ops::linear(v, w1_, b1_));
  v = ops::relu(ops::linear(v, w2_, b2_));
  return ops::linear(v, w3_, b3_);
}

}  // namespace affseg

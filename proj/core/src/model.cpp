#include "affseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "affseg/errors.hpp"
#include "affseg/ops.hpp"

namespace affseg {

void ModelConfig::validate() const {
  if (input_h <= 0 || input_w <= 0 || input_h % 8 != 0 || input_w % 8 != 0) {
    throw ConfigError("model: input size " + std::to_string(input_h) + "x" +
                      std::to_string(input_w) + " must be positive and divisible by 8");
  }
  if (base_width < 1) {
    throw ConfigError("model: base width must be positive");
  }
  if (latent_channels() < 4) {
    throw ConfigError("model: latent width " + std::to_string(latent_channels()) +
                      " is too narrow for the action head");
  }
  if (affordance_classes < 1) {
    throw ConfigError("model: need at least one affordance class");
  }
  if (num_actions < 1) {
    throw ConfigError("model: need at least one action class");
  }
  if (flow_dim != 2 && flow_dim != 3) {
    throw ConfigError("model: flow_dim must be 2 or 3, got " + std::to_string(flow_dim));
  }
}

const std::vector<std::string>& ModelConfig::variant_names() {
  static const std::vector<std::string> names = {
      "rgb", "rgb-attn", "rgb-attn-2dflow", "rgbd", "rgbd-attn", "rgbd-attn-3dflow",
  };
  return names;
}

ModelConfig ModelConfig::with_variant(ModelConfig base, const std::string& variant) {
  if (variant == "rgb") {
    base.use_depth = false;
    base.use_flow_stream = false;
    base.use_attention = false;
  } else if (variant == "rgb-attn") {
    base.use_depth = false;
    base.use_flow_stream = false;
    base.use_attention = true;
  } else if (variant == "rgb-attn-2dflow") {
    base.use_depth = false;
    base.use_flow_stream = true;
    base.use_attention = true;
    base.flow_dim = 2;
  } else if (variant == "rgbd") {
    base.use_depth = true;
    base.use_flow_stream = false;
    base.use_attention = false;
  } else if (variant == "rgbd-attn") {
    base.use_depth = true;
    base.use_flow_stream = false;
    base.use_attention = true;
  } else if (variant == "rgbd-attn-3dflow") {
    base.use_depth = true;
    base.use_flow_stream = true;
    base.use_attention = true;
    base.flow_dim = 3;
  } else {
    std::string all;
    for (const auto& n : variant_names()) {
      if (!all.empty()) all += ", ";
      all += n;
    }
    throw ConfigError("unknown model variant '" + variant + "'; expected one of: " + all);
  }
  return base;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_h", c.input_h},
                     {"input_w", c.input_w},
                     {"base_width", c.base_width},
                     {"affordance_classes", c.affordance_classes},
                     {"num_actions", c.num_actions},
                     {"use_depth", c.use_depth},
                     {"use_flow_stream", c.use_flow_stream},
                     {"use_attention", c.use_attention},
                     {"flow_dim", c.flow_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("input_h").get_to(c.input_h);
  j.at("input_w").get_to(c.input_w);
  j.at("base_width").get_to(c.base_width);
  j.at("affordance_classes").get_to(c.affordance_classes);
  j.at("num_actions").get_to(c.num_actions);
  j.at("use_depth").get_to(c.use_depth);
  j.at("use_flow_stream").get_to(c.use_flow_stream);
  j.at("use_attention").get_to(c.use_attention);
  j.at("flow_dim").get_to(c.flow_dim);
}

AffordanceModel::AffordanceModel(ModelConfig config, uint64_t seed) : config_(config) {
  config_.validate();
  const int b = config_.base_width;
  const int d = config_.latent_channels();

  appearance_encoder_ = std::make_unique<VggEncoder>(params_, "encoder_rgbd",
                                                     config_.appearance_channels(), b);
  if (config_.use_flow_stream) {
    flow_encoder_ = std::make_unique<VggEncoder>(params_, "encoder_flow", 3, b);
  }
  const int fusion_in = config_.use_flow_stream ? 2 * d : d;
  fusion_ = std::make_unique<Conv2d>(params_, "fusion", fusion_in, d, 1, 0);

  residual_ = std::make_unique<ResidualBlock>(params_, "latent.res", d);
  lstm1_ = std::make_unique<ConvLstmCell>(params_, "latent.lstm1", d);
  lstm2_ = std::make_unique<ConvLstmCell>(params_, "latent.lstm2", d);

  if (config_.use_attention) {
    attention_conv_ = std::make_unique<Conv2d>(params_, "attention", 2 * d, 1, 1, 0);
  }

  for (int s = 0; s < 3; ++s) {
    const int c_in = d >> s;
    const int c_half = c_in / 2;
    const std::string prefix = "decoder.s" + std::to_string(s);
    decoder_[static_cast<size_t>(s)].up_conv =
        std::make_unique<Conv2d>(params_, prefix + ".up_conv", c_in, c_half, 3, 1);
    decoder_[static_cast<size_t>(s)].fuse_1x1 =
        std::make_unique<Conv2d>(params_, prefix + ".fuse_1x1", c_in, c_half, 1, 0);
    decoder_[static_cast<size_t>(s)].conv_a =
        std::make_unique<Conv2d>(params_, prefix + ".conv_a", c_half, c_half, 3, 1);
    decoder_[static_cast<size_t>(s)].conv_b =
        std::make_unique<Conv2d>(params_, prefix + ".conv_b", c_half, c_half, 3, 1);
  }
  decoder_pre_ = std::make_unique<Conv2d>(params_, "decoder.pre", b, b, 3, 1);
  decoder_classifier_ =
      std::make_unique<Conv2d>(params_, "decoder.classifier", b, config_.seg_classes(), 1, 0);

  action_head_ = std::make_unique<MlpHead>(params_, "action_head", d, config_.num_actions);

  std::mt19937_64 rng(seed);
  params_.init_xavier(rng);
}

AffordanceModel::Encoded AffordanceModel::encode_frame(const TensorPtr& appearance,
                                                       const TensorPtr& flow_image,
                                                       ForwardTrace* trace) const {
  if (appearance->rank() != 3 || appearance->dim(0) != config_.appearance_channels()) {
    throw std::invalid_argument("encode_frame: appearance must be " +
                                std::to_string(config_.appearance_channels()) +
                                " channels, got " + shape_string(appearance->shape()));
  }
  ArchCounters counters;
  std::optional<ArchCounterScope> scope;
  if (trace) scope.emplace(&counters);

  Encoded out;
  VggEncoder::Output app = appearance_encoder_->forward(appearance);
  out.skips = app.skips;
  if (trace) {
    trace->appearance_convs += counters.conv2d;
    trace->encoder_pools += counters.maxpool;
  }

  TensorPtr fused_in = app.feature;
  if (config_.use_flow_stream) {
    if (!flow_image) {
      throw std::invalid_argument("encode_frame: flow image required by this variant");
    }
    if (flow_image->dim(1) != appearance->dim(1) || flow_image->dim(2) != appearance->dim(2)) {
      throw std::invalid_argument("encode_frame: stream extent mismatch, appearance " +
                                  shape_string(appearance->shape()) + " vs flow " +
                                  shape_string(flow_image->shape()));
    }
    const long convs_before = counters.conv2d;
    const long pools_before = counters.maxpool;
    VggEncoder::Output flow = flow_encoder_->forward(flow_image);
    if (trace) {
      trace->flow_convs += counters.conv2d - convs_before;
      trace->encoder_pools += counters.maxpool - pools_before;
    }
    fused_in = ops::concat_channels(app.feature, flow.feature);
  }

  const long convs_before_fusion = counters.conv2d;
  out.fused = ops::relu(fusion_->forward(fused_in));
  if (trace) trace->fusion_convs += counters.conv2d - convs_before_fusion;
  return out;
}

AffordanceModel::LatentState AffordanceModel::initial_state() const {
  return initial_state(config_.input_h, config_.input_w);
}

AffordanceModel::LatentState AffordanceModel::initial_state(int input_h, int input_w) const {
  return {lstm1_->zero_state(input_h / 8, input_w / 8),
          lstm2_->zero_state(input_h / 8, input_w / 8)};
}

AffordanceModel::Latent AffordanceModel::latent_step(const TensorPtr& fused, LatentState& state,
                                                     ForwardTrace* trace) const {
  Latent out;
  out.spatial = residual_->forward(fused);
  auto [h1, s1] = lstm1_->step(out.spatial, state.lstm1);
  auto [h2, s2] = lstm2_->step(h1, state.lstm2);
  state.lstm1 = s1;
  state.lstm2 = s2;
  out.temporal = h2;
  if (trace) {
    trace->residual_blocks += 1;
    trace->convlstm_steps += 2;
  }
  return out;
}

TensorPtr AffordanceModel::attention_mask(const TensorPtr& spatial, const TensorPtr& temporal,
                                          ForwardTrace* trace) const {
  if (!attention_conv_) {
    throw ConfigError("attention_mask: attention is disabled in this variant");
  }
  TensorPtr stacked = ops::concat_channels(spatial, temporal);
  TensorPtr logits = attention_conv_->forward(stacked);
  if (trace) trace->attention_convs += 1;
  return ops::softmax_spatial(logits);
}

TensorPtr AffordanceModel::decode(const TensorPtr& temporal, const TensorPtr& mask,
                                  const std::array<TensorPtr, 3>& skips,
                                  ForwardTrace* trace) const {
  if (config_.use_attention && !mask) {
    throw std::invalid_argument("decode: attention variant requires a mask");
  }
  if (!config_.use_attention && mask) {
    throw std::invalid_argument("decode: mask provided but attention is disabled");
  }
  ArchCounters counters;
  std::optional<ArchCounterScope> scope;
  if (trace) scope.emplace(&counters);

  TensorPtr h = temporal;
  TensorPtr m = mask;
  if (m) h = ops::mul_broadcast_mask(m, h);

  for (int s = 0; s < 3; ++s) {
    const DecoderStage& stage = decoder_[static_cast<size_t>(s)];
    h = ops::upsample_nearest2x(h);
    if (trace) trace->decoder_upsamples += 1;
    h = ops::relu(stage.up_conv->forward(h));
    if (m) {
      m = ops::upsample_nearest2x(m);
      h = ops::mul_broadcast_mask(m, h);
    }
    // Skips are ordered full, 1/2, 1/4 resolution; stages run coarse to fine.
    h = ops::concat_channels(h, skips[static_cast<size_t>(2 - s)]);
    h = ops::relu(stage.fuse_1x1->forward(h));
    h = ops::relu(stage.conv_a->forward(h));
    h = ops::relu(stage.conv_b->forward(h));
  }
  h = ops::relu(decoder_pre_->forward(h));
  h = decoder_classifier_->forward(h);
  if (trace) {
    trace->decoder_convs += counters.conv2d;
    trace->mask_applications += counters.mask_mul;
  }
  return h;
}

TensorPtr AffordanceModel::action_logits(const TensorPtr& temporal) const {
  return action_head_->forward(temporal);
}

AffordanceModel::Output AffordanceModel::forward_sequence(const SequenceBatch& batch,
                                                          ForwardTrace* trace) const {
  if (batch.appearance.empty()) {
    throw std::invalid_argument("forward_sequence: empty sequence");
  }
  if (batch.flow.size() != batch.appearance.size()) {
    throw std::invalid_argument("forward_sequence: flow frame count " +
                                std::to_string(batch.flow.size()) +
                                " does not match appearance frame count " +
                                std::to_string(batch.appearance.size()));
  }
  const TensorPtr& first = batch.appearance.front();
  LatentState state = initial_state(first->dim(1), first->dim(2));

  Encoded enc;
  Latent lat;
  for (size_t t = 0; t < batch.appearance.size(); ++t) {
    enc = encode_frame(batch.appearance[t], batch.flow[t], trace);
    lat = latent_step(enc.fused, state, trace);
  }
  if (trace) trace->frames += static_cast<int>(batch.appearance.size());

  Output out;
  if (config_.use_attention) {
    out.attention = attention_mask(lat.spatial, lat.temporal, trace);
  }
  out.seg_logits = decode(lat.temporal, out.attention, enc.skips, trace);
  out.action_logits = action_head_->forward(lat.temporal);
  return out;
}

TensorPtr AffordanceModel::zero_motion_flow_image(int h, int w) const {
  return Tensor::full({3, h, w}, 128.0 / 255.0);
}

Segmentation segmentation_from_logits(const TensorPtr& seg_logits, double confidence_threshold) {
  const int c = seg_logits->dim(0);
  const int h = seg_logits->dim(1);
  const int w = seg_logits->dim(2);
  const long hw = static_cast<long>(h) * w;
  const double* lv = seg_logits->data().data();

  Segmentation result;
  result.labels = LabelMap(h, w);
  result.confidence.assign(static_cast<size_t>(hw), 0.0);
  for (long p = 0; p < hw; ++p) {
    double mx = lv[p];
    int arg = 0;
    for (int ci = 1; ci < c; ++ci) {
      const double v = lv[ci * hw + p];
      if (v > mx) {
        mx = v;
        arg = ci;
      }
    }
    double total = 0.0;
    for (int ci = 0; ci < c; ++ci) total += std::exp(lv[ci * hw + p] - mx);
    const double conf = 1.0 / total;  // softmax value of the argmax channel
    result.confidence[static_cast<size_t>(p)] = conf;
    result.labels.values[static_cast<size_t>(p)] = conf < confidence_threshold ? 0 : arg;
  }
  return result;
}

Segmentation AffordanceModel::infer_static(const TensorPtr& appearance,
                                           double confidence_threshold) const {
  NoGradGuard no_grad;
  SequenceBatch batch;
  batch.appearance = {appearance};
  batch.flow = {zero_motion_flow_image(appearance->dim(1), appearance->dim(2))};
  Output out = forward_sequence(batch);
  return segmentation_from_logits(out.seg_logits, confidence_threshold);
}

LossBreakdown compute_loss(const TensorPtr& seg_logits, const TensorPtr& action_logits,
                           const LabelMap& mask_target, int action_target, double lambda1,
                           double lambda2) {
  if (lambda1 < 0.0 || lambda1 > 1.0 || lambda2 < 0.0 || lambda2 > 1.0) {
    throw ConfigError("loss weights must lie in [0,1], got lambda1=" + std::to_string(lambda1) +
                      " lambda2=" + std::to_string(lambda2));
  }
  if (std::abs(lambda1 + lambda2 - 1.0) > 1e-9) {
    throw ConfigError("loss weights must sum to 1, got " + std::to_string(lambda1 + lambda2));
  }
  LossBreakdown out;
  out.seg = ops::pixelwise_cross_entropy(seg_logits, mask_target);
  out.action = ops::cross_entropy(action_logits, action_target);
  out.total = ops::add(ops::scale(out.seg, lambda1), ops::scale(out.action, lambda2));
  return out;
}

TensorPtr total_loss(const TensorPtr& seg_logits, const TensorPtr& action_logits,
                     const LabelMap& mask_target, int action_target, double lambda1,
                     double lambda2) {
  return compute_loss(seg_logits, action_logits, mask_target, action_target, lambda1, lambda2)
      .total;
}

}  // namespace affseg

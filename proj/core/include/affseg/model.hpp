#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affseg/label_map.hpp"
#include "affseg/layers.hpp"
#include "affseg/tensor.hpp"

namespace affseg {

/// Architecture hyperparameters, including the ablation switches that
/// span the model variant matrix.
struct ModelConfig {
  int input_h = 48;
  int input_w = 48;
  int base_width = 8;          // encoder stage-1 width; latent width is 8x this
  int affordance_classes = 9;  // excludes background
  int num_actions = 9;
  bool use_depth = true;
  bool use_flow_stream = true;
  bool use_attention = true;
  int flow_dim = 3;  // 3: full motion colorization; 2: depth axis held at mid-gray

  int seg_classes() const { return affordance_classes + 1; }  // + background
  int latent_channels() const { return base_width * 8; }
  int appearance_channels() const { return use_depth ? 4 : 3; }
  int latent_h() const { return input_h / 8; }
  int latent_w() const { return input_w / 8; }

  void validate() const;  // throws ConfigError

  /// Named ablation variants: rgb, rgb-attn, rgb-attn-2dflow, rgbd,
  /// rgbd-attn, rgbd-attn-3dflow.
  static ModelConfig with_variant(ModelConfig base, const std::string& variant);
  static const std::vector<std::string>& variant_names();

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Preprocessed input clip: per-frame appearance (RGB or RGB-D stacked
/// on channels) and colorized-motion images, plus last-frame labels.
struct SequenceBatch {
  std::vector<TensorPtr> appearance;
  std::vector<TensorPtr> flow;
  LabelMap mask;
  int action_label = 0;
  int frames() const { return static_cast<int>(appearance.size()); }
};

/// Per-forward operation counts for architecture conformance checks.
struct ForwardTrace {
  int frames = 0;
  long appearance_convs = 0;
  long flow_convs = 0;
  long fusion_convs = 0;
  long encoder_pools = 0;
  long residual_blocks = 0;
  long convlstm_steps = 0;
  long attention_convs = 0;
  long decoder_convs = 0;
  long decoder_upsamples = 0;
  long mask_applications = 0;
};

/// The spatio-temporal autoencoder: two-stream VGG encoders fused by a
/// 1x1 convolution, a pre-activation residual block and two convLSTMs in
/// the latent space, a spatial-softmax excitation mask re-applied at
/// every decoder scale, a skip-connected 14-conv decoder, and an MLP
/// action head off the second convLSTM output.
class AffordanceModel {
 public:
  AffordanceModel(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  struct Encoded {
    TensorPtr fused;                 // d x h x w
    std::array<TensorPtr, 3> skips;  // appearance-stream pre-pool activations
  };
  Encoded encode_frame(const TensorPtr& appearance, const TensorPtr& flow_image,
                       ForwardTrace* trace = nullptr) const;

  struct LatentState {
    ConvLstmState lstm1;
    ConvLstmState lstm2;
  };
  LatentState initial_state() const;
  LatentState initial_state(int input_h, int input_w) const;

  struct Latent {
    TensorPtr spatial;   // after the residual block
    TensorPtr temporal;  // after the second convLSTM
  };
  Latent latent_step(const TensorPtr& fused, LatentState& state,
                     ForwardTrace* trace = nullptr) const;

  /// Spatial-softmax excitation mask over the stacked spatial/temporal
  /// latent features; entries are positive and sum to 1.
  TensorPtr attention_mask(const TensorPtr& spatial, const TensorPtr& temporal,
                           ForwardTrace* trace = nullptr) const;

  /// Decodes seg logits from the temporal latent feature. `mask` must be
  /// non-null exactly when the attention variant is enabled; it is
  /// applied to the latent input and re-applied (nearest-upsampled)
  /// after every upsampling stage.
  TensorPtr decode(const TensorPtr& temporal, const TensorPtr& mask,
                   const std::array<TensorPtr, 3>& skips, ForwardTrace* trace = nullptr) const;

  TensorPtr action_logits(const TensorPtr& temporal) const;

  struct Output {
    TensorPtr seg_logits;     // C x H x W
    TensorPtr action_logits;  // A
    TensorPtr attention;      // 1 x h x w; null when attention is disabled
  };
  Output forward_sequence(const SequenceBatch& batch, ForwardTrace* trace = nullptr) const;

  /// Single-frame inference with a zero-motion flow image. Pixels whose
  /// confidence falls below the threshold are labelled background.
  struct Segmentation infer_static(const TensorPtr& appearance,
                                   double confidence_threshold) const;

  /// The colorization of a zero motion field: every channel 128/255.
  TensorPtr zero_motion_flow_image(int h, int w) const;

 private:
  ModelConfig config_;
  ParamRegistry params_;

  std::unique_ptr<VggEncoder> appearance_encoder_;
  std::unique_ptr<VggEncoder> flow_encoder_;  // null unless use_flow_stream
  std::unique_ptr<Conv2d> fusion_;
  std::unique_ptr<ResidualBlock> residual_;
  std::unique_ptr<ConvLstmCell> lstm1_;
  std::unique_ptr<ConvLstmCell> lstm2_;
  std::unique_ptr<Conv2d> attention_conv_;  // null unless use_attention

  struct DecoderStage {
    std::unique_ptr<Conv2d> up_conv;    // 3x3 after upsample, halves width
    std::unique_ptr<Conv2d> fuse_1x1;   // post-concat intra-channel mix
    std::unique_ptr<Conv2d> conv_a;
    std::unique_ptr<Conv2d> conv_b;
  };
  std::array<DecoderStage, 3> decoder_;
  std::unique_ptr<Conv2d> decoder_pre_;         // final 3x3 + ReLU
  std::unique_ptr<Conv2d> decoder_classifier_;  // 1x1 to C, no activation
  std::unique_ptr<MlpHead> action_head_;
};

/// Per-pixel argmax labels and their softmax confidence; pixels below
/// the confidence threshold fall back to background.
struct Segmentation {
  LabelMap labels;
  std::vector<double> confidence;
};

Segmentation segmentation_from_logits(const TensorPtr& seg_logits, double confidence_threshold);

struct LossBreakdown {
  TensorPtr total;
  TensorPtr seg;
  TensorPtr action;
};

/// lambda1 * pixelwise seg cross-entropy + lambda2 * action cross-entropy.
/// The weights must be in [0,1] and sum to 1 (within 1e-9).
LossBreakdown compute_loss(const TensorPtr& seg_logits, const TensorPtr& action_logits,
                           const LabelMap& mask_target, int action_target, double lambda1,
                           double lambda2);
TensorPtr total_loss(const TensorPtr& seg_logits, const TensorPtr& action_logits,
                     const LabelMap& mask_target, int action_target, double lambda1,
                     double lambda2);

}  // namespace affseg

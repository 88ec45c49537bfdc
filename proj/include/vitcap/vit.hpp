#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vitcap/tensor.hpp"

// Encoder-only Vision Transformer: flattened-patch embedding with a learned
// absolute position table, a stack of pre-norm encoders (multi-head
// attention plus a one-hidden-layer GELU feedforward, both residual), mean
// pooling over tokens, and an affine classifier. Per-head key/query/value
// widths are freestanding config values, which is what makes the total
// parameter count grow less than proportionally with the head count.

namespace vitcap {

struct ModelConfig {
  size_t image_size = 32;
  size_t patch_size = 2;
  size_t channels = 1;
  size_t d_model = 64;
  size_t d_key = 64;
  size_t d_value = 64;
  size_t d_ff = 64;
  size_t heads = 1;
  size_t encoders = 1;
  size_t classes = 10;
  bool use_bias = true;

  void validate() const;
  size_t tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
  size_t patch_dim() const { return patch_size * patch_size * channels; }

  bool operator==(const ModelConfig&) const = default;
};

struct ParamCountBreakdown {
  long long embedding = 0;
  long long positional = 0;
  long long attention_per_encoder = 0;
  long long ffn_per_encoder = 0;
  long long norm_per_encoder = 0;
  long long classifier = 0;
  long long total = 0;

  long long per_encoder() const {
    return attention_per_encoder + ffn_per_encoder + norm_per_encoder;
  }
};

// Closed-form parameter accounting; exact against model enumeration.
ParamCountBreakdown count_params(const ModelConfig& config);

template <typename T>
struct AttentionHead {
  Parameter<T> wq, wk, wv;                      // d_model x d_key/d_key/d_value
  std::optional<Parameter<T>> bq, bk, bv;
};

template <typename T>
struct EncoderBlock {
  std::vector<AttentionHead<T>> heads;
  Parameter<T> attn_out;                        // (h * d_value) x d_model
  std::optional<Parameter<T>> attn_out_bias;
  Parameter<T> ln1_gain, ln1_shift, ln2_gain, ln2_shift;
  Parameter<T> ffn_w1, ffn_w2;                  // d_model x d_ff, d_ff x d_model
  std::optional<Parameter<T>> ffn_b1, ffn_b2;
};

template <typename T>
class VisionTransformer {
 public:
  VisionTransformer() = default;

  // Deterministic from seed: uniform(-a, a) with a = sqrt(6/(fan_in+fan_out))
  // for matrices, zeros for biases and the position table, ones for norm gains.
  static VisionTransformer build(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Every parameter in fixed construction order (stable names).
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  size_t enumerated_param_count() const;
  void zero_grad();
  VisionTransformer clone() const;

  // Attention weight matrices captured per head per encoder, for inspection.
  struct AttentionCapture {
    std::vector<Tensor<T>> weights;
  };

  // [C x s x s] image -> [N x d_model] tokens (patch projection + position)
  Tensor<T> patch_embed(Tape<T>& tape, const Tensor<T>& image) const;

  // [N x d_model] -> [N x d_model] for one encoder's attention block
  Tensor<T> multi_head_attention(Tape<T>& tape, const Tensor<T>& tokens, size_t encoder,
                                 AttentionCapture* capture = nullptr) const;

  // pre-norm residual encoder: x + MHA(LN1(x)), then x + FFN(LN2(x))
  Tensor<T> encoder_forward(Tape<T>& tape, const Tensor<T>& tokens, size_t encoder,
                            AttentionCapture* capture = nullptr) const;

  // pooled feature vector [d_model] of one image
  Tensor<T> features(Tape<T>& tape, const Tensor<T>& image,
                     AttentionCapture* capture = nullptr) const;

  // [B x C x s x s] -> [B x classes]
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& images,
                    AttentionCapture* capture = nullptr) const;

  // direct access for tests, checkpointing, and the optimizer
  Parameter<T>& embed_weight() { return embed_w_; }
  Parameter<T>& position_table() { return pos_; }
  std::vector<EncoderBlock<T>>& encoder_blocks() { return encoders_; }
  Parameter<T>& classifier_weight() { return cls_w_; }

  static constexpr T layer_norm_eps = T(1e-5);

 private:
  ModelConfig config_;
  Parameter<T> embed_w_;
  std::optional<Parameter<T>> embed_b_;
  Parameter<T> pos_;
  std::vector<EncoderBlock<T>> encoders_;
  Parameter<T> cls_w_;
  std::optional<Parameter<T>> cls_b_;
};

extern template class VisionTransformer<float>;
extern template class VisionTransformer<double>;

}  // namespace vitcap

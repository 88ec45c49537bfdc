#include "vitcap/vit.hpp"

#include <cmath>

#include "vitcap/image_ops.hpp"
#include "vitcap/rng.hpp"

namespace vitcap {

void ModelConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || channels == 0 || d_key == 0 || d_value == 0 ||
      d_ff == 0)
    throw ConfigError("model config: all extents must be positive");
  if (image_size % patch_size != 0)
    throw ConfigError("model config: patch size " + std::to_string(patch_size) +
                      " does not divide image size " + std::to_string(image_size));
  if (d_model < 2) throw ConfigError("model config: d_model must be at least 2");
  if (heads < 1) throw ConfigError("model config: at least one attention head");
  if (encoders < 1) throw ConfigError("model config: at least one encoder");
  if (classes < 2) throw ConfigError("model config: at least two classes");
}

ParamCountBreakdown count_params(const ModelConfig& c) {
  c.validate();
  const long long d = c.d_model, dk = c.d_key, dv = c.d_value, dff = c.d_ff;
  const long long h = c.heads, t = c.encoders, m = c.classes;
  const long long pd = c.patch_dim(), n = c.tokens();
  const long long bias = c.use_bias ? 1 : 0;

  ParamCountBreakdown b;
  b.embedding = pd * d + bias * d;
  b.positional = n * d;
  b.attention_per_encoder =
      h * (d * (2 * dk + dv) + bias * (2 * dk + dv)) + (h * dv) * d + bias * d;
  b.ffn_per_encoder = d * dff + bias * dff + dff * d + bias * d;
  b.norm_per_encoder = 4 * d;  // two gain/shift pairs, independent of use_bias
  b.classifier = d * m + bias * m;
  b.total = b.embedding + b.positional +
            t * (b.attention_per_encoder + b.ffn_per_encoder + b.norm_per_encoder) +
            b.classifier;
  return b;
}

namespace {

template <typename T>
Tensor<T> glorot_uniform(size_t fan_in, size_t fan_out, DetRng& rng) {
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  std::vector<T> data(fan_in * fan_out);
  for (auto& v : data) v = T(rng.uniform(-a, a));
  return Tensor<T>::from_data({fan_in, fan_out}, std::move(data));
}

}  // namespace

template <typename T>
VisionTransformer<T> VisionTransformer<T>::build(const ModelConfig& config, uint64_t seed) {
  config.validate();
  DetRng rng(seed);
  VisionTransformer<T> model;
  model.config_ = config;

  const size_t d = config.d_model;
  model.embed_w_ = Parameter<T>("embed.weight", glorot_uniform<T>(config.patch_dim(), d, rng));
  if (config.use_bias) model.embed_b_ = Parameter<T>("embed.bias", Tensor<T>::zeros({d}));
  model.pos_ = Parameter<T>("pos", Tensor<T>::zeros({config.tokens(), d}));

  model.encoders_.reserve(config.encoders);
  for (size_t e = 0; e < config.encoders; ++e) {
    const std::string pre = "enc" + std::to_string(e) + ".";
    EncoderBlock<T> blk;
    blk.heads.reserve(config.heads);
    for (size_t hd = 0; hd < config.heads; ++hd) {
      const std::string hp = pre + "head" + std::to_string(hd) + ".";
      AttentionHead<T> head;
      head.wq = Parameter<T>(hp + "wq", glorot_uniform<T>(d, config.d_key, rng));
      if (config.use_bias) head.bq = Parameter<T>(hp + "bq", Tensor<T>::zeros({config.d_key}));
      head.wk = Parameter<T>(hp + "wk", glorot_uniform<T>(d, config.d_key, rng));
      if (config.use_bias) head.bk = Parameter<T>(hp + "bk", Tensor<T>::zeros({config.d_key}));
      head.wv = Parameter<T>(hp + "wv", glorot_uniform<T>(d, config.d_value, rng));
      if (config.use_bias) head.bv = Parameter<T>(hp + "bv", Tensor<T>::zeros({config.d_value}));
      blk.heads.push_back(std::move(head));
    }
    blk.attn_out =
        Parameter<T>(pre + "attn_out.weight", glorot_uniform<T>(config.heads * config.d_value, d, rng));
    if (config.use_bias)
      blk.attn_out_bias = Parameter<T>(pre + "attn_out.bias", Tensor<T>::zeros({d}));
    blk.ln1_gain = Parameter<T>(pre + "ln1.gain", Tensor<T>::full({d}, T(1)));
    blk.ln1_shift = Parameter<T>(pre + "ln1.shift", Tensor<T>::zeros({d}));
    blk.ln2_gain = Parameter<T>(pre + "ln2.gain", Tensor<T>::full({d}, T(1)));
    blk.ln2_shift = Parameter<T>(pre + "ln2.shift", Tensor<T>::zeros({d}));
    blk.ffn_w1 = Parameter<T>(pre + "ffn.w1", glorot_uniform<T>(d, config.d_ff, rng));
    if (config.use_bias) blk.ffn_b1 = Parameter<T>(pre + "ffn.b1", Tensor<T>::zeros({config.d_ff}));
    blk.ffn_w2 = Parameter<T>(pre + "ffn.w2", glorot_uniform<T>(config.d_ff, d, rng));
    if (config.use_bias) blk.ffn_b2 = Parameter<T>(pre + "ffn.b2", Tensor<T>::zeros({d}));
    model.encoders_.push_back(std::move(blk));
  }

  model.cls_w_ = Parameter<T>("classifier.weight", glorot_uniform<T>(d, config.classes, rng));
  if (config.use_bias)
    model.cls_b_ = Parameter<T>("classifier.bias", Tensor<T>::zeros({config.classes}));
  return model;
}

template <typename T>
std::vector<Parameter<T>*> VisionTransformer<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto push = [&out](Parameter<T>& p) { out.push_back(&p); };
  auto push_opt = [&out](std::optional<Parameter<T>>& p) {
    if (p) out.push_back(&*p);
  };
  push(embed_w_);
  push_opt(embed_b_);
  push(pos_);
  for (auto& blk : encoders_) {
    for (auto& head : blk.heads) {
      push(head.wq);
      push_opt(head.bq);
      push(head.wk);
      push_opt(head.bk);
      push(head.wv);
      push_opt(head.bv);
    }
    push(blk.attn_out);
    push_opt(blk.attn_out_bias);
    push(blk.ln1_gain);
    push(blk.ln1_shift);
    push(blk.ln2_gain);
    push(blk.ln2_shift);
    push(blk.ffn_w1);
    push_opt(blk.ffn_b1);
    push(blk.ffn_w2);
    push_opt(blk.ffn_b2);
  }
  push(cls_w_);
  push_opt(cls_b_);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> VisionTransformer<T>::parameters() const {
  auto mut = const_cast<VisionTransformer<T>*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
size_t VisionTransformer<T>::enumerated_param_count() const {
  size_t total = 0;
  for (const auto* p : parameters()) total += p->size();
  return total;
}

template <typename T>
void VisionTransformer<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
VisionTransformer<T> VisionTransformer<T>::clone() const {
  VisionTransformer<T> copy = build(config_, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  for (size_t i = 0; i < src.size(); ++i) {
    auto from = src[i]->value();
    auto to = dst[i]->value_mut();
    std::copy(from.begin(), from.end(), to.begin());
  }
  return copy;
}

template <typename T>
Tensor<T> VisionTransformer<T>::patch_embed(Tape<T>& tape, const Tensor<T>& image) const {
  if (image.ndim() != 3 || image.shape()[0] != config_.channels ||
      image.shape()[1] != config_.image_size || image.shape()[2] != config_.image_size)
    throw ShapeError("patch_embed: image " + detail::shape_str(image.shape()) +
                     " does not match configured geometry");
  Tensor<T> patches = extract_patches(image, config_.patch_size);
  Tensor<T> tok = tape.matmul(patches, embed_w_.tensor());
  if (embed_b_) tok = tape.add_rowwise(tok, embed_b_->tensor());
  return tape.add(tok, pos_.tensor());
}

template <typename T>
Tensor<T> VisionTransformer<T>::multi_head_attention(Tape<T>& tape, const Tensor<T>& tokens,
                                                     size_t encoder,
                                                     AttentionCapture* capture) const {
  const EncoderBlock<T>& blk = encoders_.at(encoder);
  const T inv_sqrt_dk = T(1) / std::sqrt(T(config_.d_key));
  std::vector<Tensor<T>> head_outs;
  head_outs.reserve(blk.heads.size());
  for (const auto& head : blk.heads) {
    Tensor<T> q = tape.matmul(tokens, head.wq.tensor());
    if (head.bq) q = tape.add_rowwise(q, head.bq->tensor());
    Tensor<T> k = tape.matmul(tokens, head.wk.tensor());
    if (head.bk) k = tape.add_rowwise(k, head.bk->tensor());
    Tensor<T> v = tape.matmul(tokens, head.wv.tensor());
    if (head.bv) v = tape.add_rowwise(v, head.bv->tensor());

    Tensor<T> scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk);
    Tensor<T> attn = tape.softmax_rows(scores);
    if (capture) capture->weights.push_back(attn);
    head_outs.push_back(tape.matmul(attn, v));
  }
  Tensor<T> cat = head_outs.size() == 1 ? head_outs[0] : tape.concat(head_outs, 1);
  Tensor<T> out = tape.matmul(cat, blk.attn_out.tensor());
  if (blk.attn_out_bias) out = tape.add_rowwise(out, blk.attn_out_bias->tensor());
  return out;
}

template <typename T>
Tensor<T> VisionTransformer<T>::encoder_forward(Tape<T>& tape, const Tensor<T>& tokens,
                                                size_t encoder, AttentionCapture* capture) const {
  const EncoderBlock<T>& blk = encoders_.at(encoder);
  Tensor<T> h1 =
      tape.layer_norm(tokens, blk.ln1_gain.tensor(), blk.ln1_shift.tensor(), layer_norm_eps);
  Tensor<T> x = tape.add(tokens, multi_head_attention(tape, h1, encoder, capture));

  Tensor<T> h2 = tape.layer_norm(x, blk.ln2_gain.tensor(), blk.ln2_shift.tensor(), layer_norm_eps);
  Tensor<T> f = tape.matmul(h2, blk.ffn_w1.tensor());
  if (blk.ffn_b1) f = tape.add_rowwise(f, blk.ffn_b1->tensor());
  f = tape.gelu(f);
  f = tape.matmul(f, blk.ffn_w2.tensor());
  if (blk.ffn_b2) f = tape.add_rowwise(f, blk.ffn_b2->tensor());
  return tape.add(x, f);
}

template <typename T>
Tensor<T> VisionTransformer<T>::features(Tape<T>& tape, const Tensor<T>& image,
                                         AttentionCapture* capture) const {
  Tensor<T> tok = patch_embed(tape, image);
  for (size_t e = 0; e < encoders_.size(); ++e) tok = encoder_forward(tape, tok, e, capture);
  return tape.mean_rows(tok);
}

template <typename T>
Tensor<T> VisionTransformer<T>::forward(Tape<T>& tape, const Tensor<T>& images,
                                        AttentionCapture* capture) const {
  if (images.ndim() != 4)
    throw ShapeError("forward: expected [B x C x s x s], got " +
                     detail::shape_str(images.shape()));
  const size_t batch = images.shape()[0];
  std::vector<Tensor<T>> pooled;
  pooled.reserve(batch);
  for (size_t b = 0; b < batch; ++b)
    pooled.push_back(features(tape, slice_image(images, b), capture));
  Tensor<T> feats = tape.stack_rows(pooled);
  Tensor<T> logits = tape.matmul(feats, cls_w_.tensor());
  if (cls_b_) logits = tape.add_rowwise(logits, cls_b_->tensor());
  return logits;
}

template class VisionTransformer<float>;
template class VisionTransformer<double>;

}  // namespace vitcap

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "oracles.hpp"
#include "vitcap/image_ops.hpp"
#include "vitcap/rng.hpp"
#include "vitcap/vit.hpp"

using vitcap::DetRng;
using vitcap::ModelConfig;
using vitcap::Parameter;
using vitcap::Tape;
using vitcap::Tensor;
using vitcap::VisionTransformer;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.channels = 1;
  c.d_model = c.d_key = c.d_value = c.d_ff = 4;
  c.heads = 1;
  c.encoders = 1;
  c.classes = 2;
  return c;
}

ModelConfig mnist_dims_config(size_t h, size_t t) {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 2;
  c.channels = 1;
  c.d_model = c.d_key = c.d_value = c.d_ff = 64;
  c.heads = h;
  c.encoders = t;
  c.classes = 10;
  return c;
}

template <typename T>
Tensor<T> random_image(const ModelConfig& c, DetRng& rng) {
  std::vector<T> data(c.channels * c.image_size * c.image_size);
  for (auto& v : data) v = T(rng.uniform01());
  return Tensor<T>::from_data({c.channels, c.image_size, c.image_size}, std::move(data));
}

template <typename T>
Tensor<T> random_batch(const ModelConfig& c, size_t b, DetRng& rng) {
  std::vector<T> data(b * c.channels * c.image_size * c.image_size);
  for (auto& v : data) v = T(rng.uniform01());
  return Tensor<T>::from_data({b, c.channels, c.image_size, c.image_size}, std::move(data));
}

template <typename T>
void fill_param(Parameter<T>& p, T v) {
  auto vals = p.value_mut();
  std::fill(vals.begin(), vals.end(), v);
}

}  // namespace

TEST_CASE("closed-form count matches the worked breakdown") {
  auto b = vitcap::count_params(tiny_config());
  CHECK(b.embedding == 20);
  CHECK(b.positional == 16);
  CHECK(b.attention_per_encoder == 80);
  CHECK(b.ffn_per_encoder == 40);
  CHECK(b.norm_per_encoder == 16);
  CHECK(b.classifier == 10);
  CHECK(b.total == 182);

  auto c2 = tiny_config();
  c2.encoders = 2;
  CHECK(vitcap::count_params(c2).total == 318);
  CHECK(vitcap::count_params(c2).total - b.total == 136);

  auto ch = tiny_config();
  ch.heads = 2;
  const auto bh = vitcap::count_params(ch);
  CHECK(bh.total == 258);
  CHECK(bh.total < 2 * b.total);  // less than proportional to heads
}

TEST_CASE("closed-form count equals enumeration over built models") {
  for (auto cfg : {tiny_config(), mnist_dims_config(2, 3)}) {
    for (bool bias : {true, false}) {
      cfg.use_bias = bias;
      auto model = VisionTransformer<float>::build(cfg, 7);
      CHECK(model.enumerated_param_count() == size_t(vitcap::count_params(cfg).total));
    }
  }
}

TEST_CASE("count equals enumeration across the full head/encoder grid") {
  for (size_t h : {1, 2, 4, 8})
    for (size_t t : {1, 2, 4, 8}) {
      const auto cfg = mnist_dims_config(h, t);
      auto model = VisionTransformer<float>::build(cfg, 11);
      CHECK(model.enumerated_param_count() == size_t(vitcap::count_params(cfg).total));
    }
}

TEST_CASE("parameter count is affine in encoders and sub-linear in heads") {
  long long prev = 0;
  long long increment = 0;
  for (size_t t : {1, 2, 3, 4}) {
    const auto b = vitcap::count_params(mnist_dims_config(4, t));
    if (t > 1) {
      const long long inc = b.total - prev;
      if (t == 2) increment = inc;
      CHECK(inc == increment);  // constant per-encoder increment
      CHECK(inc == b.per_encoder());
    }
    prev = b.total;
  }
  for (size_t h : {1, 2, 4}) {
    const auto p1 = vitcap::count_params(mnist_dims_config(h, 4)).total;
    const auto p2 = vitcap::count_params(mnist_dims_config(2 * h, 4)).total;
    CHECK(p2 < 2 * p1);
    CHECK(p2 > p1);
  }
}

TEST_CASE("build is deterministic in the seed") {
  const auto cfg = tiny_config();
  auto a = VisionTransformer<double>::build(cfg, 42);
  auto b = VisionTransformer<double>::build(cfg, 42);
  auto c = VisionTransformer<double>::build(cfg, 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_differ = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && std::memcmp(pa[i]->value().data(), pb[i]->value().data(),
                                         pa[i]->size() * sizeof(double)) == 0;
    any_differ = any_differ || std::memcmp(pa[i]->value().data(), pc[i]->value().data(),
                                           pa[i]->size() * sizeof(double)) != 0;
  }
  CHECK(all_equal);
  CHECK(any_differ);
}

TEST_CASE("config validation rejects bad geometry") {
  auto c = tiny_config();
  c.patch_size = 3;  // does not divide 4
  CHECK_THROWS_AS(vitcap::count_params(c), vitcap::ConfigError);
  c = tiny_config();
  c.encoders = 0;
  CHECK_THROWS_AS(VisionTransformer<float>::build(c, 1), vitcap::ConfigError);
  c = tiny_config();
  c.classes = 1;
  CHECK_THROWS_AS(vitcap::count_params(c), vitcap::ConfigError);
}

TEST_CASE("patch_embed token counts follow (s/p)^2") {
  DetRng rng(3);
  for (auto [s, expect] : std::vector<std::pair<size_t, size_t>>{{4, 4}, {32, 256}}) {
    ModelConfig c = tiny_config();
    c.image_size = s;
    auto model = VisionTransformer<double>::build(c, 5);
    Tape<double> tp;
    tp.set_recording(false);
    auto tok = model.patch_embed(tp, random_image<double>(c, rng));
    CHECK(tok.rows() == expect);
    CHECK(tok.cols() == c.d_model);
  }
}

TEST_CASE("identity projection with zero position table reproduces flattened patches") {
  // square case: d_model == p*p*C
  const auto cfg = tiny_config();
  auto model = VisionTransformer<double>::build(cfg, 9);
  auto w = model.embed_weight().value_mut();
  std::fill(w.begin(), w.end(), 0.0);
  for (size_t i = 0; i < cfg.d_model; ++i) w[i * cfg.d_model + i] = 1.0;
  // bias and position table are zero at build time already

  DetRng rng(10);
  auto image = random_image<double>(cfg, rng);
  Tape<double> tp;
  tp.set_recording(false);
  auto tok = model.patch_embed(tp, image);
  auto patches = vitcap::extract_patches(image, cfg.patch_size);
  REQUIRE(tok.size() == patches.size());
  for (size_t i = 0; i < tok.size(); ++i)
    CHECK(tok.data()[i] == doctest::Approx(patches.data()[i]).epsilon(1e-12));
}

TEST_CASE("patch_embed rejects geometry mismatches") {
  auto model = VisionTransformer<double>::build(tiny_config(), 1);
  Tape<double> tp;
  CHECK_THROWS_AS(model.patch_embed(tp, Tensor<double>::zeros({1, 6, 6})), vitcap::ShapeError);
}

TEST_CASE("single-token attention ignores queries and keys") {
  ModelConfig c = tiny_config();
  auto model = VisionTransformer<double>::build(c, 21);
  DetRng rng(22);
  std::vector<double> tok(c.d_model);
  for (auto& v : tok) v = rng.uniform(-1, 1);
  auto tokens = Tensor<double>::from_data({1, c.d_model}, tok);

  Tape<double> tp;
  tp.set_recording(false);
  auto out1 = model.multi_head_attention(tp, tokens, 0);

  // changing W_q / W_k must not change a single-key attention output
  for (auto& head : model.encoder_blocks()[0].heads) {
    fill_param(head.wq, 0.731);
    fill_param(head.wk, -0.214);
  }
  auto out2 = model.multi_head_attention(tp, tokens, 0);
  REQUIRE(out1.size() == out2.size());
  for (size_t i = 0; i < out1.size(); ++i)
    CHECK(out1.data()[i] == doctest::Approx(out2.data()[i]).epsilon(1e-12));
}

TEST_CASE("identical tokens give identical attention rows") {
  ModelConfig c = tiny_config();
  c.heads = 2;
  auto model = VisionTransformer<double>::build(c, 23);
  DetRng rng(24);
  std::vector<double> row(c.d_model);
  for (auto& v : row) v = rng.uniform(-1, 1);
  std::vector<double> data;
  for (int i = 0; i < 5; ++i) data.insert(data.end(), row.begin(), row.end());
  auto tokens = Tensor<double>::from_data({5, c.d_model}, data);

  Tape<double> tp;
  tp.set_recording(false);
  auto out = model.multi_head_attention(tp, tokens, 0);
  for (size_t i = 1; i < 5; ++i)
    for (size_t j = 0; j < c.d_model; ++j)
      CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)).epsilon(1e-12));
}

TEST_CASE("attention is permutation-equivariant over tokens") {
  ModelConfig c = tiny_config();
  c.heads = 2;
  auto model = VisionTransformer<double>::build(c, 25);
  DetRng rng(26);
  std::vector<double> data(4 * c.d_model);
  for (auto& v : data) v = rng.uniform(-1, 1);
  auto tokens = Tensor<double>::from_data({4, c.d_model}, data);

  const std::vector<size_t> perm{2, 0, 3, 1};
  std::vector<double> pdata(4 * c.d_model);
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 0; j < c.d_model; ++j) pdata[i * c.d_model + j] = data[perm[i] * c.d_model + j];
  auto permuted = Tensor<double>::from_data({4, c.d_model}, pdata);

  Tape<double> tp;
  tp.set_recording(false);
  auto out = model.multi_head_attention(tp, tokens, 0);
  auto pout = model.multi_head_attention(tp, permuted, 0);
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 0; j < c.d_model; ++j)
      CHECK(pout.at(i, j) == doctest::Approx(out.at(perm[i], j)).epsilon(1e-6));
}

TEST_CASE("attention weights are row-stochastic") {
  ModelConfig c = tiny_config();
  c.heads = 2;
  c.encoders = 2;
  auto model = VisionTransformer<double>::build(c, 27);
  DetRng rng(28);
  Tape<double> tp;
  tp.set_recording(false);
  VisionTransformer<double>::AttentionCapture cap;
  (void)model.features(tp, random_image<double>(c, rng), &cap);
  REQUIRE(cap.weights.size() == c.heads * c.encoders);
  for (const auto& w : cap.weights) {
    for (size_t i = 0; i < w.rows(); ++i) {
      double sum = 0;
      for (size_t j = 0; j < w.cols(); ++j) sum += w.at(i, j);
      CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("zeroed attention and feedforward weights make the encoder an exact identity") {
  ModelConfig c = tiny_config();
  c.heads = 2;
  auto model = VisionTransformer<double>::build(c, 31);
  auto& blk = model.encoder_blocks()[0];
  for (auto& head : blk.heads) {
    fill_param(head.wq, 0.0);
    fill_param(head.wk, 0.0);
    fill_param(head.wv, 0.0);
  }
  fill_param(blk.attn_out, 0.0);
  fill_param(blk.ffn_w1, 0.0);
  fill_param(blk.ffn_w2, 0.0);
  // biases are zero from build

  DetRng rng(32);
  std::vector<double> data(4 * c.d_model);
  for (auto& v : data) v = rng.uniform(-1, 1);
  auto tokens = Tensor<double>::from_data({4, c.d_model}, data);
  Tape<double> tp;
  tp.set_recording(false);
  auto out = model.encoder_forward(tp, tokens, 0);
  CHECK(std::memcmp(out.data().data(), tokens.data().data(), data.size() * sizeof(double)) == 0);
}

TEST_CASE("forward produces [B x M] for the whole head/encoder grid") {
  DetRng rng(33);
  for (size_t h : {1, 2, 4, 8})
    for (size_t t : {1, 2, 4, 8}) {
      const auto cfg = mnist_dims_config(h, t);
      auto model = VisionTransformer<float>::build(cfg, 35);
      Tape<float> tp;
      tp.set_recording(false);
      auto logits = model.forward(tp, random_batch<float>(cfg, 1, rng));
      CHECK(logits.rows() == 1);
      CHECK(logits.cols() == cfg.classes);
    }
}

TEST_CASE("with a zero position table, patch permutation leaves logits unchanged") {
  ModelConfig c = tiny_config();
  c.image_size = 8;
  c.heads = 2;
  c.encoders = 2;
  auto model = VisionTransformer<double>::build(c, 41);

  DetRng rng(42);
  auto image = random_image<double>(c, rng);
  auto patches = vitcap::extract_patches(image, c.patch_size);
  const size_t n = patches.rows(), dim = patches.cols();
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  for (size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<double> pdata(n * dim);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < dim; ++j) pdata[i * dim + j] = patches.data()[perm[i] * dim + j];
  auto shuffled =
      vitcap::reassemble_patches(Tensor<double>::from_data({n, dim}, pdata), c.patch_size,
                                 c.channels, c.image_size);

  Tape<double> tp;
  tp.set_recording(false);

  // with a non-zero position table the logits must differ...
  {
    auto pos = model.position_table().value_mut();
    DetRng prng(43);
    for (auto& v : pos) v = prng.uniform(-1, 1);
    auto base = model.features(tp, image);
    auto moved = model.features(tp, shuffled);
    double diff = 0;
    for (size_t j = 0; j < base.size(); ++j)
      diff = std::max(diff, std::fabs(base.data()[j] - moved.data()[j]));
    CHECK(diff > 1e-4);
  }

  // ...and with a zeroed table they must agree
  {
    auto pos = model.position_table().value_mut();
    std::fill(pos.begin(), pos.end(), 0.0);
    auto base = model.features(tp, image);
    auto moved = model.features(tp, shuffled);
    for (size_t j = 0; j < base.size(); ++j)
      CHECK(base.data()[j] == doctest::Approx(moved.data()[j]).epsilon(1e-5));
  }
}

TEST_CASE("duplicate images in a batch give identical logit rows") {
  ModelConfig c = tiny_config();
  auto model = VisionTransformer<double>::build(c, 51);
  DetRng rng(52);
  auto image = random_image<double>(c, rng);
  std::vector<double> batch;
  batch.insert(batch.end(), image.data().begin(), image.data().end());
  batch.insert(batch.end(), image.data().begin(), image.data().end());
  auto images = Tensor<double>::from_data({2, c.channels, c.image_size, c.image_size}, batch);
  Tape<double> tp;
  tp.set_recording(false);
  auto logits = model.forward(tp, images);
  for (size_t j = 0; j < c.classes; ++j) CHECK(logits.at(0, j) == logits.at(1, j));
}

TEST_CASE("full-model gradient matches central finite differences") {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.channels = 1;
  c.d_model = c.d_key = c.d_value = c.d_ff = 8;
  c.heads = 2;
  c.encoders = 2;
  c.classes = 3;
  auto model = VisionTransformer<double>::build(c, 61);

  DetRng rng(62);
  auto images = random_batch<double>(c, 2, rng);
  const std::vector<int> labels{1, 2};

  model.zero_grad();
  Tape<double> tp;
  tp.backward(tp.cross_entropy(model.forward(tp, images), labels));

  Tape<double> eval;
  eval.set_recording(false);
  auto loss = [&]() { return eval.cross_entropy(model.forward(eval, images), labels).item(); };

  auto params = model.parameters();
  const double worst =
      oracle::fd_check_params<double>(std::span(params.data(), params.size()), loss, 3, 63);
  CHECK(worst < 1e-4);
}

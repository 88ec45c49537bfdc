#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "vitcap/dataset.hpp"
#include "vitcap/image_ops.hpp"
#include "vitcap/rng.hpp"

using vitcap::AugmentationConfig;
using vitcap::DetRng;
using vitcap::ImageDataset;
using vitcap::SyntheticContextConfig;
using vitcap::Tensor;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vitcap-test-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ImageDataset tiny_fixture() {
  ImageDataset d;
  d.count = 2;
  d.channels = 1;
  d.image_size = 3;
  d.pixels = {0, 10, 20, 30, 40, 50, 60, 70, 80, 255, 254, 253, 252, 251, 250, 249, 248, 247};
  d.labels = {1, 0};
  d.class_count = 2;
  d.split = "train";
  return d;
}

template <typename T>
Tensor<T> random_image(size_t c, size_t s, DetRng& rng) {
  std::vector<T> data(c * s * s);
  for (auto& v : data) v = T(rng.uniform01());
  return Tensor<T>::from_data({c, s, s}, std::move(data));
}

}  // namespace

TEST_CASE("IDX fixture round-trips byte-for-byte") {
  TempDir tmp;
  const auto fixture = tiny_fixture();
  vitcap::save_idx_images(fixture, tmp.file("imgs"));
  vitcap::save_idx_labels(fixture, tmp.file("labels"));
  const auto loaded = vitcap::load_mnist_idx(tmp.file("imgs"), tmp.file("labels"));
  CHECK(loaded.count == 2);
  CHECK(loaded.image_size == 3);
  CHECK(loaded.pixels == fixture.pixels);
  CHECK(loaded.labels == fixture.labels);
}

TEST_CASE("IDX loader raises distinct errors") {
  TempDir tmp;
  const auto fixture = tiny_fixture();
  vitcap::save_idx_images(fixture, tmp.file("imgs"));
  vitcap::save_idx_labels(fixture, tmp.file("labels"));

  SUBCASE("label file with an image magic is a magic mismatch") {
    CHECK_THROWS_AS(vitcap::load_mnist_idx(tmp.file("imgs"), tmp.file("imgs")),
                    vitcap::IdxMagicError);
    CHECK_THROWS_AS(vitcap::load_mnist_idx(tmp.file("labels"), tmp.file("labels")),
                    vitcap::IdxMagicError);
  }

  SUBCASE("truncated payload") {
    std::ifstream in(tmp.file("imgs"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(tmp.file("short"), std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() - 3));
    out.close();
    CHECK_THROWS_AS(vitcap::load_mnist_idx(tmp.file("short"), tmp.file("labels")),
                    vitcap::IdxTruncatedError);
  }

  SUBCASE("image/label count mismatch") {
    auto three = tiny_fixture();
    three.count = 3;
    three.pixels.resize(27, 7);
    three.labels = {0, 1, 0};
    vitcap::save_idx_labels(three, tmp.file("labels3"));
    CHECK_THROWS_AS(vitcap::load_mnist_idx(tmp.file("imgs"), tmp.file("labels3")),
                    vitcap::IdxCountMismatchError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(vitcap::load_mnist_idx(tmp.file("nope"), tmp.file("labels")),
                    vitcap::IoError);
  }
}

TEST_CASE("resize: constant image stays constant, same size is identity") {
  Tensor<double> flat = Tensor<double>::full({1, 5, 5}, 0.37);
  auto up = vitcap::resize_bilinear(flat, 9);
  CHECK(up.shape()[1] == 9);
  for (const double v : up.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  DetRng rng(5);
  auto img = random_image<double>(2, 6, rng);
  auto same = vitcap::resize_bilinear(img, 6);
  CHECK(std::memcmp(same.data().data(), img.data().data(), img.size() * sizeof(double)) == 0);
}

TEST_CASE("resize 2x2 checkerboard to 4x4 matches the hand-computed bilinear grid") {
  // half-pixel centers, edge clamp; sources at a = [1, .75, .25, 0] of pixel 0
  auto board = Tensor<double>::from_data({1, 2, 2}, {1, 0, 0, 1});
  auto out = vitcap::resize_bilinear(board, 4);
  const double expected[16] = {1.0,  0.75,  0.25,  0.0,   0.75, 0.625, 0.375, 0.25,
                               0.25, 0.375, 0.625, 0.75,  0.0,  0.25,  0.75,  1.0};
  for (size_t i = 0; i < 16; ++i)
    CHECK(out.data()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("dataset resize 28->32 keeps geometry and label metadata") {
  SyntheticContextConfig cfg;
  cfg.image_size = 28;
  cfg.glyph_size = 5;
  cfg.train_samples = 4;
  cfg.test_samples = 2;
  auto [train, test] = vitcap::synth_context_dataset(cfg);
  auto resized = vitcap::resize_dataset(train, 32);
  CHECK(resized.image_size == 32);
  CHECK(resized.count == train.count);
  CHECK(resized.labels == train.labels);
  CHECK(resized.pixels.size() == train.count * 32 * 32);
}

TEST_CASE("null augmentation parameters are the identity") {
  DetRng rng(9);
  auto img = random_image<float>(1, 8, rng);

  // zero draws with crop fraction 1.0: exact identity
  vitcap::AugmentParams params;  // all zero, crop 1.0
  auto out = vitcap::apply_augment(img, params);
  CHECK(std::memcmp(out.data().data(), img.data().data(), img.size() * sizeof(float)) == 0);

  // zero-factor config draws exactly zero parameters
  AugmentationConfig cfg;
  cfg.translation_x = cfg.translation_y = 0.0;
  cfg.rotation_factor = 0.0;
  cfg.crop_fraction = 1.0;
  DetRng arng(10);
  auto out2 = vitcap::augment(img, cfg, arng);
  CHECK(std::memcmp(out2.data().data(), img.data().data(), img.size() * sizeof(float)) == 0);
}

TEST_CASE("augmentation keeps shape and [0,1] range, deterministically") {
  DetRng rng(11);
  auto img = random_image<float>(1, 16, rng);
  AugmentationConfig cfg;  // paper factors

  DetRng a(123), b(123), c(124);
  auto outa = vitcap::augment(img, cfg, a);
  auto outb = vitcap::augment(img, cfg, b);
  auto outc = vitcap::augment(img, cfg, c);
  CHECK(outa.shape() == img.shape());
  CHECK(std::memcmp(outa.data().data(), outb.data().data(), outa.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(outa.data().data(), outc.data().data(), outa.size() * sizeof(float)) != 0);
  for (const float v : outa.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("augmentation config validation") {
  AugmentationConfig cfg;
  cfg.crop_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), vitcap::ConfigError);
  cfg = {};
  cfg.rotation_factor = 1.0;
  CHECK_THROWS_AS(cfg.validate(), vitcap::ConfigError);
  cfg = {};
  cfg.crop_fraction = 1.0;  // the null-crop case is legal
  CHECK_NOTHROW(cfg.validate());
  cfg = {};
  DetRng rng(1);
  cfg.enabled = false;
  auto img = Tensor<float>::full({1, 4, 4}, 0.5f);
  CHECK_THROWS_AS(vitcap::augment(img, cfg, rng), vitcap::ConfigError);
}

TEST_CASE("patch extraction counts and round trip") {
  DetRng rng(13);
  auto img32 = random_image<double>(1, 32, rng);
  auto p32 = vitcap::extract_patches(img32, 2);
  CHECK(p32.rows() == 256);
  CHECK(p32.cols() == 4);

  auto img128 = random_image<double>(3, 128, rng);
  auto p128 = vitcap::extract_patches(img128, 16);
  CHECK(p128.rows() == 64);
  CHECK(p128.cols() == 768);

  auto back = vitcap::reassemble_patches(p128, 16, 3, 128);
  CHECK(std::memcmp(back.data().data(), img128.data().data(), img128.size() * sizeof(double)) ==
        0);

  CHECK_THROWS_AS(vitcap::extract_patches(img32, 5), vitcap::ShapeError);
}

TEST_CASE("synthetic datasets are deterministic in the seed") {
  SyntheticContextConfig cfg;
  cfg.contextual = true;
  cfg.train_samples = 64;
  cfg.test_samples = 32;
  cfg.seed = 99;
  auto [tr1, te1] = vitcap::synth_context_dataset(cfg);
  auto [tr2, te2] = vitcap::synth_context_dataset(cfg);
  CHECK(tr1.pixels == tr2.pixels);
  CHECK(tr1.labels == tr2.labels);
  CHECK(te1.pixels == te2.pixels);
  cfg.seed = 100;
  auto [tr3, te3] = vitcap::synth_context_dataset(cfg);
  CHECK(tr1.pixels != tr3.pixels);
}

TEST_CASE("non-contextual glyphs: a pixel-count baseline beats chance") {
  SyntheticContextConfig cfg;
  cfg.class_count = 2;
  cfg.contextual = false;
  cfg.train_samples = 400;
  cfg.test_samples = 200;
  cfg.seed = 7;
  auto [train, test] = vitcap::synth_context_dataset(cfg);
  CHECK(train.class_count == 2);

  // per-class mean intensity from the training split
  double mean[2] = {0, 0};
  size_t cnt[2] = {0, 0};
  const size_t stride = train.image_size * train.image_size;
  for (size_t i = 0; i < train.count; ++i) {
    double sum = 0;
    for (size_t j = 0; j < stride; ++j) sum += train.pixels[i * stride + j];
    mean[train.labels[i]] += sum;
    ++cnt[train.labels[i]];
  }
  mean[0] /= double(cnt[0]);
  mean[1] /= double(cnt[1]);

  size_t correct = 0;
  for (size_t i = 0; i < test.count; ++i) {
    double sum = 0;
    for (size_t j = 0; j < stride; ++j) sum += test.pixels[i * stride + j];
    const int pred = std::fabs(sum - mean[0]) <= std::fabs(sum - mean[1]) ? 0 : 1;
    correct += pred == test.labels[i];
  }
  CHECK(double(correct) / double(test.count) > 0.8);
}

TEST_CASE("contextual pair label is XOR for two glyph types") {
  CHECK(vitcap::synth_pair_label(0, 0, 2) == 0);
  CHECK(vitcap::synth_pair_label(0, 1, 2) == 1);
  CHECK(vitcap::synth_pair_label(1, 0, 2) == 1);
  CHECK(vitcap::synth_pair_label(1, 1, 2) == 0);
  // conditioned on either glyph, labels are uniform: a single-glyph
  // classifier is at chance by construction
  for (int cc : {2, 4}) {
    for (int id1 = 0; id1 < cc; ++id1) {
      std::map<int, int> hist;
      for (int id2 = 0; id2 < cc; ++id2) hist[vitcap::synth_pair_label(id1, id2, cc)]++;
      for (const auto& [label, count] : hist) CHECK(count == 1);
      CHECK(int(hist.size()) == cc);
    }
  }
}

TEST_CASE("contextual dataset classes are balanced within 1% at 10k samples") {
  SyntheticContextConfig cfg;
  cfg.class_count = 4;
  cfg.contextual = true;
  cfg.image_size = 16;
  cfg.glyph_size = 4;
  cfg.train_samples = 12000;
  cfg.test_samples = 10;
  cfg.seed = 3;
  auto [train, test] = vitcap::synth_context_dataset(cfg);
  std::map<int, size_t> hist;
  for (const int l : train.labels) hist[l]++;
  for (const auto& [label, count] : hist)
    CHECK(std::fabs(double(count) / double(train.count) - 0.25) < 0.01);
}

TEST_CASE("synthetic splits are disjoint by construction") {
  SyntheticContextConfig cfg;
  cfg.train_samples = 200;
  cfg.test_samples = 200;
  cfg.seed = 17;
  auto [train, test] = vitcap::synth_context_dataset(cfg);
  const size_t stride = cfg.image_size * cfg.image_size;
  for (size_t i = 0; i < train.count; ++i)
    for (size_t j = 0; j < test.count; ++j)
      CHECK(std::memcmp(train.pixels.data() + i * stride, test.pixels.data() + j * stride,
                        stride) != 0);
}

TEST_CASE("synthetic datasets export to IDX and reload") {
  TempDir tmp;
  SyntheticContextConfig cfg;
  cfg.train_samples = 16;
  cfg.test_samples = 4;
  auto [train, test] = vitcap::synth_context_dataset(cfg);
  vitcap::save_idx_images(train, tmp.file("imgs"));
  vitcap::save_idx_labels(train, tmp.file("labels"));
  const auto loaded = vitcap::load_mnist_idx(tmp.file("imgs"), tmp.file("labels"));
  CHECK(loaded.pixels == train.pixels);
  CHECK(loaded.labels == train.labels);
}

TEST_CASE("subset and tensor conversion guard their bounds") {
  const auto d = tiny_fixture();
  CHECK_THROWS_AS(vitcap::subset(d, 3), vitcap::ConfigError);
  CHECK_THROWS_AS(vitcap::image_tensor<float>(d, 2), vitcap::IndexError);
  const auto one = vitcap::subset(d, 1);
  CHECK(one.count == 1);
  CHECK(one.labels == std::vector<int>{1});

  const auto t = vitcap::image_tensor<double>(d, 1);
  CHECK(t.data()[0] == doctest::Approx(1.0));  // pixel 255
  const std::vector<size_t> idx{0, 1};
  const auto batch = vitcap::batch_tensor<double>(d, idx);
  CHECK(batch.shape() == std::vector<size_t>{2, 1, 3, 3});
}

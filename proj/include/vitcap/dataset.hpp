#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vitcap/tensor.hpp"

// Image datasets as 8-bit intensity arrays, normalized to [0,1] floats at
// the point of use. Datasets are immutable after load.

namespace vitcap {

struct ImageDataset {
  size_t count = 0;
  size_t channels = 1;
  size_t image_size = 0;  // square side
  std::vector<uint8_t> pixels;  // count * channels * size * size, row-major
  std::vector<int> labels;      // in [0, class_count)
  int class_count = 0;
  std::string split;  // "train" or "test"

  void validate() const;
};

// IDX containers, bit-exact: 4-byte big-endian magic (0x00000803 for image
// files, 0x00000801 for label files), big-endian dimension sizes, raw
// unsigned bytes. Bad magic, truncation, and count mismatch raise distinct
// errors.
ImageDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);
void save_idx_images(const ImageDataset& data, const std::string& path);
void save_idx_labels(const ImageDataset& data, const std::string& path);

// First n samples, metadata preserved.
ImageDataset subset(const ImageDataset& data, size_t n);

// Bilinear resize of every image (e.g. 28 -> 32), re-quantized to 8 bits.
ImageDataset resize_dataset(const ImageDataset& data, size_t target);

// One image as a [C x s x s] tensor with values in [0, 1].
template <typename T>
Tensor<T> image_tensor(const ImageDataset& data, size_t index);

// Selected images as a [B x C x s x s] tensor.
template <typename T>
Tensor<T> batch_tensor(const ImageDataset& data, std::span<const size_t> indices);

// Synthetic glyph datasets probing how much the label depends on context.
// Non-contextual: one glyph, label = glyph identity. Contextual: two
// non-overlapping glyphs, label = (id1 + id2) mod class_count, so no single
// glyph (patch) determines the class; with two glyph types this is exactly
// XOR. Train/test splits are disjoint by construction (glyph anchor columns
// have split-specific parity).
struct SyntheticContextConfig {
  size_t image_size = 16;
  size_t glyph_size = 4;
  int class_count = 2;  // also the number of glyph types
  bool contextual = false;
  size_t train_samples = 1000;
  size_t test_samples = 200;
  uint64_t seed = 0;

  void validate() const;
};

std::pair<ImageDataset, ImageDataset> synth_context_dataset(const SyntheticContextConfig& cfg);

// Label of a contextual pair: (id1 + id2) mod class_count. Conditioned on
// either single glyph the label is uniform (whenever the ids are), so a
// single-glyph classifier sits at chance; for two types this is XOR.
int synth_pair_label(int id1, int id2, int class_count);

}  // namespace vitcap

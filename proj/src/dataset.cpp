#include "vitcap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vitcap/image_ops.hpp"
#include "vitcap/rng.hpp"

namespace vitcap {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;  // unsigned byte, 3 dimensions
constexpr uint32_t kLabelMagic = 0x00000801;  // unsigned byte, 1 dimension

std::vector<uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t be32(std::span<const uint8_t> bytes, size_t off) {
  return (uint32_t(bytes[off]) << 24) | (uint32_t(bytes[off + 1]) << 16) |
         (uint32_t(bytes[off + 2]) << 8) | uint32_t(bytes[off + 3]);
}

void put_be32(std::ofstream& out, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void ImageDataset::validate() const {
  if (count != labels.size())
    throw IdxCountMismatchError("dataset: " + std::to_string(count) + " images vs " +
                                std::to_string(labels.size()) + " labels");
  if (pixels.size() != count * channels * image_size * image_size)
    throw Error("dataset: pixel buffer does not match geometry");
  for (const int l : labels)
    if (l < 0 || l >= class_count)
      throw IndexError("dataset: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(class_count) + ")");
}

ImageDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ibytes = read_all(images_path);
  if (ibytes.size() < 4) throw IdxTruncatedError(images_path + ": missing IDX magic");
  if (be32(ibytes, 0) != kImageMagic)
    throw IdxMagicError(images_path + ": magic " + std::to_string(be32(ibytes, 0)) +
                        " is not an IDX image file (expected 2051)");
  if (ibytes.size() < 16) throw IdxTruncatedError(images_path + ": missing IDX header");
  const size_t count = be32(ibytes, 4);
  const size_t rows = be32(ibytes, 8);
  const size_t cols = be32(ibytes, 12);
  if (rows != cols) throw IoError(images_path + ": only square images are supported");
  if (ibytes.size() != 16 + count * rows * cols)
    throw IdxTruncatedError(images_path + ": payload is " + std::to_string(ibytes.size() - 16) +
                            " bytes, header declares " + std::to_string(count * rows * cols));

  const auto lbytes = read_all(labels_path);
  if (lbytes.size() < 4) throw IdxTruncatedError(labels_path + ": missing IDX magic");
  if (be32(lbytes, 0) != kLabelMagic)
    throw IdxMagicError(labels_path + ": magic " + std::to_string(be32(lbytes, 0)) +
                        " is not an IDX label file (expected 2049)");
  if (lbytes.size() < 8) throw IdxTruncatedError(labels_path + ": missing IDX header");
  const size_t lcount = be32(lbytes, 4);
  if (lbytes.size() != 8 + lcount)
    throw IdxTruncatedError(labels_path + ": payload is " + std::to_string(lbytes.size() - 8) +
                            " bytes, header declares " + std::to_string(lcount));
  if (count != lcount)
    throw IdxCountMismatchError(images_path + " holds " + std::to_string(count) + " images but " +
                                labels_path + " holds " + std::to_string(lcount) + " labels");

  ImageDataset data;
  data.count = count;
  data.channels = 1;
  data.image_size = rows;
  data.pixels.assign(ibytes.begin() + 16, ibytes.end());
  data.labels.reserve(count);
  int max_label = 0;
  for (size_t i = 0; i < count; ++i) {
    data.labels.push_back(int(lbytes[8 + i]));
    max_label = std::max(max_label, data.labels.back());
  }
  data.class_count = std::max(max_label + 1, 2);
  data.validate();
  return data;
}

void save_idx_images(const ImageDataset& data, const std::string& path) {
  data.validate();
  if (data.channels != 1) throw IoError("IDX export supports single-channel data");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, kImageMagic);
  put_be32(out, uint32_t(data.count));
  put_be32(out, uint32_t(data.image_size));
  put_be32(out, uint32_t(data.image_size));
  out.write(reinterpret_cast<const char*>(data.pixels.data()),
            std::streamsize(data.pixels.size()));
  if (!out) throw IoError("write failed: " + path);
}

void save_idx_labels(const ImageDataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, kLabelMagic);
  put_be32(out, uint32_t(data.count));
  for (const int l : data.labels) {
    const uint8_t b = uint8_t(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw IoError("write failed: " + path);
}

ImageDataset subset(const ImageDataset& data, size_t n) {
  data.validate();
  if (n == 0 || n > data.count)
    throw ConfigError("subset: requested " + std::to_string(n) + " of " +
                      std::to_string(data.count) + " samples");
  ImageDataset out = data;
  out.count = n;
  const size_t stride = data.channels * data.image_size * data.image_size;
  out.pixels.assign(data.pixels.begin(), data.pixels.begin() + std::ptrdiff_t(n * stride));
  out.labels.assign(data.labels.begin(), data.labels.begin() + std::ptrdiff_t(n));
  return out;
}

ImageDataset resize_dataset(const ImageDataset& data, size_t target) {
  data.validate();
  if (target == data.image_size) return data;
  ImageDataset out;
  out.count = data.count;
  out.channels = data.channels;
  out.image_size = target;
  out.labels = data.labels;
  out.class_count = data.class_count;
  out.split = data.split;
  out.pixels.resize(data.count * data.channels * target * target);
  const size_t ostride = data.channels * target * target;
  for (size_t i = 0; i < data.count; ++i) {
    const auto img = image_tensor<float>(data, i);
    const auto resized = resize_bilinear(img, target);
    const auto vals = resized.data();
    for (size_t j = 0; j < ostride; ++j) {
      const float v = vals[j] * 255.0f + 0.5f;
      out.pixels[i * ostride + j] = uint8_t(std::clamp(v, 0.0f, 255.0f));
    }
  }
  return out;
}

template <typename T>
Tensor<T> image_tensor(const ImageDataset& data, size_t index) {
  if (index >= data.count)
    throw IndexError("image_tensor: index " + std::to_string(index) + " out of " +
                     std::to_string(data.count));
  const size_t stride = data.channels * data.image_size * data.image_size;
  std::vector<T> vals(stride);
  const uint8_t* src = data.pixels.data() + index * stride;
  for (size_t i = 0; i < stride; ++i) vals[i] = T(src[i]) / T(255);
  return Tensor<T>::from_data({data.channels, data.image_size, data.image_size}, std::move(vals));
}

template <typename T>
Tensor<T> batch_tensor(const ImageDataset& data, std::span<const size_t> indices) {
  if (indices.empty()) throw ConfigError("batch_tensor: empty index list");
  const size_t stride = data.channels * data.image_size * data.image_size;
  std::vector<T> vals(indices.size() * stride);
  for (size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= data.count)
      throw IndexError("batch_tensor: index " + std::to_string(indices[b]) + " out of " +
                       std::to_string(data.count));
    const uint8_t* src = data.pixels.data() + indices[b] * stride;
    for (size_t i = 0; i < stride; ++i) vals[b * stride + i] = T(src[i]) / T(255);
  }
  return Tensor<T>::from_data(
      {indices.size(), data.channels, data.image_size, data.image_size}, std::move(vals));
}

template Tensor<float> image_tensor<float>(const ImageDataset&, size_t);
template Tensor<double> image_tensor<double>(const ImageDataset&, size_t);
template Tensor<float> batch_tensor<float>(const ImageDataset&, std::span<const size_t>);
template Tensor<double> batch_tensor<double>(const ImageDataset&, std::span<const size_t>);

// ---------------------------------------------------------------------
// synthetic glyph datasets
// ---------------------------------------------------------------------

void SyntheticContextConfig::validate() const {
  if (class_count < 2) throw ConfigError("synthetic dataset: at least two classes");
  // strictly smaller: split-disjoint placement needs anchors of both parities
  if (glyph_size < 1 || glyph_size >= image_size)
    throw ConfigError("synthetic dataset: glyph must fit inside the image with room to move");
  if (contextual && 2 * glyph_size > image_size)
    throw ConfigError("synthetic dataset: two glyphs must fit without overlap");
  if (train_samples == 0 || test_samples == 0)
    throw ConfigError("synthetic dataset: samples per split must be positive");
}

namespace {

// Fixed per-id bitmaps; id determines the on-pixel count so even a
// pixel-count baseline can tell glyph types apart.
std::vector<std::vector<uint8_t>> make_glyphs(const SyntheticContextConfig& cfg) {
  std::vector<std::vector<uint8_t>> glyphs;
  const size_t g = cfg.glyph_size;
  for (int id = 0; id < cfg.class_count; ++id) {
    DetRng rng(seed_mix(cfg.seed, 0x617, uint64_t(id)));
    std::vector<uint8_t> bitmap(g * g, 0);
    const size_t on = std::max<size_t>(1, g * g * size_t(id + 1) / size_t(cfg.class_count + 1));
    size_t placed = 0;
    while (placed < on) {
      const size_t at = size_t(rng.below(g * g));
      if (bitmap[at] == 0) {
        bitmap[at] = 255;
        ++placed;
      }
    }
    glyphs.push_back(std::move(bitmap));
  }
  return glyphs;
}

struct Anchor {
  size_t x = 0, y = 0;
};

// anchor x restricted to a split-specific parity so the splits cannot share
// an image
Anchor draw_anchor(DetRng& rng, size_t image_size, size_t glyph_size, size_t parity) {
  const size_t span = image_size - glyph_size + 1;
  const size_t xs = (span + (parity == 0 ? 1 : 0)) / 2;  // count of anchors with that parity
  Anchor a;
  a.x = 2 * size_t(rng.below(xs)) + parity;
  a.y = size_t(rng.below(span));
  return a;
}

bool overlap(const Anchor& a, const Anchor& b, size_t g) {
  const auto near = [g](size_t u, size_t v) { return (u > v ? u - v : v - u) < g; };
  return near(a.x, b.x) && near(a.y, b.y);
}

void stamp(std::vector<uint8_t>& image, size_t image_size, const std::vector<uint8_t>& glyph,
           size_t g, const Anchor& at) {
  for (size_t dy = 0; dy < g; ++dy)
    for (size_t dx = 0; dx < g; ++dx) {
      const uint8_t v = glyph[dy * g + dx];
      uint8_t& px = image[(at.y + dy) * image_size + (at.x + dx)];
      px = std::max(px, v);
    }
}

ImageDataset make_split(const SyntheticContextConfig& cfg,
                        const std::vector<std::vector<uint8_t>>& glyphs, size_t samples,
                        size_t parity, const char* split_name) {
  ImageDataset data;
  data.count = samples;
  data.channels = 1;
  data.image_size = cfg.image_size;
  data.class_count = cfg.class_count;
  data.split = split_name;
  data.pixels.assign(samples * cfg.image_size * cfg.image_size, 0);
  data.labels.resize(samples);

  DetRng rng(seed_mix(cfg.seed, 0x5A12, parity));
  const size_t g = cfg.glyph_size;
  for (size_t i = 0; i < samples; ++i) {
    std::vector<uint8_t> img(cfg.image_size * cfg.image_size, 0);
    if (!cfg.contextual) {
      const int id = int(rng.below(uint64_t(cfg.class_count)));
      stamp(img, cfg.image_size, glyphs[size_t(id)], g, draw_anchor(rng, cfg.image_size, g, parity));
      data.labels[i] = id;
    } else {
      const int id1 = int(rng.below(uint64_t(cfg.class_count)));
      const int id2 = int(rng.below(uint64_t(cfg.class_count)));
      Anchor a1 = draw_anchor(rng, cfg.image_size, g, parity);
      Anchor a2 = draw_anchor(rng, cfg.image_size, g, parity);
      while (overlap(a1, a2, g)) a2 = draw_anchor(rng, cfg.image_size, g, parity);
      stamp(img, cfg.image_size, glyphs[size_t(id1)], g, a1);
      stamp(img, cfg.image_size, glyphs[size_t(id2)], g, a2);
      data.labels[i] = synth_pair_label(id1, id2, cfg.class_count);
    }
    std::copy(img.begin(), img.end(),
              data.pixels.begin() + std::ptrdiff_t(i * cfg.image_size * cfg.image_size));
  }
  data.validate();
  return data;
}

}  // namespace

int synth_pair_label(int id1, int id2, int class_count) {
  return (id1 + id2) % class_count;
}

std::pair<ImageDataset, ImageDataset> synth_context_dataset(const SyntheticContextConfig& cfg) {
  cfg.validate();
  const auto glyphs = make_glyphs(cfg);
  return {make_split(cfg, glyphs, cfg.train_samples, 0, "train"),
          make_split(cfg, glyphs, cfg.test_samples, 1, "test")};
}

}  // namespace vitcap

#include "vitcap/image_ops.hpp"

#include <cmath>

namespace vitcap {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

template <typename T>
void require_image(const Tensor<T>& image, const char* op) {
  if (image.ndim() != 3 || image.shape()[1] != image.shape()[2])
    throw ShapeError(std::string(op) + ": expected a square [C x s x s] image, got " +
                     detail::shape_str(image.shape()));
}

// bilinear with edge clamp (resize convention)
template <typename T>
T sample_clamp(const T* plane, size_t s, double y, double x) {
  const double cy = std::min(std::max(y, 0.0), double(s - 1));
  const double cx = std::min(std::max(x, 0.0), double(s - 1));
  const size_t y0 = size_t(cy), x0 = size_t(cx);
  const size_t y1 = std::min(y0 + 1, s - 1), x1 = std::min(x0 + 1, s - 1);
  const double fy = cy - double(y0), fx = cx - double(x0);
  const double top = double(plane[y0 * s + x0]) * (1 - fx) + double(plane[y0 * s + x1]) * fx;
  const double bot = double(plane[y1 * s + x0]) * (1 - fx) + double(plane[y1 * s + x1]) * fx;
  return T(top * (1 - fy) + bot * fy);
}

// bilinear with zero fill outside the frame (warp convention)
template <typename T>
T sample_zero(const T* plane, size_t s, double y, double x) {
  const double y0f = std::floor(y), x0f = std::floor(x);
  const long y0 = long(y0f), x0 = long(x0f);
  const double fy = y - y0f, fx = x - x0f;
  auto px = [&](long yy, long xx) -> double {
    if (yy < 0 || xx < 0 || yy >= long(s) || xx >= long(s)) return 0.0;
    return double(plane[size_t(yy) * s + size_t(xx)]);
  };
  const double top = px(y0, x0) * (1 - fx) + px(y0, x0 + 1) * fx;
  const double bot = px(y0 + 1, x0) * (1 - fx) + px(y0 + 1, x0 + 1) * fx;
  return T(top * (1 - fy) + bot * fy);
}

}  // namespace

void AugmentationConfig::validate() const {
  auto factor_ok = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!factor_ok(translation_x) || !factor_ok(translation_y))
    throw ConfigError("augmentation: translation factors must be in [0, 1)");
  if (!factor_ok(rotation_factor))
    throw ConfigError("augmentation: rotation factor must be in [0, 1)");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0))
    throw ConfigError("augmentation: crop fraction must be in (0, 1]");
}

AugmentParams sample_augment_params(const AugmentationConfig& cfg, DetRng& rng,
                                    size_t image_size) {
  cfg.validate();
  const double s = double(image_size);
  AugmentParams p;
  p.dx = rng.uniform(-cfg.translation_x * s, cfg.translation_x * s);
  p.dy = rng.uniform(-cfg.translation_y * s, cfg.translation_y * s);
  p.angle = rng.uniform(-cfg.rotation_factor * kTwoPi, cfg.rotation_factor * kTwoPi);
  p.crop_side_fraction = cfg.crop_fraction;
  const double side = cfg.crop_fraction * s;
  p.crop_x = rng.uniform(0.0, s - side);
  p.crop_y = rng.uniform(0.0, s - side);
  return p;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& image, size_t target) {
  require_image(image, "resize_bilinear");
  if (target == 0) throw ConfigError("resize_bilinear: target must be positive");
  const size_t c = image.shape()[0], s = image.shape()[1];
  if (target == s) return image;  // identity
  const auto src = image.data();
  std::vector<T> out(c * target * target);
  const double scale = double(s) / double(target);
  for (size_t ch = 0; ch < c; ++ch) {
    const T* plane = src.data() + ch * s * s;
    T* oplane = out.data() + ch * target * target;
    for (size_t i = 0; i < target; ++i) {
      const double sy = (double(i) + 0.5) * scale - 0.5;
      for (size_t j = 0; j < target; ++j) {
        const double sx = (double(j) + 0.5) * scale - 0.5;
        oplane[i * target + j] = sample_clamp(plane, s, sy, sx);
      }
    }
  }
  return Tensor<T>::from_data({c, target, target}, std::move(out));
}

template <typename T>
Tensor<T> apply_augment(const Tensor<T>& image, const AugmentParams& params) {
  require_image(image, "apply_augment");
  const size_t c = image.shape()[0], s = image.shape()[1];

  // fast path: identity parameters leave the pixels untouched
  const bool no_shift = params.dx == 0.0 && params.dy == 0.0;
  const bool no_rot = params.angle == 0.0;
  const bool no_crop = params.crop_side_fraction == 1.0 && params.crop_x == 0.0 &&
                       params.crop_y == 0.0;
  if (no_shift && no_rot && no_crop) return image;

  std::vector<T> cur(image.data().begin(), image.data().end());
  std::vector<T> next(cur.size());

  auto warp = [&](auto&& src_of) {
    for (size_t ch = 0; ch < c; ++ch) {
      const T* plane = cur.data() + ch * s * s;
      T* oplane = next.data() + ch * s * s;
      for (size_t i = 0; i < s; ++i)
        for (size_t j = 0; j < s; ++j) {
          const auto [sy, sx] = src_of(double(i), double(j));
          oplane[i * s + j] = sample_zero(plane, s, sy, sx);
        }
    }
    cur.swap(next);
  };

  if (!no_shift)
    warp([&](double y, double x) { return std::pair{y - params.dy, x - params.dx}; });

  if (!no_rot) {
    const double ctr = (double(s) - 1.0) / 2.0;
    const double cosb = std::cos(-params.angle), sinb = std::sin(-params.angle);
    warp([&](double y, double x) {
      const double ry = y - ctr, rx = x - ctr;
      return std::pair{ctr + sinb * rx + cosb * ry, ctr + cosb * rx - sinb * ry};
    });
  }

  if (!no_crop) {
    const double side = params.crop_side_fraction * double(s);
    const double scale = side / double(s);
    warp([&](double y, double x) {
      return std::pair{params.crop_y + (y + 0.5) * scale - 0.5,
                       params.crop_x + (x + 0.5) * scale - 0.5};
    });
  }

  return Tensor<T>::from_data({c, s, s}, std::move(cur));
}

template <typename T>
Tensor<T> augment(const Tensor<T>& image, const AugmentationConfig& cfg, DetRng& rng) {
  if (!cfg.enabled) throw ConfigError("augment: called with augmentation disabled");
  require_image(image, "augment");
  return apply_augment(image, sample_augment_params(cfg, rng, image.shape()[1]));
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, size_t patch) {
  require_image(image, "extract_patches");
  const size_t c = image.shape()[0], s = image.shape()[1];
  if (patch == 0 || s % patch != 0)
    throw ShapeError("extract_patches: patch " + std::to_string(patch) +
                     " does not divide image size " + std::to_string(s));
  const size_t grid = s / patch;
  const size_t dim = patch * patch * c;
  const auto src = image.data();
  std::vector<T> out(grid * grid * dim);
  for (size_t pi = 0; pi < grid; ++pi)
    for (size_t pj = 0; pj < grid; ++pj) {
      T* row = out.data() + (pi * grid + pj) * dim;
      size_t idx = 0;
      for (size_t ch = 0; ch < c; ++ch)
        for (size_t dy = 0; dy < patch; ++dy)
          for (size_t dx = 0; dx < patch; ++dx)
            row[idx++] = src[ch * s * s + (pi * patch + dy) * s + (pj * patch + dx)];
    }
  return Tensor<T>::from_data({grid * grid, dim}, std::move(out));
}

template <typename T>
Tensor<T> reassemble_patches(const Tensor<T>& patches, size_t patch, size_t channels,
                             size_t image_size) {
  if (patches.ndim() != 2)
    throw ShapeError("reassemble_patches: expected [N x p*p*C], got " +
                     detail::shape_str(patches.shape()));
  const size_t grid = image_size / patch;
  const size_t dim = patch * patch * channels;
  if (patch == 0 || image_size % patch != 0 || patches.rows() != grid * grid ||
      patches.cols() != dim)
    throw ShapeError("reassemble_patches: patch grid does not match " +
                     detail::shape_str(patches.shape()));
  const auto src = patches.data();
  std::vector<T> out(channels * image_size * image_size);
  for (size_t pi = 0; pi < grid; ++pi)
    for (size_t pj = 0; pj < grid; ++pj) {
      const T* row = src.data() + (pi * grid + pj) * dim;
      size_t idx = 0;
      for (size_t ch = 0; ch < channels; ++ch)
        for (size_t dy = 0; dy < patch; ++dy)
          for (size_t dx = 0; dx < patch; ++dx)
            out[ch * image_size * image_size + (pi * patch + dy) * image_size +
                (pj * patch + dx)] = row[idx++];
    }
  return Tensor<T>::from_data({channels, image_size, image_size}, std::move(out));
}

template <typename T>
Tensor<T> slice_image(const Tensor<T>& batch, size_t index) {
  if (batch.ndim() != 4)
    throw ShapeError("slice_image: expected [B x C x s x s], got " +
                     detail::shape_str(batch.shape()));
  const size_t b = batch.shape()[0];
  if (index >= b) throw IndexError("slice_image: index " + std::to_string(index) +
                                   " out of batch " + std::to_string(b));
  const size_t stride = batch.shape()[1] * batch.shape()[2] * batch.shape()[3];
  const auto src = batch.data();
  std::vector<T> out(src.begin() + index * stride, src.begin() + (index + 1) * stride);
  return Tensor<T>::from_data({batch.shape()[1], batch.shape()[2], batch.shape()[3]},
                              std::move(out));
}

#define VITCAP_INSTANTIATE(T)                                                              \
  template Tensor<T> resize_bilinear<T>(const Tensor<T>&, size_t);                         \
  template Tensor<T> apply_augment<T>(const Tensor<T>&, const AugmentParams&);             \
  template Tensor<T> augment<T>(const Tensor<T>&, const AugmentationConfig&, DetRng&);     \
  template Tensor<T> extract_patches<T>(const Tensor<T>&, size_t);                         \
  template Tensor<T> reassemble_patches<T>(const Tensor<T>&, size_t, size_t, size_t);      \
  template Tensor<T> slice_image<T>(const Tensor<T>&, size_t);

VITCAP_INSTANTIATE(float)
VITCAP_INSTANTIATE(double)
#undef VITCAP_INSTANTIATE

}  // namespace vitcap

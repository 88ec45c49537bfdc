#pragma once

#include <cstddef>
#include <cstdint>

#include "vitcap/rng.hpp"
#include "vitcap/tensor.hpp"

// Pure image-plane operations on C x s x s tensors with values in [0, 1].
// None of these record on a tape; they prepare data before the model sees it.

namespace vitcap {

struct AugmentationConfig {
  double translation_x = 0.1;  // max shift as a fraction of each dimension
  double translation_y = 0.1;
  double rotation_factor = 0.2;  // fraction of a full turn, angle in +/- factor*2*pi
  double crop_fraction = 0.8;    // side-length fraction of the random crop
  bool enabled = true;

  // translation/rotation factors live in [0,1); crop_fraction in (0,1]
  // (1.0 means no crop, the null-augmentation case).
  void validate() const;
};

// The sampled transform of one augment() call. Applying all-zero params with
// crop_side_fraction 1 is the identity.
struct AugmentParams {
  double dx = 0.0;  // pixels
  double dy = 0.0;
  double angle = 0.0;  // radians, about the image center
  double crop_side_fraction = 1.0;
  double crop_x = 0.0;  // top-left corner of the crop window, pixels
  double crop_y = 0.0;
};

// Draw order is fixed (dx, dy, angle, crop_x, crop_y) so streams are stable.
AugmentParams sample_augment_params(const AugmentationConfig& cfg, DetRng& rng, size_t image_size);

// Bilinear resize to target x target with half-pixel centers and edge clamp.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& image, size_t target);

// Translation, rotation, then crop-and-resize-back; exposed pixels are 0.
// The label of the sample is untouched by contract.
template <typename T>
Tensor<T> apply_augment(const Tensor<T>& image, const AugmentParams& params);

template <typename T>
Tensor<T> augment(const Tensor<T>& image, const AugmentationConfig& cfg, DetRng& rng);

// Non-overlapping p x p patches in row-major patch order, each flattened
// row-major (channel outermost) to length p*p*C. Result is [N x p*p*C].
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, size_t patch);

// Inverse of extract_patches.
template <typename T>
Tensor<T> reassemble_patches(const Tensor<T>& patches, size_t patch, size_t channels,
                             size_t image_size);

// One image of a [B x C x s x s] batch as a standalone [C x s x s] tensor.
template <typename T>
Tensor<T> slice_image(const Tensor<T>& batch, size_t index);

}  // namespace vitcap

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "vitcap/dataset.hpp"
#include "vitcap/image_ops.hpp"
#include "vitcap/vit.hpp"

// Training protocol: AdamW (decoupled weight decay), seeded shuffling,
// per-epoch augmentation of training batches, cross-entropy loss, and an
// unaugmented full-set evaluation at every epoch end. Bit-deterministic
// given (seed, config, dataset).

namespace vitcap {

struct TrainConfig {
  size_t epochs = 100;
  size_t batch_size = 256;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  // training precision; callers dispatch the train<T> instantiation on it
  std::string precision = "f32";
  AugmentationConfig augmentation{};  // enabled by default, training split only
  // parameters whose name contains any of these substrings skip weight decay
  // (off by default: decay applies to matrices and biases uniformly)
  std::vector<std::string> no_decay_patterns;

  void validate() const;
};

struct EpochMetrics {
  size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_loss = 0.0;
  double seconds = 0.0;
};

// Decoupled-weight-decay optimizer. Coefficients beyond lr/wd are the
// standard defaults; bias-corrected update
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
template <typename T>
class AdamW {
 public:
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  AdamW(std::vector<Parameter<T>*> params, double lr, double weight_decay,
        const std::vector<std::string>& no_decay_patterns = {});

  // One update over all parameters from their accumulated gradients.
  // A non-finite gradient aborts with the parameter's name.
  void step();

  size_t step_count() const { return steps_; }

 private:
  struct Slot {
    Parameter<T>* param;
    std::vector<T> m, v;
    bool decay;
  };
  std::vector<Slot> slots_;
  double lr_, wd_;
  size_t steps_ = 0;
};

// Mean cross-entropy over the whole dataset, no augmentation, no gradient
// recording. Per-sample losses are summed in sorted order, so the result is
// independent of dataset ordering and reproducible bit-for-bit.
template <typename T>
double evaluate(const VisionTransformer<T>& model, const ImageDataset& data);

// Runs the full protocol; metrics are appended per epoch and streamed to
// `metrics_log` when given (rows: epoch loss val_loss). A non-finite loss
// aborts naming the epoch and batch index.
template <typename T>
std::vector<EpochMetrics> train(VisionTransformer<T>& model, const ImageDataset& train_set,
                                const ImageDataset& test_set, const TrainConfig& cfg,
                                std::ostream* metrics_log = nullptr);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace vitcap

#include "vitcap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "vitcap/rng.hpp"
#include "vitcap/table.hpp"

namespace vitcap {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train config: batch size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("train config: weight decay must be non-negative");
  if (precision != "f32" && precision != "f64")
    throw ConfigError("train config: precision must be f32 or f64");
  if (augmentation.enabled) augmentation.validate();
}

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, double lr, double weight_decay,
                const std::vector<std::string>& no_decay_patterns)
    : lr_(lr), wd_(weight_decay) {
  slots_.reserve(params.size());
  for (auto* p : params) {
    Slot s;
    s.param = p;
    s.m.assign(p->size(), T(0));
    s.v.assign(p->size(), T(0));
    s.decay = true;
    for (const auto& pat : no_decay_patterns)
      if (p->name().find(pat) != std::string::npos) s.decay = false;
    slots_.push_back(std::move(s));
  }
}

template <typename T>
void AdamW<T>::step() {
  ++steps_;
  const T b1 = T(beta1), b2 = T(beta2), eps = T(epsilon);
  const T bc1 = T(1) - T(std::pow(beta1, double(steps_)));
  const T bc2 = T(1) - T(std::pow(beta2, double(steps_)));
  const T lr = T(lr_);
  for (auto& s : slots_) {
    const auto g = s.param->grad();
    for (const T gv : g)
      if (!(gv * T(0) == T(0)))
        throw TrainError("non-finite gradient in parameter '" + s.param->name() + "'");
    auto theta = s.param->value_mut();
    const T wd = s.decay ? T(wd_) : T(0);
    for (size_t i = 0; i < theta.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (T(1) - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = s.m[i] / bc1;
      const T v_hat = s.v[i] / bc2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps) + lr * wd * theta[i];
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

namespace {

template <typename T>
void require_geometry(const VisionTransformer<T>& model, const ImageDataset& data,
                      const char* what) {
  data.validate();
  const auto& c = model.config();
  if (data.image_size != c.image_size || data.channels != c.channels)
    throw ConfigError(std::string(what) + ": dataset geometry " + std::to_string(data.channels) +
                      "x" + std::to_string(data.image_size) + " does not match model config");
  if (size_t(data.class_count) != c.classes)
    throw ConfigError(std::string(what) + ": dataset has " + std::to_string(data.class_count) +
                      " classes, model expects " + std::to_string(c.classes));
}

// deterministic Fisher-Yates
void shuffle_indices(std::vector<size_t>& idx, DetRng& rng) {
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

template <typename T>
Tensor<T> as_single_batch(const Tensor<T>& image) {
  const auto& s = image.shape();
  return Tensor<T>::from_data({1, s[0], s[1], s[2]},
                              std::vector<T>(image.data().begin(), image.data().end()));
}

}  // namespace

template <typename T>
double evaluate(const VisionTransformer<T>& model, const ImageDataset& data) {
  require_geometry(model, data, "evaluate");
  Tape<T> tape;
  tape.set_recording(false);
  std::vector<double> losses(data.count);
  for (size_t i = 0; i < data.count; ++i) {
    auto logits = model.forward(tape, as_single_batch(image_tensor<T>(data, i)));
    const int label[] = {data.labels[i]};
    losses[i] = double(tape.cross_entropy(logits, label).item());
  }
  // sorted summation: the mean is a function of the loss multiset only
  std::sort(losses.begin(), losses.end());
  double total = 0.0;
  for (const double l : losses) total += l;
  return total / double(data.count);
}

template <typename T>
std::vector<EpochMetrics> train(VisionTransformer<T>& model, const ImageDataset& train_set,
                                const ImageDataset& test_set, const TrainConfig& cfg,
                                std::ostream* metrics_log) {
  cfg.validate();
  require_geometry(model, train_set, "train");
  require_geometry(model, test_set, "train");

  std::vector<EpochMetrics> metrics;
  if (cfg.epochs == 0) return metrics;  // model untouched

  AdamW<T> optimizer(model.parameters(), cfg.learning_rate, cfg.weight_decay,
                     cfg.no_decay_patterns);
  if (metrics_log) (*metrics_log) << "epoch loss val_loss\n" << std::flush;

  std::vector<size_t> order(train_set.count);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  Tape<T> tape;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    DetRng shuffle_rng(seed_mix(cfg.seed, 0x5F1E, epoch));
    shuffle_indices(order, shuffle_rng);

    const size_t batches = (train_set.count + cfg.batch_size - 1) / cfg.batch_size;
    for (size_t b = 0; b < batches; ++b) {
      const size_t begin = b * cfg.batch_size;
      const size_t end = std::min(begin + cfg.batch_size, train_set.count);
      const T inv_batch = T(1) / T(end - begin);
      // one augmentation stream per (seed, epoch, batch)
      DetRng aug_rng(seed_mix(cfg.seed, 0xA06, epoch, b));

      model.zero_grad();
      try {
        for (size_t i = begin; i < end; ++i) {
          Tensor<T> image = image_tensor<T>(train_set, order[i]);
          if (cfg.augmentation.enabled) image = augment(image, cfg.augmentation, aug_rng);
          tape.reset();
          auto logits = model.forward(tape, as_single_batch(image));
          const int label[] = {train_set.labels[order[i]]};
          auto loss = tape.scale(tape.cross_entropy(logits, label), inv_batch);
          tape.backward(loss);
        }
      } catch (const NonFiniteError& e) {
        throw TrainError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b) +
                         ": " + e.what());
      }
      optimizer.step();
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = evaluate(model, train_set);
    em.test_loss = evaluate(model, test_set);
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!(std::isfinite(em.train_loss) && std::isfinite(em.test_loss)))
      throw TrainError("epoch " + std::to_string(em.epoch) + ": non-finite evaluation loss");
    metrics.push_back(em);
    if (metrics_log)
      (*metrics_log) << em.epoch << ' ' << format_float(em.train_loss) << ' '
                     << format_float(em.test_loss) << '\n'
                     << std::flush;
  }
  return metrics;
}

template double evaluate<float>(const VisionTransformer<float>&, const ImageDataset&);
template double evaluate<double>(const VisionTransformer<double>&, const ImageDataset&);
template std::vector<EpochMetrics> train<float>(VisionTransformer<float>&, const ImageDataset&,
                                                const ImageDataset&, const TrainConfig&,
                                                std::ostream*);
template std::vector<EpochMetrics> train<double>(VisionTransformer<double>&, const ImageDataset&,
                                                 const ImageDataset&, const TrainConfig&,
                                                 std::ostream*);

}  // namespace vitcap

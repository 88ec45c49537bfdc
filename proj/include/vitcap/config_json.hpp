#pragma once

#include <json.hpp>

#include "vitcap/dataset.hpp"
#include "vitcap/image_ops.hpp"
#include "vitcap/trainer.hpp"
#include "vitcap/vit.hpp"

// JSON (de)serialization of the configuration records, used by checkpoints,
// run manifests, and the CLI's --config files. Unknown keys are rejected so
// typos in config files fail loudly.

namespace vitcap {

namespace detail_json {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* what) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail_json

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
                     {"channels", c.channels},     {"d_model", c.d_model},
                     {"d_key", c.d_key},           {"d_value", c.d_value},
                     {"d_ff", c.d_ff},             {"heads", c.heads},
                     {"encoders", c.encoders},     {"classes", c.classes},
                     {"use_bias", c.use_bias}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  detail_json::check_keys(j,
                          {"image_size", "patch_size", "channels", "d_model", "d_key", "d_value",
                           "d_ff", "heads", "encoders", "classes", "use_bias"},
                          "model config");
  detail_json::get_if(j, "image_size", c.image_size);
  detail_json::get_if(j, "patch_size", c.patch_size);
  detail_json::get_if(j, "channels", c.channels);
  detail_json::get_if(j, "d_model", c.d_model);
  detail_json::get_if(j, "d_key", c.d_key);
  detail_json::get_if(j, "d_value", c.d_value);
  detail_json::get_if(j, "d_ff", c.d_ff);
  detail_json::get_if(j, "heads", c.heads);
  detail_json::get_if(j, "encoders", c.encoders);
  detail_json::get_if(j, "classes", c.classes);
  detail_json::get_if(j, "use_bias", c.use_bias);
}

inline void to_json(nlohmann::json& j, const AugmentationConfig& c) {
  j = nlohmann::json{{"translation_x", c.translation_x},
                     {"translation_y", c.translation_y},
                     {"rotation_factor", c.rotation_factor},
                     {"crop_fraction", c.crop_fraction},
                     {"enabled", c.enabled}};
}

inline void from_json(const nlohmann::json& j, AugmentationConfig& c) {
  detail_json::check_keys(
      j, {"translation_x", "translation_y", "rotation_factor", "crop_fraction", "enabled"},
      "augmentation config");
  detail_json::get_if(j, "translation_x", c.translation_x);
  detail_json::get_if(j, "translation_y", c.translation_y);
  detail_json::get_if(j, "rotation_factor", c.rotation_factor);
  detail_json::get_if(j, "crop_fraction", c.crop_fraction);
  detail_json::get_if(j, "enabled", c.enabled);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"precision", c.precision},
                     {"augmentation", c.augmentation},
                     {"no_decay_patterns", c.no_decay_patterns}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail_json::check_keys(j,
                          {"epochs", "batch_size", "learning_rate", "weight_decay", "seed",
                           "precision", "augmentation", "no_decay_patterns"},
                          "train config");
  detail_json::get_if(j, "epochs", c.epochs);
  detail_json::get_if(j, "batch_size", c.batch_size);
  detail_json::get_if(j, "learning_rate", c.learning_rate);
  detail_json::get_if(j, "weight_decay", c.weight_decay);
  detail_json::get_if(j, "seed", c.seed);
  detail_json::get_if(j, "precision", c.precision);
  if (j.contains("augmentation")) c.augmentation = j.at("augmentation").get<AugmentationConfig>();
  detail_json::get_if(j, "no_decay_patterns", c.no_decay_patterns);
}

inline void to_json(nlohmann::json& j, const SyntheticContextConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},   {"glyph_size", c.glyph_size},
                     {"class_count", c.class_count}, {"contextual", c.contextual},
                     {"train_samples", c.train_samples}, {"test_samples", c.test_samples},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticContextConfig& c) {
  detail_json::check_keys(j,
                          {"image_size", "glyph_size", "class_count", "contextual",
                           "train_samples", "test_samples", "seed"},
                          "synthetic dataset config");
  detail_json::get_if(j, "image_size", c.image_size);
  detail_json::get_if(j, "glyph_size", c.glyph_size);
  detail_json::get_if(j, "class_count", c.class_count);
  detail_json::get_if(j, "contextual", c.contextual);
  detail_json::get_if(j, "train_samples", c.train_samples);
  detail_json::get_if(j, "test_samples", c.test_samples);
  detail_json::get_if(j, "seed", c.seed);
}

}  // namespace vitcap

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cl3r/geometry.hpp"
#include "cl3r/losses.hpp"
#include "cl3r/model.hpp"
#include "cl3r/optimizer.hpp"
#include "cl3r/patching.hpp"

namespace cl3r {

constexpr int kConfigVersion = 1;

enum class Precision { float32, float64 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.05;
  AdamConfig optimizer{0.9, 0.999, 1e-8, 0.05};
  std::uint64_t seed = 0;
  int num_points = 1024;  // encoder input size after fusion
  LossWeights weights;
  PatchConfig patch;
  ModelConfig model;
  FusionPolicy fusion;
  bool disable_mae = false;
  bool disable_contrastive = false;
  Precision precision = Precision::float32;
  int checkpoint_interval = 0;  // 0: max(1, steps / 10)
  int holdout_stride = 8;       // scene_id % stride == stride - 1 is held out; 0 disables
  std::vector<std::string> frozen_prefixes;
  int threads = 1;

  void validate() const;
  int resolved_checkpoint_interval() const { return checkpoint_interval > 0 ? checkpoint_interval : std::max(1, steps / 10); }
};

nlohmann::json to_json(const TrainConfig& c);
// Starts from `base` and overrides every key present; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

bool is_heldout(int scene_id, int holdout_stride);

}  // namespace cl3r

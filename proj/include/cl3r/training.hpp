#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "cl3r/checkpoint.hpp"
#include "cl3r/config.hpp"
#include "cl3r/datagen.hpp"
#include "cl3r/losses.hpp"
#include "cl3r/model.hpp"
#include "cl3r/optimizer.hpp"
#include "cl3r/patching.hpp"

namespace cl3r {

// Everything a sample contributes to one step, before any tensor work.
struct PreparedSample {
  FusedCloud fused;      // fused views, pre-downsampling
  PatchSet patches;
  MaskSpec mask;
  int image_view = 0;    // which teacher image embedding is the positive
};

PreparedSample prepare_sample(const SceneSample& sample, const TrainConfig& config, std::uint64_t sample_seed);

// Seed of batch slot `slot` at optimizer step `step`.
std::uint64_t sample_seed(std::uint64_t run_seed, std::int64_t step, int slot);

// Deterministic epoch-shuffled batches over a fixed index list; a trailing partial batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> indices, int batch_size, std::uint64_t seed);
  std::vector<int> next();

 private:
  void reshuffle();

  std::vector<int> indices_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
};

template <typename S>
struct TrainState {
  Model<S> model;
  AdamState<S> optimizer;
  std::int64_t step = 0;  // completed steps

  explicit TrainState(Model<S> m) : model(std::move(m)), optimizer(AdamState<S>::zeros(model.params())) {}
};

// One optimizer update. Throws NumericError with parameters untouched if the loss or any
// gradient is non-finite. Gradients are left in the parameter store for inspection.
template <typename S>
LossReport pretrain_step(TrainState<S>& state, const std::vector<const SceneSample*>& batch, const TrainConfig& config);

// Builds the step's loss graph without updating anything.
template <typename S>
LossReport evaluate_step_loss(Model<S>& model, const std::vector<const SceneSample*>& batch, const TrainConfig& config,
                              std::int64_t step, bool backward);

struct PretrainOptions {
  std::optional<std::filesystem::path> checkpoint_path;  // rewritten every interval and at the end
  std::ostream* metrics = nullptr;                       // one JSON record per step
  std::ostream* log = nullptr;                           // warnings and progress
  std::optional<ad::ParameterStore<float>> initial;      // start from these parameters instead of a fresh init
  int log_every = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<LossReport> reports;
};

nlohmann::json metrics_record(std::int64_t step, const LossReport& r);

std::vector<int> training_indices(const std::vector<SceneSample>& dataset, int holdout_stride);
std::vector<int> heldout_indices(const std::vector<SceneSample>& dataset, int holdout_stride);

PretrainResult pretrain(const std::vector<SceneSample>& dataset, const TrainConfig& config, const PretrainOptions& options = {});

// Float32 model stored in a checkpoint.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

extern template LossReport pretrain_step<float>(TrainState<float>&, const std::vector<const SceneSample*>&, const TrainConfig&);
extern template LossReport pretrain_step<double>(TrainState<double>&, const std::vector<const SceneSample*>&, const TrainConfig&);
extern template LossReport evaluate_step_loss<float>(Model<float>&, const std::vector<const SceneSample*>&, const TrainConfig&,
                                                     std::int64_t, bool);
extern template LossReport evaluate_step_loss<double>(Model<double>&, const std::vector<const SceneSample*>&, const TrainConfig&,
                                                      std::int64_t, bool);

}  // namespace cl3r

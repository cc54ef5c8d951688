#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cl3r/config.hpp"
#include "cl3r/datagen.hpp"
#include "cl3r/model.hpp"

namespace cl3r {

// Frozen-encoder outputs for one fused view subset.
struct EncodedScene {
  Eigen::VectorXd pooled;     // E
  Eigen::VectorXd embedding;  // teacher_dim, unit norm
  Eigen::MatrixXd per_patch;  // n x E
  std::vector<int> views;
};

// Fuses `views` in the robot frame, downsamples to config.num_points and runs the full encoder.
EncodedScene encode_scene(Model<float>& model, const SceneSample& sample, std::span<const int> views, const TrainConfig& config,
                          std::uint64_t seed);
EncodedScene encode_scene(Model<float>& model, const SceneSample& sample, const TrainConfig& config, std::uint64_t seed);

// Mean masked-patch Chamfer over `indices`, each scene masked `repeats` times with fixed seeds.
double evaluate_reconstruction(Model<float>& model, const std::vector<SceneSample>& dataset, const std::vector<int>& indices,
                               const TrainConfig& config, std::uint64_t seed, int repeats = 2);

// In-batch point -> image top-1 on consecutive batches (scene-id order) of `batch_size`.
double evaluate_retrieval(Model<float>& model, const std::vector<SceneSample>& dataset, const std::vector<int>& indices,
                          const TrainConfig& config, int batch_size, std::uint64_t seed, int repeats = 1);

struct ProbeConfig {
  int hidden = 64;
  int steps = 1500;
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  bool zero_state = false;  // replace the robot-state channel with zeros
  int holdout_stride = 8;
};

struct ProbeReport {
  double train_mse = 0;          // position, m^2 (squared Euclidean error)
  double heldout_mse = 0;
  double heldout_yaw_error = 0;  // mean absolute wrapped error, radians
  double target_variance = 0;    // held-out mean squared distance to the training mean position
  int train_count = 0;
  int heldout_count = 0;
};

// Trains a 2-layer head on [pooled feature, robot state] -> (position, sin yaw, cos yaw).
ProbeReport probe(Model<float>& encoder, const std::vector<SceneSample>& dataset, const TrainConfig& data_config,
                  const ProbeConfig& config);

struct ViewShiftConfig {
  int gallery_size = 16;
  std::uint64_t seed = 0;
  int holdout_stride = 8;          // gallery is drawn from held-out scenes; 0 draws from all
  bool identical_subsets = false;  // B = A
};

struct ViewShiftReport {
  double top1 = 0;
  std::vector<int> scene_ids;
};

ViewShiftReport view_shift_eval(Model<float>& model, const std::vector<SceneSample>& dataset, const TrainConfig& data_config,
                                const ViewShiftConfig& config);

// Per scene: embedding.bin (teacher_dim float32), patch_features.bin (n x E float32), features.json.
void export_features(Model<float>& model, const std::vector<SceneSample>& dataset, const TrainConfig& config,
                     const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace cl3r

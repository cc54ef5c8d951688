#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "cl3r/geometry.hpp"
#include "cl3r/rng.hpp"

namespace cl3r {

struct PatchConfig {
  int n = 32;       // number of FPS centers
  int k_nn = 16;    // neighbors per patch
  double mask_ratio_min = 0.60;
  double mask_ratio_max = 0.80;

  void validate() const;
};

struct FpsResult {
  std::vector<Eigen::Index> indices;
  Points centers;
};

// Greedy farthest point sampling; the first pick comes from `rng` unless `first` is given.
// Argmax ties go to the lowest index.
FpsResult fps(const Points& cloud, int n, Rng& rng, std::optional<Eigen::Index> first = std::nullopt);

struct PatchSet {
  Points centers;                          // n x 3
  std::vector<Points> patches;             // n entries of k_nn x 3, center-relative
  std::vector<std::vector<Eigen::Index>> source_indices;  // n x k_nn

  int size() const { return static_cast<int>(patches.size()); }
  int k_nn() const { return patches.empty() ? 0 : static_cast<int>(patches.front().rows()); }
};

// Nearest neighbors by Euclidean distance, ties by lowest index, stored relative to each center.
PatchSet knn_patches(const Points& cloud, const Points& centers, int k_nn);

struct MaskSpec {
  std::vector<int> masked;   // sorted
  std::vector<int> visible;  // sorted
  double ratio = 0.0;        // the drawn m
  int n = 0;
};

// Draws m ~ U[min, max] and masks round(m * n) patches uniformly without replacement.
MaskSpec sample_mask(int n, const PatchConfig& config, Rng& rng);
// Masks min(round(ratio * n), n - 1) patches; ratio = 0 gives an all-visible mask.
MaskSpec sample_mask_with_ratio(int n, double ratio, Rng& rng);

struct PatchSubset {
  std::vector<int> indices;  // positions in the parent PatchSet
  Points centers;
  std::vector<Points> patches;

  int size() const { return static_cast<int>(patches.size()); }
};

struct SplitPatches {
  PatchSubset visible;
  PatchSubset masked;
};

SplitPatches split(const PatchSet& patches, const MaskSpec& mask);

PatchSubset select(const PatchSet& patches, const std::vector<int>& indices);

}  // namespace cl3r

#include "cl3r/patching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cl3r/error.hpp"

namespace cl3r {

void PatchConfig::validate() const {
  if (n < 1) throw InvalidArgument("patch config: n must be >= 1");
  if (k_nn < 1) throw InvalidArgument("patch config: k_nn must be >= 1");
  if (!(mask_ratio_min > 0.0 && mask_ratio_max < 1.0 && mask_ratio_min <= mask_ratio_max)) {
    throw InvalidArgument("patch config: mask ratio range must be ordered and inside (0, 1)");
  }
}

FpsResult fps(const Points& cloud, int n, Rng& rng, std::optional<Eigen::Index> first) {
  const Eigen::Index count = cloud.rows();
  if (n < 1) throw InvalidArgument("fps: n must be >= 1");
  if (n > count) {
    throw InvalidArgument("fps: n=" + std::to_string(n) + " exceeds cloud size " + std::to_string(count));
  }
  Eigen::Index current = first ? *first : static_cast<Eigen::Index>(uniform_index(rng, 0, static_cast<std::uint64_t>(count - 1)));
  if (current < 0 || current >= count) throw InvalidArgument("fps: first index out of range");

  FpsResult out;
  out.indices.reserve(static_cast<std::size_t>(n));
  Eigen::VectorXd min_dist = Eigen::VectorXd::Constant(count, std::numeric_limits<double>::infinity());
  for (int s = 0; s < n; ++s) {
    out.indices.push_back(current);
    if (s + 1 == n) break;
    const Eigen::RowVector3d c = cloud.row(current);
    Eigen::Index best = 0;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < count; ++i) {
      const double d = (cloud.row(i) - c).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best_d) {
        best_d = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  out.centers.resize(n, 3);
  for (int s = 0; s < n; ++s) out.centers.row(s) = cloud.row(out.indices[static_cast<std::size_t>(s)]);
  return out;
}

PatchSet knn_patches(const Points& cloud, const Points& centers, int k_nn) {
  if (centers.rows() == 0) throw InvalidArgument("knn_patches: empty center set");
  if (k_nn < 1 || k_nn > cloud.rows()) {
    throw InvalidArgument("knn_patches: k_nn=" + std::to_string(k_nn) + " outside [1, " +
                          std::to_string(cloud.rows()) + "]");
  }
  PatchSet out;
  out.centers = centers;
  const Eigen::Index count = cloud.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  Eigen::VectorXd dist(count);
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const Eigen::RowVector3d center = centers.row(c);
    for (Eigen::Index i = 0; i < count; ++i) dist[i] = (cloud.row(i) - center).squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    const auto closer = [&](Eigen::Index a, Eigen::Index b) {
      return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + k_nn, order.end(), closer);

    Points patch(k_nn, 3);
    std::vector<Eigen::Index> source(order.begin(), order.begin() + k_nn);
    for (int j = 0; j < k_nn; ++j) patch.row(j) = cloud.row(source[static_cast<std::size_t>(j)]) - center;
    out.patches.push_back(std::move(patch));
    out.source_indices.push_back(std::move(source));
  }
  return out;
}

MaskSpec sample_mask_with_ratio(int n, double ratio, Rng& rng) {
  if (n < 1) throw InvalidArgument("sample_mask: n must be >= 1");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw InvalidArgument("sample_mask: ratio must be in [0, 1)");
  // At least one patch stays visible so the encoder always has input.
  const int masked_count = std::min(static_cast<int>(std::lround(ratio * n)), n - 1);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < masked_count; ++i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(n - 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  MaskSpec out;
  out.n = n;
  out.ratio = ratio;
  out.masked.assign(order.begin(), order.begin() + masked_count);
  out.visible.assign(order.begin() + masked_count, order.end());
  std::sort(out.masked.begin(), out.masked.end());
  std::sort(out.visible.begin(), out.visible.end());
  return out;
}

MaskSpec sample_mask(int n, const PatchConfig& config, Rng& rng) {
  config.validate();
  if (n < 2) throw InvalidArgument("sample_mask: n must be >= 2");
  const double m = uniform(rng, config.mask_ratio_min, config.mask_ratio_max);
  return sample_mask_with_ratio(n, m, rng);
}

PatchSubset select(const PatchSet& patches, const std::vector<int>& indices) {
  PatchSubset out;
  out.indices = indices;
  out.centers.resize(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= patches.size()) {
      throw InvalidArgument("split: patch index " + std::to_string(idx) + " out of range [0, " +
                            std::to_string(patches.size()) + ")");
    }
    out.centers.row(static_cast<Eigen::Index>(i)) = patches.centers.row(idx);
    out.patches.push_back(patches.patches[static_cast<std::size_t>(idx)]);
  }
  return out;
}

SplitPatches split(const PatchSet& patches, const MaskSpec& mask) {
  if (mask.n != patches.size() ||
      mask.masked.size() + mask.visible.size() != static_cast<std::size_t>(patches.size())) {
    throw InvalidArgument("split: mask covers " + std::to_string(mask.n) + " patches, patch set has " +
                          std::to_string(patches.size()));
  }
  SplitPatches out{select(patches, mask.visible), select(patches, mask.masked)};
  std::vector<char> seen(static_cast<std::size_t>(patches.size()), 0);
  for (const auto* set : {&mask.visible, &mask.masked}) {
    for (int idx : *set) {
      if (seen[static_cast<std::size_t>(idx)]++) throw InvalidArgument("split: mask index sets overlap");
    }
  }
  return out;
}

}  // namespace cl3r

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "cl3r/error.hpp"
#include "cl3r/patching.hpp"
#include "cl3r/verify.hpp"

using namespace cl3r;

namespace {

Points random_cloud(Rng& rng, int n) {
  Points p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = uniform(rng, -1, 1);
  return p;
}

double min_pairwise(const Points& p) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = i + 1; j < p.rows(); ++j) best = std::min(best, (p.row(i) - p.row(j)).squaredNorm());
  return best;
}

}  // namespace

TEST_SUITE("patching") {

TEST_CASE("fps selects both points of a pair") {
  Points p(2, 3);
  p << 0, 0, 0, 1, 1, 1;
  Rng rng = make_rng(0);
  auto r = fps(p, 2, rng);
  std::sort(r.indices.begin(), r.indices.end());
  CHECK(r.indices == std::vector<Eigen::Index>{0, 1});
}

TEST_CASE("fps picks the farthest point second") {
  Points p(3, 3);
  p << 0, 0, 0, 0.1, 0, 0, 10, 0, 0;
  Rng rng = make_rng(0);
  const auto r = fps(p, 2, rng, 0);
  CHECK(r.indices == std::vector<Eigen::Index>{0, 2});
  CHECK(r.centers.row(1) == Eigen::RowVector3d(10, 0, 0));
}

TEST_CASE("fps is deterministic and matches the greedy oracle") {
  Rng gen = make_rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Points cloud = random_cloud(gen, 64);
    Rng a = make_rng(static_cast<std::uint64_t>(trial)), b = make_rng(static_cast<std::uint64_t>(trial));
    const auto ra = fps(cloud, 12, a);
    const auto rb = fps(cloud, 12, b);
    CHECK(ra.indices == rb.indices);
    CHECK(ra.indices == verify::fps_oracle(cloud, 12, ra.indices.front()));
  }
}

TEST_CASE("fps breaks ties by lowest index") {
  Points p(5, 3);
  p << 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0;
  Rng rng = make_rng(0);
  CHECK(fps(p, 3, rng, 0).indices == std::vector<Eigen::Index>{0, 1, 2});
}

TEST_CASE("fps min pairwise distance is non-increasing in n") {
  Rng gen = make_rng(23);
  const Points cloud = random_cloud(gen, 128);
  double previous = std::numeric_limits<double>::infinity();
  for (int n = 2; n <= 32; ++n) {
    Rng rng = make_rng(0);
    const auto r = fps(cloud, n, rng, 5);
    const double d = min_pairwise(r.centers);
    CHECK(d <= previous);
    previous = d;
  }
}

TEST_CASE("fps rejects oversized requests") {
  Points p = Points::Zero(3, 3);
  Rng rng = make_rng(0);
  CHECK_THROWS_AS(fps(p, 4, rng), InvalidArgument);
  CHECK_THROWS_AS(fps(p, 0, rng), InvalidArgument);
}

TEST_CASE("knn with k=1 is the center itself") {
  Rng gen = make_rng(2);
  const Points cloud = random_cloud(gen, 40);
  Rng rng = make_rng(0);
  const auto centers = fps(cloud, 6, rng);
  const auto ps = knn_patches(cloud, centers.centers, 1);
  for (int i = 0; i < ps.size(); ++i) {
    CHECK(ps.patches[static_cast<std::size_t>(i)].row(0) == Eigen::RowVector3d::Zero());
    CHECK(ps.source_indices[static_cast<std::size_t>(i)][0] == centers.indices[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("knn exhaustive example") {
  Points cloud(3, 3);
  cloud << 0, 0, 0, 1, 0, 0, 5, 0, 0;
  Points center(1, 3);
  center << 0, 0, 0;
  const auto ps = knn_patches(cloud, center, 2);
  CHECK(ps.patches[0].row(0) == Eigen::RowVector3d(0, 0, 0));
  CHECK(ps.patches[0].row(1) == Eigen::RowVector3d(1, 0, 0));
}

TEST_CASE("knn reconstructs source points and matches the sort oracle") {
  Rng gen = make_rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Points cloud = random_cloud(gen, 100);
    Rng rng = make_rng(static_cast<std::uint64_t>(trial));
    const auto centers = fps(cloud, 8, rng);
    const auto ps = knn_patches(cloud, centers.centers, 10);
    CHECK(ps.k_nn() == 10);
    for (int i = 0; i < ps.size(); ++i) {
      const auto& idx = ps.source_indices[static_cast<std::size_t>(i)];
      CHECK(idx == verify::knn_oracle(cloud, centers.centers.row(i).transpose(), 10));
      for (int j = 0; j < 10; ++j) {
        const Eigen::RowVector3d rebuilt = centers.centers.row(i) + ps.patches[static_cast<std::size_t>(i)].row(j);
        CHECK((rebuilt - cloud.row(idx[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff() < 1e-9);
      }
    }
  }
}

TEST_CASE("knn rejects bad inputs") {
  Points cloud = Points::Zero(3, 3);
  CHECK_THROWS_AS(knn_patches(cloud, Points(0, 3), 1), InvalidArgument);
  CHECK_THROWS_AS(knn_patches(cloud, Points::Zero(1, 3), 4), InvalidArgument);
}

TEST_CASE("mask counts") {
  Rng rng = make_rng(0);
  const auto m10 = sample_mask_with_ratio(10, 0.70, rng);
  CHECK(m10.masked.size() == 7);
  CHECK(m10.visible.size() == 3);
  const auto m4 = sample_mask_with_ratio(4, 0.75, rng);
  CHECK(m4.masked.size() == 3);
  CHECK(m4.visible.size() == 1);
}

TEST_CASE("mask is deterministic and partitions the index set") {
  PatchConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng a = make_rng(seed), b = make_rng(seed);
    const auto ma = sample_mask(32, cfg, a);
    const auto mb = sample_mask(32, cfg, b);
    CHECK(ma.masked == mb.masked);
    CHECK(ma.ratio >= cfg.mask_ratio_min);
    CHECK(ma.ratio <= cfg.mask_ratio_max);
    CHECK(static_cast<long>(ma.masked.size()) == std::lround(ma.ratio * 32));
    std::vector<int> all(ma.masked);
    all.insert(all.end(), ma.visible.begin(), ma.visible.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expect(32);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
    CHECK(std::is_sorted(ma.masked.begin(), ma.masked.end()));
  }
}

TEST_CASE("mask config validation") {
  PatchConfig cfg;
  cfg.mask_ratio_min = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.mask_ratio_min = 0.9;
  cfg.mask_ratio_max = 0.8;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.mask_ratio_min = 0.6;
  cfg.mask_ratio_max = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  Rng rng = make_rng(0);
  CHECK_THROWS_AS(sample_mask(1, PatchConfig{}, rng), InvalidArgument);
}

TEST_CASE("split shapes and partition") {
  Rng gen = make_rng(41);
  const Points cloud = random_cloud(gen, 64);
  Rng rng = make_rng(0);
  const auto ps = knn_patches(cloud, fps(cloud, 8, rng).centers, 5);

  const auto none = split(ps, sample_mask_with_ratio(8, 0.0, rng));
  CHECK(none.visible.size() == 8);
  CHECK(none.masked.size() == 0);

  const auto mask = sample_mask_with_ratio(8, 0.75, rng);
  REQUIRE(mask.masked.size() == 6);
  const auto parts = split(ps, mask);
  CHECK(parts.visible.size() == 2);
  CHECK(parts.masked.size() == 6);
  CHECK(parts.visible.patches[0].rows() == 5);
  CHECK(parts.masked.centers.rows() == 6);

  std::vector<std::pair<int, Points>> merged;
  for (const auto* sub : {&parts.visible, &parts.masked})
    for (int i = 0; i < sub->size(); ++i) merged.emplace_back(sub->indices[static_cast<std::size_t>(i)], sub->patches[static_cast<std::size_t>(i)]);
  std::sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (int i = 0; i < 8; ++i) {
    CHECK(merged[static_cast<std::size_t>(i)].first == i);
    CHECK(merged[static_cast<std::size_t>(i)].second == ps.patches[static_cast<std::size_t>(i)]);
  }

  MaskSpec bad = mask;
  bad.masked.back() = 99;
  CHECK_THROWS_AS(split(ps, bad), InvalidArgument);
}

}  // TEST_SUITE

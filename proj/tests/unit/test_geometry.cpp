#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "cl3r/datagen.hpp"
#include "cl3r/error.hpp"
#include "cl3r/geometry.hpp"

using namespace cl3r;

namespace {

CameraModel pinhole(int w, int h, double f, double c) {
  CameraModel cam;
  cam.width = w;
  cam.height = h;
  cam.fx = cam.fy = f;
  cam.cx = cam.cy = c;
  return cam;
}

std::vector<std::array<double, 3>> sorted_rows(const Points& p) {
  std::vector<std::array<double, 3>> rows;
  for (Eigen::Index i = 0; i < p.rows(); ++i) rows.push_back({p(i, 0), p(i, 1), p(i, 2)});
  std::sort(rows.begin(), rows.end());
  return rows;
}

bool contains_row(const Points& p, const Eigen::RowVector3d& q) {
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (p.row(i) == q) return true;
  return false;
}

std::vector<View> scene_views(std::uint64_t seed, int views) {
  GeneratorConfig gen;
  gen.views = views;
  gen.width = gen.height = 32;
  const SceneSpec scene = generate_scene(seed, gen);
  std::vector<View> out;
  for (const auto& cam : generate_rig(seed, gen)) out.push_back({render_depth(scene, cam), cam});
  return out;
}

Eigen::Matrix3d rotation_z(double angle) { return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("backproject principal ray") {
  DepthImage d(1, 1);
  d.at(0, 0) = 2.0f;
  const auto pc = backproject_depth(d, pinhole(1, 1, 1.0, 0.0));
  REQUIRE(pc.size() == 1);
  CHECK(pc.points.row(0) == Eigen::RowVector3d(0, 0, 2.0));
  CHECK(pc.frame == Frame::camera_frame(0));
}

TEST_CASE("backproject pinhole formula") {
  DepthImage d(3, 2);
  d.at(2, 1) = 4.0f;
  const auto pc = backproject_depth(d, pinhole(3, 2, 2.0, 1.0));
  REQUIRE(pc.size() == 1);
  CHECK(pc.points(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(pc.points(0, 1) == doctest::Approx(0.0));
  CHECK(pc.points(0, 2) == doctest::Approx(4.0));
}

TEST_CASE("backproject drops invalid depth") {
  DepthImage d(2, 2);
  d.at(0, 0) = 0.0f;
  d.at(1, 0) = -1.0f;
  d.at(0, 1) = std::nanf("");
  d.at(1, 1) = INFINITY;
  CHECK(backproject_depth(d, pinhole(2, 2, 1.0, 0.5)).empty());
}

TEST_CASE("backproject rejects mismatched raster") {
  DepthImage d(4, 4);
  CHECK_THROWS_AS(backproject_depth(d, pinhole(3, 4, 1.0, 1.0)), InvalidArgument);
}

TEST_CASE("camera validation") {
  CHECK_THROWS_AS(pinhole(4, 4, 0.0, 1.0).validate(), InvalidArgument);
  CHECK_THROWS_AS(pinhole(4, 4, 1.0, 4.0).validate(), InvalidArgument);
  CHECK_NOTHROW(pinhole(4, 4, 1.0, 3.5).validate());
}

TEST_CASE("rigid transform rejects non-rotations") {
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(0, 0) = -1;
  CHECK_THROWS_AS(RigidTransform(reflect, Eigen::Vector3d::Zero()), InvalidArgument);
  CHECK_THROWS_AS(RigidTransform(2.0 * Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()), InvalidArgument);
  Eigen::Matrix4d bad = Eigen::Matrix4d::Identity();
  bad(3, 0) = 1;
  CHECK_THROWS_AS(RigidTransform::from_matrix(bad), InvalidArgument);
}

TEST_CASE("to_robot_frame examples") {
  PointCloud pc{Points(1, 3), Frame::camera_frame(0)};
  pc.points << 1, 0, 0;
  CHECK(to_robot_frame(pc, RigidTransform::identity()).points == pc.points);

  pc.points << 0, 0, 0;
  const auto shifted = to_robot_frame(pc, RigidTransform(Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0)));
  CHECK(shifted.points.row(0) == Eigen::RowVector3d(1, 0, 0));
  CHECK(shifted.frame.is_robot());

  pc.points << 1, 0, 0;
  const auto rotated = to_robot_frame(pc, RigidTransform(rotation_z(std::numbers::pi / 2), Eigen::Vector3d::Zero()));
  CHECK((rotated.points.row(0) - Eigen::RowVector3d(0, 1, 0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("to_robot_frame rejects double transform") {
  PointCloud pc{Points::Zero(2, 3), Frame::robot()};
  CHECK_THROWS_AS(to_robot_frame(pc, RigidTransform::identity()), InvalidArgument);
}

TEST_CASE("rigid transforms compose, invert and preserve distances") {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Vector3d axis = Eigen::Vector3d(standard_normal(rng), standard_normal(rng), standard_normal(rng)).normalized();
    const RigidTransform t(Eigen::AngleAxisd(uniform(rng, -3, 3), axis).toRotationMatrix(),
                           Eigen::Vector3d(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)));
    CHECK(is_rotation(t.rotation()));
    CHECK(((t * t.inverse()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    Points p(8, 3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = uniform(rng, -1, 1);
    const Points q = t.apply(p);
    CHECK((t.inverse().apply(q) - p).cwiseAbs().maxCoeff() < 1e-9);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = i + 1; j < p.rows(); ++j) {
        const double a = (p.row(i) - p.row(j)).norm(), b = (q.row(i) - q.row(j)).norm();
        CHECK(std::abs(a - b) <= 1e-9 * a);
      }
  }
}

TEST_CASE("look_at points the optical axis at the target") {
  const auto t = RigidTransform::look_at({1, 0, 1}, {0, 0, 0});
  const Eigen::Vector3d forward = t.rotation().col(2);
  CHECK((forward - Eigen::Vector3d(-1, 0, -1).normalized()).norm() < 1e-12);
  CHECK(is_rotation(t.rotation()));
}

TEST_CASE("fusion of a single view is its robot-frame cloud") {
  const auto views = scene_views(3, 1);
  Rng rng = make_rng(1);
  const auto fused = fuse_random_views(views, rng, {});
  const auto expected = to_robot_frame(backproject_depth(views[0].depth, views[0].camera, 0), views[0].camera.extrinsic);
  CHECK(fused.view_indices == std::vector<int>{0});
  CHECK(fused.cloud.points == expected.points);
}

TEST_CASE("fusion is order invariant as a multiset") {
  const auto views = scene_views(11, 2);
  const std::vector<int> ab{0, 1}, ba{1, 0};
  CHECK(sorted_rows(fuse_views(views, ab).cloud.points) == sorted_rows(fuse_views(views, ba).cloud.points));
}

TEST_CASE("fusion is deterministic in the seed") {
  const auto views = scene_views(5, 4);
  Rng r1 = make_rng(42), r2 = make_rng(42);
  const auto a = fuse_random_views(views, r1, {});
  const auto b = fuse_random_views(views, r2, {});
  CHECK(a.view_indices == b.view_indices);
  CHECK(a.cloud.points == b.cloud.points);
}

TEST_CASE("fusion keeps point counts and subsets of full fusion") {
  const auto views = scene_views(9, 4);
  const std::vector<int> all{0, 1, 2, 3};
  const auto full = fuse_views(views, all);
  Eigen::Index total = 0;
  for (const auto& v : views) total += backproject_depth(v.depth, v.camera).size();
  CHECK(full.cloud.size() == total);
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto part = fuse_random_views(views, rng, {});
    REQUIRE(!part.view_indices.empty());
    CHECK(std::is_sorted(part.view_indices.begin(), part.view_indices.end()));
    CHECK(part.cloud.size() <= full.cloud.size());
    const auto sub = sorted_rows(part.cloud.points);
    const auto sup = sorted_rows(full.cloud.points);
    CHECK(std::includes(sup.begin(), sup.end(), sub.begin(), sub.end()));
  }
}

TEST_CASE("fusion policies control the subset size") {
  const auto views = scene_views(2, 4);
  Rng rng = make_rng(8);
  FusionPolicy strict{FusionPolicy::Mode::strict_subset, 1, std::nullopt};
  FusionPolicy fixed{FusionPolicy::Mode::fixed, 3, std::nullopt};
  FusionPolicy all{FusionPolicy::Mode::all, 1, std::nullopt};
  std::array<int, 5> seen{};
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = fuse_random_views(views, rng, {}).view_indices.size();
    ++seen[k];
    CHECK(fuse_random_views(views, rng, strict).view_indices.size() < 4);
    CHECK(fuse_random_views(views, rng, fixed).view_indices.size() == 3);
  }
  for (int k = 1; k <= 4; ++k) CHECK(seen[static_cast<std::size_t>(k)] > 0);
  CHECK(fuse_random_views(views, rng, all).view_indices == std::vector<int>{0, 1, 2, 3});

  const auto single = scene_views(2, 1);
  CHECK(fuse_random_views(single, rng, strict).view_indices == std::vector<int>{0});
}

TEST_CASE("fusion rejects empty view sets") {
  std::vector<View> none;
  Rng rng = make_rng(0);
  CHECK_THROWS_AS(fuse_random_views(none, rng, {}), InvalidArgument);
}

TEST_CASE("workspace crop") {
  PointCloud pc{Points(3, 3), Frame::robot()};
  pc.points << 0, 0, 0, 2, 0, 0, 0.5, 0.5, 0.5;
  const auto out = crop(pc, {Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(1, 1, 1)});
  CHECK(out.size() == 2);
  CHECK(!contains_row(out.points, Eigen::RowVector3d(2, 0, 0)));
}

TEST_CASE("downsample examples") {
  Rng rng = make_rng(3);
  PointCloud pc{Points(16, 3), Frame::robot()};
  for (Eigen::Index i = 0; i < 16; ++i) pc.points.row(i) = Eigen::RowVector3d(static_cast<double>(i), 0, 0);

  const auto same = downsample(pc, 16, rng);
  CHECK(sorted_rows(same.points) == sorted_rows(pc.points));

  Rng a = make_rng(5), b = make_rng(5);
  const auto half_a = downsample(pc, 8, a);
  const auto half_b = downsample(pc, 8, b);
  CHECK(half_a.points == half_b.points);
  const auto rows = sorted_rows(half_a.points);
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());

  const auto padded = downsample(pc, 32, rng);
  CHECK(padded.size() == 32);
  for (Eigen::Index i = 0; i < padded.size(); ++i) CHECK(contains_row(pc.points, padded.points.row(i)));

  CHECK_THROWS_AS(downsample(pc, 0, rng), InvalidArgument);
  CHECK_THROWS_AS(downsample(PointCloud{}, 4, rng), InvalidArgument);
}

}  // TEST_SUITE

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "cl3r/datagen.hpp"
#include "cl3r/dataset.hpp"
#include "cl3r/error.hpp"
#include "cl3r/verify.hpp"

using namespace cl3r;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("cl3r_unit_" + name)) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

GeneratorConfig small_gen() {
  GeneratorConfig g;
  g.views = 3;
  g.width = g.height = 24;
  return g;
}

CameraModel overhead(double height, int size, double f) {
  CameraModel cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = f;
  cam.cx = cam.cy = (size - 1) / 2.0;
  cam.extrinsic = RigidTransform::look_at({0, 0, height}, {0, 0, 0}, Eigen::Vector3d::UnitY());
  return cam;
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("scene generation is deterministic") {
  const auto g = small_gen();
  CHECK(generate_scene(5, g) == generate_scene(5, g));
  CHECK(!(generate_scene(5, g) == generate_scene(6, g)));
  const auto rig = generate_rig(5, g);
  CHECK(rig.size() == 3);
  CHECK(rig == generate_rig(5, g));
}

TEST_CASE("object count follows the config") {
  GeneratorConfig g = small_gen();
  g.min_objects = g.max_objects = 1;
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(generate_scene(s, g).objects.size() == 1);
}

TEST_CASE("objects never interpenetrate and stay on the table") {
  const GeneratorConfig g;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto scene = generate_scene(s, g);
    REQUIRE(!scene.objects.empty());
    CHECK(scene.probe.pose.w() > -M_PI);
    CHECK(scene.probe.pose.w() <= M_PI);
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const auto& a = scene.objects[i];
      CHECK(a.position.z() - a.half_extents.z() >= -1e-12);
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
        const auto& b = scene.objects[j];
        CHECK((a.position - b.position).head<2>().norm() >= a.bounding_radius() + b.bounding_radius());
      }
    }
  }
}

TEST_CASE("impossible placement is rejected with the seed") {
  GeneratorConfig g;
  g.min_objects = g.max_objects = 40;
  g.max_retries = 5;
  try {
    generate_scene(77, g);
    FAIL("expected rejection");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("77") != std::string::npos);
  }
}

TEST_CASE("overhead view of an empty table is constant depth") {
  SceneSpec empty;
  const double h = 1.5;
  const auto cam = overhead(h, 31, 20.0);
  const auto depth = render_depth(empty, cam);
  int hits = 0;
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const double x = (u - cam.cx) / cam.fx * h, y = (v - cam.cy) / cam.fy * h;
      const bool inside = std::abs(x) < 0.4 - 1e-9 && std::abs(y) < 0.4 - 1e-9;
      const bool outside = std::abs(x) > 0.4 + 1e-9 || std::abs(y) > 0.4 + 1e-9;
      if (inside) {
        CHECK(std::abs(depth.at(u, v) - h) < 1e-6);
        ++hits;
      }
      if (outside) CHECK(depth.at(u, v) == 0.0f);
    }
  CHECK(hits > 0);
}

TEST_CASE("sphere on the optical axis") {
  SceneSpec scene;
  scene.objects.push_back({Primitive::sphere, Eigen::Vector3d::Constant(1.0), Eigen::Vector3d(0, 0, 5), 0.0});
  const auto cam = overhead(10.0, 33, 30.0);
  CHECK(std::abs(render_depth(scene, cam).at(16, 16) - 4.0) < 1e-6);
}

TEST_CASE("rendered points lie on analytic surfaces") {
  const auto g = small_gen();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto scene = generate_scene(s, g);
    for (const auto& cam : generate_rig(s, g)) {
      const auto pc = to_robot_frame(backproject_depth(render_depth(scene, cam), cam), cam.extrinsic);
      CHECK(pc.size() > 0);
      double worst = 0;
      for (Eigen::Index i = 0; i < pc.size(); ++i) worst = std::max(worst, verify::surface_distance(scene, pc.points.row(i).transpose()));
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("teacher embeddings are deterministic unit vectors") {
  const auto g = small_gen();
  const SyntheticTeacher t(0, 32), t2(0, 32), other(1, 32);
  const auto scene = generate_scene(3, g);
  const auto cam = generate_rig(3, g)[1];
  CHECK(t.image(scene, cam) == t2.image(scene, cam));
  CHECK(t.text(scene) == t2.text(scene));
  CHECK(t.image(scene, cam) != other.image(scene, cam));
  CHECK(std::abs(t.image(scene, cam).norm() - 1.0) < 1e-6);
  CHECK(std::abs(t.text(scene).norm() - 1.0) < 1e-6);
  CHECK_THROWS_AS(SyntheticTeacher(0, 4), InvalidArgument);
}

TEST_CASE("teacher image embeddings discriminate scenes") {
  const GeneratorConfig g;
  const SyntheticTeacher t(0, 32);
  std::vector<Eigen::VectorXd> e;
  for (std::uint64_t s = 0; s < 100; ++s) e.push_back(t.image(generate_scene(s, g), generate_rig(s, g)[0]));
  double total = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) total += std::abs(e[i].dot(e[j])), ++pairs;
  CHECK(total / pairs < 0.5);
}

TEST_CASE("dataset round trip is exact") {
  TempDir dir("roundtrip");
  const auto samples = generate_dataset(3, 9, small_gen(), 16, 0, 1);
  write_dataset(samples, dir.path);
  const auto loaded = read_dataset(dir.path);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) CHECK(loaded[i] == samples[i]);
  const auto manifest = read_manifest(dir.path);
  CHECK(manifest.scene_count == 3);
  CHECK(manifest.views_per_scene == 3);
  CHECK(manifest.teacher_dim == 16);
  CHECK_THROWS_AS(write_dataset(samples, dir.path), IoError);
  CHECK_NOTHROW(write_dataset(samples, dir.path, true));
}

TEST_CASE("dataset generation does not depend on thread count") {
  const auto a = generate_dataset(6, 4, small_gen(), 16, 0, 1);
  const auto b = generate_dataset(6, 4, small_gen(), 16, 0, 3);
  CHECK(a == b);
}

TEST_CASE("truncated depth file is rejected by name") {
  TempDir dir("truncated");
  write_dataset(generate_dataset(2, 1, small_gen(), 16), dir.path);
  const fs::path depth = scene_dir(dir.path, 1) / "views" / "view_02" / "depth.bin";
  fs::resize_file(depth, fs::file_size(depth) - 4);
  try {
    read_dataset(dir.path);
    FAIL("expected rejection");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(depth.string()) != std::string::npos);
  }
}

TEST_CASE("unknown format version is rejected") {
  TempDir dir("version");
  write_dataset(generate_dataset(2, 1, small_gen(), 16), dir.path);
  nlohmann::json m;
  std::ifstream(dir.path / "manifest.json") >> m;
  m["format_version"] = 99;
  std::ofstream(dir.path / "manifest.json") << m.dump();
  CHECK_THROWS_AS(read_dataset(dir.path), IoError);
  CHECK_THROWS_AS(read_dataset(dir.path / "missing"), IoError);
}

TEST_CASE("malformed camera names the field") {
  TempDir dir("camera");
  write_dataset(generate_dataset(1, 1, small_gen(), 16), dir.path);
  const fs::path file = scene_dir(dir.path, 0) / "views" / "view_00" / "camera.json";
  nlohmann::json c;
  std::ifstream(file) >> c;
  c.erase("fx");
  std::ofstream(file) << c.dump();
  try {
    read_dataset(dir.path);
    FAIL("expected rejection");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("camera.json") != std::string::npos);
    CHECK(msg.find("fx") != std::string::npos);
  }
}

TEST_CASE("external teacher embeddings replace the synthetic ones") {
  TempDir src("teacher_src"), dst("teacher_dst");
  const auto a = generate_dataset(2, 1, small_gen(), 16, 0);
  const auto b = generate_dataset(2, 1, small_gen(), 16, 5);
  write_dataset(b, src.path);
  auto samples = a;
  load_external_teacher(samples, src.path);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].image_embeddings == b[i].image_embeddings);
    CHECK(samples[i].text_embedding == b[i].text_embedding);
  }
}

}  // TEST_SUITE

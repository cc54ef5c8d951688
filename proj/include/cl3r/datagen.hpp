#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cl3r/geometry.hpp"

namespace cl3r {

enum class Primitive { box, sphere, cylinder };

std::string to_string(Primitive p);
Primitive primitive_from_string(const std::string& s);

struct SceneObject {
  Primitive kind = Primitive::box;
  // box: half extents; sphere: (r, r, r); cylinder: (r, r, half height). Axis is robot z.
  Eigen::Vector3d half_extents = Eigen::Vector3d::Zero();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // geometric center, robot frame
  double yaw = 0.0;

  double bounding_radius() const;
  double height() const { return 2.0 * half_extents.z(); }
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct ProbeTarget {
  Eigen::VectorXd robot_state;
  Eigen::Vector4d pose = Eigen::Vector4d::Zero();  // x, y, z, yaw in (-pi, pi]
  friend bool operator==(const ProbeTarget&, const ProbeTarget&) = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  Eigen::Vector2d table_half_extent = Eigen::Vector2d(0.4, 0.4);  // table top is z = 0
  std::vector<SceneObject> objects;
  int target_index = 0;
  ProbeTarget probe;

  void validate() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct GeneratorConfig {
  int min_objects = 2;
  int max_objects = 4;
  double table_half_extent = 0.4;
  double distractor_size_min = 0.03;  // half extent / radius
  double distractor_size_max = 0.06;
  double target_size_min = 0.06;
  double target_size_max = 0.09;
  double placement_margin = 0.02;
  int max_retries = 1000;
  int robot_state_dim = 7;

  int views = 4;
  int width = 96;
  int height = 96;
  double fov_deg = 60.0;
  double ring_radius_min = 0.9;
  double ring_radius_max = 1.1;
  double elevation_min_deg = 40.0;
  double elevation_max_deg = 65.0;
  double azimuth_jitter_deg = 20.0;

  void validate() const;
};

// Deterministic in `seed`; rejection-samples non-overlapping placements (bounding spheres).
SceneSpec generate_scene(std::uint64_t seed, const GeneratorConfig& config);

// `views` cameras on a ring around the table, looking at its center.
std::vector<CameraModel> generate_rig(std::uint64_t seed, const GeneratorConfig& config);

// Z-depth of the nearest hit per pixel; 0 where the ray misses every surface.
DepthImage render_depth(const SceneSpec& scene, const CameraModel& camera);

// Deterministic stand-in for pre-trained image/text encoders: a fixed random linear map of a
// hand-crafted scene descriptor, l2-normalized.
class SyntheticTeacher {
 public:
  SyntheticTeacher(std::uint64_t seed, int dim);

  int dim() const { return dim_; }
  Eigen::VectorXd image(const SceneSpec& scene, const CameraModel& camera) const;
  Eigen::VectorXd text(const SceneSpec& scene) const;

  static Eigen::VectorXd image_descriptor(const SceneSpec& scene, const CameraModel& camera);
  static Eigen::VectorXd text_descriptor(const SceneSpec& scene);

 private:
  int dim_;
  Eigen::MatrixXd image_map_;
  Eigen::MatrixXd text_map_;
};

struct SceneSample {
  int scene_id = 0;
  SceneSpec spec;
  std::vector<View> views;
  Eigen::MatrixXd image_embeddings;  // views x teacher_dim, unit rows
  Eigen::VectorXd text_embedding;    // teacher_dim, unit

  const ProbeTarget& probe() const { return spec.probe; }
  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

SceneSample make_sample(int scene_id, std::uint64_t dataset_seed, const GeneratorConfig& config, const SyntheticTeacher& teacher);

std::vector<SceneSample> generate_dataset(int scenes, std::uint64_t seed, const GeneratorConfig& config, int teacher_dim,
                                          std::uint64_t teacher_seed = 0, int threads = 1);

}  // namespace cl3r

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "cl3r/rng.hpp"

namespace cl3r {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Rotation + translation mapping a source frame into a target frame.
class RigidTransform {
 public:
  RigidTransform();
  // Throws InvalidArgument when the rotation is not orthonormal with det +1.
  RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static RigidTransform identity() { return {}; }
  // Row-major 4x4 homogeneous matrix; the last row must be (0, 0, 0, 1).
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);
  // Camera looking from `eye` toward `target`, OpenCV axes (x right, y down, z forward).
  static RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ());

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix4d matrix() const;

  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& rhs) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }
  Points apply(const Points& p) const;

  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

constexpr double kRotationTolerance = 1e-9;
bool is_rotation(const Eigen::Matrix3d& r, double tol = kRotationTolerance);

struct CameraModel {
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  RigidTransform extrinsic;  // camera -> robot

  void validate() const;
  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, meters; <= 0 or non-finite means no return

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0f) {}
  float& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
  float at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }
  friend bool operator==(const DepthImage&, const DepthImage&) = default;
};

// A frame tag: camera(i) or the shared robot base frame.
struct Frame {
  static constexpr int kRobot = -1;
  int camera = kRobot;

  static Frame robot() { return {kRobot}; }
  static Frame camera_frame(int i) { return {i}; }
  bool is_robot() const { return camera == kRobot; }
  std::string name() const;
  friend bool operator==(const Frame&, const Frame&) = default;
};

struct PointCloud {
  Points points;
  Frame frame;

  Eigen::Index size() const { return points.rows(); }
  bool empty() const { return points.rows() == 0; }
};

struct View {
  DepthImage depth;
  CameraModel camera;
  friend bool operator==(const View&, const View&) = default;
};

// Emits ((u - cx) / fx * d, (v - cy) / fy * d, d) for every valid pixel, in raster order.
PointCloud backproject_depth(const DepthImage& depth, const CameraModel& camera, int camera_index = 0);

// Rejects clouds already in the robot frame.
PointCloud to_robot_frame(const PointCloud& cloud, const RigidTransform& extrinsic);

struct AxisAlignedBox {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct FusionPolicy {
  enum class Mode {
    uniform,        // k ~ U{1..v}
    strict_subset,  // k ~ U{1..v-1}; falls back to k=1 when v=1
    fixed,          // k = fixed_k
    all,            // k = v, views in index order
  };
  Mode mode = Mode::uniform;
  int fixed_k = 1;
  std::optional<AxisAlignedBox> workspace;
};

std::string to_string(FusionPolicy::Mode mode);
FusionPolicy::Mode fusion_mode_from_string(const std::string& s);

struct FusedCloud {
  PointCloud cloud;
  std::vector<int> view_indices;  // in concatenation order
};

// Picks k distinct views (ordered by index), back-projects and concatenates them in the robot frame.
FusedCloud fuse_random_views(std::span<const View> views, Rng& rng, const FusionPolicy& policy);

// Fuses an explicit list of views in the given order.
FusedCloud fuse_views(std::span<const View> views, std::span<const int> indices,
                      const std::optional<AxisAlignedBox>& workspace = std::nullopt);

PointCloud crop(const PointCloud& cloud, const AxisAlignedBox& box);

// Exactly `target` points: without replacement when possible, otherwise with replacement.
PointCloud downsample(const PointCloud& cloud, Eigen::Index target, Rng& rng);

}  // namespace cl3r

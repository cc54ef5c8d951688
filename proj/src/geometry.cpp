#include "cl3r/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cl3r/error.hpp"

namespace cl3r {

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const Eigen::Matrix3d residual = r.transpose() * r - Eigen::Matrix3d::Identity();
  return residual.cwiseAbs().maxCoeff() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

RigidTransform::RigidTransform()
    : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_rotation(rotation_)) {
    throw InvalidArgument("rigid transform: rotation is not orthonormal with determinant +1");
  }
  if (!translation_.allFinite()) throw InvalidArgument("rigid transform: non-finite translation");
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  const Eigen::RowVector4d last(0, 0, 0, 1);
  if ((m.row(3) - last).cwiseAbs().maxCoeff() > kRotationTolerance) {
    throw InvalidArgument("rigid transform: last row of 4x4 matrix must be (0, 0, 0, 1)");
  }
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

RigidTransform RigidTransform::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                       const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-12) throw InvalidArgument("look_at: view direction parallel to up vector");
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  // Re-orthonormalize to keep the 1e-9 invariant after accumulated rounding.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = svd.matrixU() * svd.matrixV().transpose();
  return {r, eye};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

Points RigidTransform::apply(const Points& p) const {
  Points out = p * rotation_.transpose();
  out.rowwise() += translation_.transpose();
  return out;
}

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw InvalidArgument("camera: width and height must be positive");
  if (!(fx > 0) || !(fy > 0)) throw InvalidArgument("camera: focal lengths must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    throw InvalidArgument("camera: principal point outside the image");
  }
  if (!is_rotation(extrinsic.rotation())) throw InvalidArgument("camera: extrinsic rotation invalid");
}

std::string Frame::name() const { return is_robot() ? "robot" : "camera(" + std::to_string(camera) + ")"; }

PointCloud backproject_depth(const DepthImage& depth, const CameraModel& camera, int camera_index) {
  if (depth.width != camera.width || depth.height != camera.height ||
      depth.values.size() != static_cast<std::size_t>(depth.width) * depth.height) {
    throw InvalidArgument("backproject_depth: raster " + std::to_string(depth.width) + "x" +
                          std::to_string(depth.height) + " does not match camera " +
                          std::to_string(camera.width) + "x" + std::to_string(camera.height));
  }
  std::size_t valid = 0;
  for (float d : depth.values) valid += (std::isfinite(d) && d > 0.0f) ? 1 : 0;

  PointCloud out;
  out.frame = Frame::camera_frame(camera_index);
  out.points.resize(static_cast<Eigen::Index>(valid), 3);
  Eigen::Index row = 0;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (!std::isfinite(d) || d <= 0.0) continue;
      out.points(row, 0) = (u - camera.cx) / camera.fx * d;
      out.points(row, 1) = (v - camera.cy) / camera.fy * d;
      out.points(row, 2) = d;
      ++row;
    }
  }
  return out;
}

PointCloud to_robot_frame(const PointCloud& cloud, const RigidTransform& extrinsic) {
  if (cloud.frame.is_robot()) throw InvalidArgument("to_robot_frame: cloud is already in the robot frame");
  return {extrinsic.apply(cloud.points), Frame::robot()};
}

std::string to_string(FusionPolicy::Mode mode) {
  switch (mode) {
    case FusionPolicy::Mode::uniform: return "uniform";
    case FusionPolicy::Mode::strict_subset: return "strict_subset";
    case FusionPolicy::Mode::fixed: return "fixed";
    case FusionPolicy::Mode::all: return "all";
  }
  return "uniform";
}

FusionPolicy::Mode fusion_mode_from_string(const std::string& s) {
  if (s == "uniform") return FusionPolicy::Mode::uniform;
  if (s == "strict_subset") return FusionPolicy::Mode::strict_subset;
  if (s == "fixed") return FusionPolicy::Mode::fixed;
  if (s == "all") return FusionPolicy::Mode::all;
  throw InvalidArgument("unknown fusion mode '" + s + "'");
}

PointCloud crop(const PointCloud& cloud, const AxisAlignedBox& box) {
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (box.contains(cloud.points.row(i).transpose())) keep.push_back(i);
  }
  PointCloud out{Points(static_cast<Eigen::Index>(keep.size()), 3), cloud.frame};
  for (std::size_t i = 0; i < keep.size(); ++i) out.points.row(static_cast<Eigen::Index>(i)) = cloud.points.row(keep[i]);
  return out;
}

FusedCloud fuse_views(std::span<const View> views, std::span<const int> indices,
                      const std::optional<AxisAlignedBox>& workspace) {
  if (views.empty()) throw InvalidArgument("fuse: empty view set");
  std::vector<PointCloud> parts;
  Eigen::Index total = 0;
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= views.size()) {
      throw InvalidArgument("fuse: view index " + std::to_string(idx) + " out of range");
    }
    const View& view = views[static_cast<std::size_t>(idx)];
    parts.push_back(to_robot_frame(backproject_depth(view.depth, view.camera, idx), view.camera.extrinsic));
    total += parts.back().size();
  }
  FusedCloud out;
  out.view_indices.assign(indices.begin(), indices.end());
  out.cloud.frame = Frame::robot();
  out.cloud.points.resize(total, 3);
  Eigen::Index row = 0;
  for (const auto& part : parts) {
    out.cloud.points.middleRows(row, part.size()) = part.points;
    row += part.size();
  }
  if (workspace) out.cloud = crop(out.cloud, *workspace);
  return out;
}

FusedCloud fuse_random_views(std::span<const View> views, Rng& rng, const FusionPolicy& policy) {
  const int v = static_cast<int>(views.size());
  if (v == 0) throw InvalidArgument("fuse_random_views: empty view set");
  int k = v;
  switch (policy.mode) {
    case FusionPolicy::Mode::uniform: k = static_cast<int>(uniform_index(rng, 1, v)); break;
    case FusionPolicy::Mode::strict_subset: k = v == 1 ? 1 : static_cast<int>(uniform_index(rng, 1, v - 1)); break;
    case FusionPolicy::Mode::fixed:
      if (policy.fixed_k < 1 || policy.fixed_k > v) {
        throw InvalidArgument("fuse_random_views: fixed k=" + std::to_string(policy.fixed_k) +
                              " outside [1, " + std::to_string(v) + "]");
      }
      k = policy.fixed_k;
      break;
    case FusionPolicy::Mode::all: k = v; break;
  }
  std::vector<int> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  if (policy.mode != FusionPolicy::Mode::all) {
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (int i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(v - 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
  }
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return fuse_views(views, order, policy.workspace);
}

PointCloud downsample(const PointCloud& cloud, Eigen::Index target, Rng& rng) {
  if (target <= 0) throw InvalidArgument("downsample: target count must be positive");
  if (cloud.empty()) throw InvalidArgument("downsample: empty cloud");
  const Eigen::Index n = cloud.size();
  std::vector<Eigen::Index> pick;
  pick.reserve(static_cast<std::size_t>(target));
  if (n >= target) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (Eigen::Index i = 0; i < target; ++i) {
      const auto j = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(n - 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[j]);
      pick.push_back(order[static_cast<std::size_t>(i)]);
    }
  } else {
    for (Eigen::Index i = 0; i < target; ++i) pick.push_back(static_cast<Eigen::Index>(uniform_index(rng, 0, static_cast<std::uint64_t>(n - 1))));
  }
  PointCloud out{Points(target, 3), cloud.frame};
  for (Eigen::Index i = 0; i < target; ++i) out.points.row(i) = cloud.points.row(pick[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace cl3r

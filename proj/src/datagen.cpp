#include "cl3r/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "cl3r/error.hpp"
#include "cl3r/rng.hpp"

namespace cl3r {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNoHit = std::numeric_limits<double>::infinity();

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0) a += 2.0 * kPi;
  return a - kPi;  // (-pi, pi]
}

Eigen::Matrix2d yaw_rotation(double yaw) {
  Eigen::Matrix2d r;
  r << std::cos(yaw), -std::sin(yaw), std::sin(yaw), std::cos(yaw);
  return r;
}

// Nearest positive ray parameter, or +inf.
double intersect_box(const SceneObject& o, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const Eigen::Matrix2d rt = yaw_rotation(o.yaw).transpose();
  Eigen::Vector3d lo, ld;
  lo.head<2>() = rt * (origin - o.position).head<2>();
  lo.z() = origin.z() - o.position.z();
  ld.head<2>() = rt * dir.head<2>();
  ld.z() = dir.z();
  double t0 = -kNoHit, t1 = kNoHit;
  for (int a = 0; a < 3; ++a) {
    const double h = o.half_extents[a];
    if (std::abs(ld[a]) < 1e-15) {
      if (std::abs(lo[a]) > h) return kNoHit;
      continue;
    }
    double ta = (-h - lo[a]) / ld[a];
    double tb = (h - lo[a]) / ld[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return kNoHit;
  }
  if (t0 > 0) return t0;
  return t1 > 0 ? t1 : kNoHit;
}

double intersect_sphere(const SceneObject& o, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const double r = o.half_extents.x();
  const Eigen::Vector3d oc = origin - o.position;
  const double a = dir.squaredNorm();
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - a * c;
  if (disc < 0) return kNoHit;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / a;
  if (t0 > 0) return t0;
  const double t1 = (-b + sq) / a;
  return t1 > 0 ? t1 : kNoHit;
}

double intersect_cylinder(const SceneObject& o, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const double r = o.half_extents.x();
  const double hh = o.half_extents.z();
  const Eigen::Vector3d oc = origin - o.position;
  double best = kNoHit;
  const double a = dir.head<2>().squaredNorm();
  if (a > 1e-15) {
    const double b = oc.head<2>().dot(dir.head<2>());
    const double c = oc.head<2>().squaredNorm() - r * r;
    const double disc = b * b - a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / a, (-b + sq) / a}) {
        if (t > 0 && std::abs(oc.z() + t * dir.z()) <= hh) best = std::min(best, t);
      }
    }
  }
  if (std::abs(dir.z()) > 1e-15) {
    for (double cap : {-hh, hh}) {
      const double t = (cap - oc.z()) / dir.z();
      if (t > 0 && (oc.head<2>() + t * dir.head<2>()).squaredNorm() <= r * r) best = std::min(best, t);
    }
  }
  return best;
}

double intersect_table(const Eigen::Vector2d& half, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  if (std::abs(dir.z()) < 1e-15) return kNoHit;
  const double t = -origin.z() / dir.z();
  if (t <= 0) return kNoHit;
  const Eigen::Vector3d p = origin + t * dir;
  return (std::abs(p.x()) <= half.x() && std::abs(p.y()) <= half.y()) ? t : kNoHit;
}

double intersect(const SceneObject& o, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  switch (o.kind) {
    case Primitive::box: return intersect_box(o, origin, dir);
    case Primitive::sphere: return intersect_sphere(o, origin, dir);
    case Primitive::cylinder: return intersect_cylinder(o, origin, dir);
  }
  return kNoHit;
}

SceneObject sample_object(Rng& rng, double size_min, double size_max) {
  SceneObject o;
  o.kind = static_cast<Primitive>(uniform_index(rng, 0, 2));
  switch (o.kind) {
    case Primitive::box:
      o.half_extents = Eigen::Vector3d(uniform(rng, size_min, size_max), uniform(rng, size_min, size_max),
                                       uniform(rng, size_min, size_max));
      break;
    case Primitive::sphere: o.half_extents = Eigen::Vector3d::Constant(uniform(rng, size_min, size_max)); break;
    case Primitive::cylinder: {
      const double r = uniform(rng, size_min, size_max);
      o.half_extents = Eigen::Vector3d(r, r, uniform(rng, size_min, size_max));
      break;
    }
  }
  o.yaw = wrap_angle(uniform(rng, -kPi, kPi));
  return o;
}

}  // namespace

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::box: return "box";
    case Primitive::sphere: return "sphere";
    case Primitive::cylinder: return "cylinder";
  }
  return "box";
}

Primitive primitive_from_string(const std::string& s) {
  if (s == "box") return Primitive::box;
  if (s == "sphere") return Primitive::sphere;
  if (s == "cylinder") return Primitive::cylinder;
  throw InvalidArgument("unknown primitive '" + s + "'");
}

double SceneObject::bounding_radius() const {
  switch (kind) {
    case Primitive::box: return half_extents.norm();
    case Primitive::sphere: return half_extents.x();
    case Primitive::cylinder: return std::hypot(half_extents.x(), half_extents.z());
  }
  return half_extents.norm();
}

void SceneSpec::validate() const {
  if (objects.empty()) throw InvalidArgument("scene: at least one object required");
  if (target_index < 0 || static_cast<std::size_t>(target_index) >= objects.size()) throw InvalidArgument("scene: target index out of range");
  for (const auto& o : objects) {
    if (!o.position.allFinite() || !o.half_extents.allFinite() || !std::isfinite(o.yaw)) throw InvalidArgument("scene: non-finite pose");
    if (o.position.z() - o.half_extents.z() < -1e-12) throw InvalidArgument("scene: object below the table plane");
  }
  if (!probe.pose.allFinite() || !probe.robot_state.allFinite()) throw InvalidArgument("scene: non-finite probe target");
}

void GeneratorConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects) throw InvalidArgument("generator: object-count range invalid");
  if (!(distractor_size_min > 0 && distractor_size_max >= distractor_size_min && target_size_min > 0 &&
        target_size_max >= target_size_min)) {
    throw InvalidArgument("generator: size ranges invalid");
  }
  if (!(table_half_extent > 0)) throw InvalidArgument("generator: table extent must be positive");
  if (views < 1 || width < 1 || height < 1) throw InvalidArgument("generator: camera rig invalid");
  if (!(fov_deg > 0 && fov_deg < 180)) throw InvalidArgument("generator: field of view must be in (0, 180)");
}

SceneSpec generate_scene(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  Rng rng = make_rng(derive_seed(seed, 0x5ce7e));
  SceneSpec scene;
  scene.seed = seed;
  scene.table_half_extent = Eigen::Vector2d::Constant(config.table_half_extent);
  const int count = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config.min_objects),
                                                   static_cast<std::uint64_t>(config.max_objects)));
  for (int i = 0; i < count; ++i) {
    const bool target = i == 0;
    SceneObject o = sample_object(rng, target ? config.target_size_min : config.distractor_size_min,
                                  target ? config.target_size_max : config.distractor_size_max);
    const double r = o.bounding_radius();
    const double reach = config.table_half_extent - r;
    if (reach <= 0) throw InvalidArgument("generate_scene: object larger than the table (seed " + std::to_string(seed) + ")");
    bool placed = false;
    for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
      o.position = Eigen::Vector3d(uniform(rng, -reach, reach), uniform(rng, -reach, reach), o.half_extents.z());
      placed = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& other) {
        return (other.position - o.position).norm() >= other.bounding_radius() + r + config.placement_margin;
      });
    }
    if (!placed) {
      throw InvalidArgument("generate_scene: placement failed after " + std::to_string(config.max_retries) +
                            " retries (seed " + std::to_string(seed) + ")");
    }
    scene.objects.push_back(o);
  }
  scene.target_index = 0;
  const SceneObject& t = scene.objects.front();
  scene.probe.pose = Eigen::Vector4d(t.position.x(), t.position.y(), t.position.z(), t.yaw);
  scene.probe.robot_state.resize(config.robot_state_dim);
  for (int i = 0; i < config.robot_state_dim; ++i) scene.probe.robot_state[i] = 0.5 * standard_normal(rng);
  scene.validate();
  return scene;
}

std::vector<CameraModel> generate_rig(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  Rng rng = make_rng(derive_seed(seed, 0xca3e7a));
  const double f = 0.5 * config.width / std::tan(0.5 * config.fov_deg * kPi / 180.0);
  const double base = uniform(rng, -kPi, kPi);
  std::vector<CameraModel> rig;
  for (int i = 0; i < config.views; ++i) {
    const double jitter = config.azimuth_jitter_deg * kPi / 180.0;
    const double az = base + 2.0 * kPi * i / config.views + uniform(rng, -jitter, jitter);
    const double el = uniform(rng, config.elevation_min_deg, config.elevation_max_deg) * kPi / 180.0;
    const double radius = uniform(rng, config.ring_radius_min, config.ring_radius_max);
    const Eigen::Vector3d eye(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az), radius * std::sin(el));
    CameraModel cam;
    cam.width = config.width;
    cam.height = config.height;
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * (config.width - 1);
    cam.cy = 0.5 * (config.height - 1);
    cam.extrinsic = RigidTransform::look_at(eye, Eigen::Vector3d::Zero());
    cam.validate();
    rig.push_back(cam);
  }
  return rig;
}

DepthImage render_depth(const SceneSpec& scene, const CameraModel& camera) {
  DepthImage depth(camera.width, camera.height);
  const Eigen::Matrix3d& r = camera.extrinsic.rotation();
  const Eigen::Vector3d& origin = camera.extrinsic.translation();
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      // Camera-frame direction with unit z, so the ray parameter is the z-depth.
      const Eigen::Vector3d dir = r * Eigen::Vector3d((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
      double best = intersect_table(scene.table_half_extent, origin, dir);
      for (const auto& o : scene.objects) best = std::min(best, intersect(o, origin, dir));
      depth.at(u, v) = std::isfinite(best) ? static_cast<float>(best) : 0.0f;
    }
  }
  return depth;
}

// ---------------------------------------------------------------------------------------------
// Teacher

namespace {

constexpr double kMeanObjectsPerCategory = 1.0;

void add_fourier(Eigen::VectorXd& d, int& at, double xn, double yn, double weight, const std::vector<std::pair<int, int>>& freqs) {
  for (const auto& [a, b] : freqs) {
    const double phase = kPi * (a * xn + b * yn);
    d[at++] += weight * std::cos(phase);
    d[at++] += weight * std::sin(phase);
  }
}

const std::vector<std::pair<int, int>> kLowFreq = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
const std::vector<std::pair<int, int>> kHighFreq = {{2, 0}, {0, 2}, {2, 1}, {1, 2}};

constexpr int kImageDescriptorDim = 3 * 8 + 8 + 3 + 8 + 3 + 2;
constexpr int kTextDescriptorDim = 6;

Eigen::MatrixXd random_map(std::uint64_t seed, int rows, int cols) {
  Rng rng = make_rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = standard_normal(rng) / std::sqrt(static_cast<double>(rows));
  return m;
}

}  // namespace

SyntheticTeacher::SyntheticTeacher(std::uint64_t seed, int dim)
    : dim_(dim),
      image_map_(random_map(derive_seed(seed, 0x1a6e), dim, kImageDescriptorDim)),
      text_map_(random_map(derive_seed(seed, 0x7e47), dim, kTextDescriptorDim)) {
  if (dim < 8) throw InvalidArgument("teacher: dimension must be >= 8");
}

Eigen::VectorXd SyntheticTeacher::image_descriptor(const SceneSpec& scene, const CameraModel& camera) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(kImageDescriptorDim);
  const double hx = scene.table_half_extent.x();
  const double hy = scene.table_half_extent.y();
  Eigen::Vector3d counts = Eigen::Vector3d::Zero();
  for (const auto& o : scene.objects) {
    const int cat = static_cast<int>(o.kind);
    const double xn = o.position.x() / hx, yn = o.position.y() / hy;
    const double w = o.bounding_radius() / 0.06;
    int at = 8 * cat;
    add_fourier(d, at, xn, yn, w, kLowFreq);
    at = 24;
    add_fourier(d, at, xn, yn, 0.5 * w, kHighFreq);
    counts[cat] += 1.0;
  }
  int at = 32;
  for (int c = 0; c < 3; ++c) d[at++] = 0.5 * (counts[c] - kMeanObjectsPerCategory);
  const SceneObject& t = scene.objects[static_cast<std::size_t>(scene.target_index)];
  const double txn = t.position.x() / hx, tyn = t.position.y() / hy;
  add_fourier(d, at, txn, tyn, 1.0, kLowFreq);
  d[at++] = 1.5 * txn;
  d[at++] = 1.5 * tyn;
  d[at++] = 1.5 * (t.height() - 0.15) / 0.03;
  const Eigen::Vector3d& eye = camera.extrinsic.translation();
  const double az = std::atan2(eye.y(), eye.x());
  d[at++] = 0.3 * std::cos(az);
  d[at++] = 0.3 * std::sin(az);
  return d;
}

Eigen::VectorXd SyntheticTeacher::text_descriptor(const SceneSpec& scene) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(kTextDescriptorDim);
  for (const auto& o : scene.objects) d[static_cast<int>(o.kind)] += 1.0;
  d.head<3>().array() -= kMeanObjectsPerCategory;
  d.tail<3>().array() = -1.0 / 3.0;
  d[3 + static_cast<int>(scene.objects[static_cast<std::size_t>(scene.target_index)].kind)] += 1.0;
  return d;
}

Eigen::VectorXd SyntheticTeacher::image(const SceneSpec& scene, const CameraModel& camera) const {
  return (image_map_ * image_descriptor(scene, camera)).normalized();
}

Eigen::VectorXd SyntheticTeacher::text(const SceneSpec& scene) const {
  return (text_map_ * text_descriptor(scene)).normalized();
}

SceneSample make_sample(int scene_id, std::uint64_t dataset_seed, const GeneratorConfig& config, const SyntheticTeacher& teacher) {
  const std::uint64_t seed = derive_seed(dataset_seed, static_cast<std::uint64_t>(scene_id));
  SceneSample s;
  s.scene_id = scene_id;
  s.spec = generate_scene(seed, config);
  const auto rig = generate_rig(seed, config);
  s.image_embeddings.resize(static_cast<Eigen::Index>(rig.size()), teacher.dim());
  for (std::size_t i = 0; i < rig.size(); ++i) {
    s.views.push_back({render_depth(s.spec, rig[i]), rig[i]});
    s.image_embeddings.row(static_cast<Eigen::Index>(i)) = teacher.image(s.spec, rig[i]).transpose();
  }
  s.text_embedding = teacher.text(s.spec);
  return s;
}

std::vector<SceneSample> generate_dataset(int scenes, std::uint64_t seed, const GeneratorConfig& config, int teacher_dim,
                                          std::uint64_t teacher_seed, int threads) {
  if (scenes < 1) throw InvalidArgument("generate_dataset: scene count must be positive");
  const SyntheticTeacher teacher(teacher_seed, teacher_dim);
  std::vector<SceneSample> out(static_cast<std::size_t>(scenes));
  const int workers = std::max(1, std::min(threads, scenes));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < scenes; i += workers) out[static_cast<std::size_t>(i)] = make_sample(i, seed, config, teacher);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace cl3r

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cl3r/error.hpp"
#include "cl3r/verify.hpp"

namespace cl3r::verify {

namespace {

double sq_dist(const Points& a, Eigen::Index i, const Points& b, Eigen::Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

double sq_dist(const Points& a, Eigen::Index i, const Eigen::Vector3d& c) {
  const double dx = a(i, 0) - c.x();
  const double dy = a(i, 1) - c.y();
  const double dz = a(i, 2) - c.z();
  return dx * dx + dy * dy + dz * dz;
}

// Distance to the surface of an axis-aligned box centered at the origin.
double box_surface(const Eigen::Vector3d& q, const Eigen::Vector3d& h) {
  const Eigen::Vector3d d = q.cwiseAbs() - h;
  if ((d.array() <= 0).all()) return -d.maxCoeff();
  return d.cwiseMax(0.0).norm();
}

}  // namespace

double chamfer_oracle(const Points& predicted, const Points& target) {
  if (predicted.rows() == 0 || target.rows() == 0) throw InvalidArgument("chamfer_oracle: empty set");
  double forward = 0;
  for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < target.rows(); ++j) best = std::min(best, sq_dist(predicted, i, target, j));
    forward += best;
  }
  double backward = 0;
  for (Eigen::Index j = 0; j < target.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < predicted.rows(); ++i) best = std::min(best, sq_dist(predicted, i, target, j));
    backward += best;
  }
  return forward / static_cast<double>(predicted.rows()) + backward / static_cast<double>(target.rows());
}

std::vector<Eigen::Index> fps_oracle(const Points& cloud, int n, Eigen::Index first) {
  std::vector<Eigen::Index> chosen{first};
  while (static_cast<int>(chosen.size()) < n) {
    Eigen::Index best = -1;
    double best_d = -1;
    for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c : chosen) d = std::min(d, sq_dist(cloud, i, cloud, c));
      if (d > best_d) best_d = d, best = i;
    }
    chosen.push_back(best);
  }
  return chosen;
}

std::vector<Eigen::Index> knn_oracle(const Points& cloud, const Eigen::Vector3d& center, int k) {
  std::vector<std::pair<double, Eigen::Index>> all;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) all.emplace_back(sq_dist(cloud, i, center), i);
  std::sort(all.begin(), all.end());
  std::vector<Eigen::Index> out;
  for (int j = 0; j < k; ++j) out.push_back(all[static_cast<std::size_t>(j)].second);
  return out;
}

Eigen::VectorXd similarity_oracle(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v, double temperature, SimilarityMode mode) {
  const Eigen::Index b = u.rows();
  Eigen::VectorXd out(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    double denom = 0;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (mode == SimilarityMode::paper && j == i) continue;
      denom += std::exp(u.row(i).dot(v.row(j)) / temperature);
    }
    out[i] = u.row(i).dot(v.row(i)) / temperature - std::log(denom);
  }
  return out;
}

double surface_distance(const SceneSpec& scene, const Eigen::Vector3d& p) {
  const Eigen::Vector2d& half = scene.table_half_extent;
  const double ox = std::max(std::abs(p.x()) - half.x(), 0.0);
  const double oy = std::max(std::abs(p.y()) - half.y(), 0.0);
  double best = std::sqrt(ox * ox + oy * oy + p.z() * p.z());
  for (const auto& o : scene.objects) {
    const Eigen::Vector3d rel = p - o.position;
    const double c = std::cos(o.yaw), s = std::sin(o.yaw);
    const Eigen::Vector3d q(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
    double d = 0;
    switch (o.kind) {
      case Primitive::box: d = box_surface(q, o.half_extents); break;
      case Primitive::sphere: d = std::abs(q.norm() - o.half_extents.x()); break;
      case Primitive::cylinder: {
        const double dr = std::hypot(q.x(), q.y()) - o.half_extents.x();
        const double dz = std::abs(q.z()) - o.half_extents.z();
        d = (dr <= 0 && dz <= 0) ? std::min(-dr, -dz) : std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
        break;
      }
    }
    best = std::min(best, d);
  }
  return best;
}

}  // namespace cl3r::verify

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cl3r/datagen.hpp"
#include "cl3r/geometry.hpp"
#include "cl3r/losses.hpp"

namespace cl3r::verify {

// Brute-force reference implementations.
double chamfer_oracle(const Points& predicted, const Points& target);
std::vector<Eigen::Index> fps_oracle(const Points& cloud, int n, Eigen::Index first);
std::vector<Eigen::Index> knn_oracle(const Points& cloud, const Eigen::Vector3d& center, int k);
Eigen::VectorXd similarity_oracle(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v, double temperature, SimilarityMode mode);
// Unsigned distance from `p` to the nearest primitive surface or the table top.
double surface_distance(const SceneSpec& scene, const Eigen::Vector3d& p);

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
  std::uint64_t replay_seed = 0;  // seed of the first failing case
};

struct SuiteReport {
  std::vector<CheckResult> checks;
  bool passed() const;
};

std::vector<std::string> suite_names();  // grads, chamfer, fps, fusion
// `name` is one of suite_names() or "all".
SuiteReport run_suite(const std::string& name, std::uint64_t seed = 0);
void print_report(const SuiteReport& report, std::ostream& out);

// Individual checks, shared with the acceptance runner.
CheckResult check_chamfer(std::uint64_t seed, int cases = 100);
CheckResult check_fps(std::uint64_t seed, int clouds = 1000);
CheckResult check_knn(std::uint64_t seed, int clouds = 1000);
std::vector<CheckResult> check_op_gradients(std::uint64_t seed);
CheckResult check_model_gradient(std::uint64_t seed);
CheckResult check_fusion_commutativity(std::uint64_t seed, int scenes = 100);
CheckResult check_rigid_round_trip(std::uint64_t seed, int trials = 1000);
CheckResult check_surface_residual(std::uint64_t seed, int scenes = 20);

}  // namespace cl3r::verify

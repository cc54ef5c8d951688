#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "cl3r/datagen.hpp"

namespace cl3r {

constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  int scene_count = 0;
  int views_per_scene = 0;
  int teacher_dim = 0;
  int depth_height = 0;
  int depth_width = 0;
};

// Layout (little-endian):
//   manifest.json
//   scene_%06d/meta.json                      scene spec + probe target
//   scene_%06d/views/view_%02d/depth.bin      float32, row-major H x W
//   scene_%06d/views/view_%02d/camera.json    intrinsics + row-major 4x4 camera->robot
//   scene_%06d/teacher.json                   {image: [[...] x v], text: [...]}
// Rejects a non-empty directory unless `overwrite` is set.
void write_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& root, bool overwrite = false);

// All-or-nothing load; IoError names the offending file and field.
std::vector<SceneSample> read_dataset(const std::filesystem::path& root);

DatasetManifest read_manifest(const std::filesystem::path& root);

struct TeacherEmbeddings {
  Eigen::MatrixXd image;  // views x dim
  Eigen::VectorXd text;
};

// Reads one teacher.json (also the schema for externally precomputed embeddings).
TeacherEmbeddings read_teacher(const std::filesystem::path& file, int views, int dim);

// Replaces every sample's teacher embeddings with `source/scene_%06d/teacher.json`.
void load_external_teacher(std::vector<SceneSample>& samples, const std::filesystem::path& source);

std::filesystem::path scene_dir(const std::filesystem::path& root, int scene_id);

}  // namespace cl3r

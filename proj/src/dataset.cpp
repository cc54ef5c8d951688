#include "cl3r/dataset.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cl3r/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cl3r {

namespace {

std::string format_name(const char* pattern, int value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), pattern, value);
  return buf;
}

fs::path view_dir(const fs::path& root, int scene, int view) {
  return scene_dir(root, scene) / "views" / format_name("view_%02d", view);
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + file.string());
}

json read_json(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const fs::path& file) {
  if (!j.is_object() || !j.contains(key)) throw IoError(file.string() + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw IoError(file.string() + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const json& j, const char* key, const fs::path& file) {
  const auto v = field<std::vector<double>>(j, key, file);
  if (v.size() != static_cast<std::size_t>(N)) throw IoError(file.string() + ": field '" + key + "' must have " + std::to_string(N) + " entries");
  return Eigen::Map<const Eigen::Matrix<double, N, 1>>(v.data());
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json camera_json(const CameraModel& c) {
  const Eigen::Matrix4d m = c.extrinsic.matrix();
  std::vector<double> flat;
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) flat.push_back(m(r, k));
  return {{"width", c.width}, {"height", c.height}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"extrinsic", flat}};
}

CameraModel camera_from_json(const json& j, const fs::path& file) {
  CameraModel c;
  c.width = field<int>(j, "width", file);
  c.height = field<int>(j, "height", file);
  c.fx = field<double>(j, "fx", file);
  c.fy = field<double>(j, "fy", file);
  c.cx = field<double>(j, "cx", file);
  c.cy = field<double>(j, "cy", file);
  const auto flat = field<std::vector<double>>(j, "extrinsic", file);
  if (flat.size() != 16) throw IoError(file.string() + ": field 'extrinsic' must have 16 entries");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) m(r, k) = flat[static_cast<std::size_t>(r * 4 + k)];
  try {
    c.extrinsic = RigidTransform::from_matrix(m);
    c.validate();
  } catch (const InvalidArgument& e) {
    throw IoError(file.string() + ": " + e.what());
  }
  return c;
}

json scene_json(const SceneSample& s) {
  json objects = json::array();
  for (const auto& o : s.spec.objects) {
    objects.push_back({{"kind", to_string(o.kind)},
                       {"half_extents", to_vector(o.half_extents)},
                       {"position", to_vector(o.position)},
                       {"yaw", o.yaw}});
  }
  return {{"scene_id", s.scene_id},
          {"seed", s.spec.seed},
          {"table_half_extent", std::vector<double>{s.spec.table_half_extent.x(), s.spec.table_half_extent.y()}},
          {"objects", objects},
          {"target_index", s.spec.target_index},
          {"probe", {{"robot_state", to_vector(s.spec.probe.robot_state)}, {"pose", to_vector(s.spec.probe.pose)}}}};
}

SceneSpec scene_from_json(const json& j, const fs::path& file) {
  SceneSpec spec;
  spec.seed = field<std::uint64_t>(j, "seed", file);
  spec.table_half_extent = fixed_vector<2>(j, "table_half_extent", file);
  for (const auto& jo : field<json>(j, "objects", file)) {
    SceneObject o;
    try {
      o.kind = primitive_from_string(field<std::string>(jo, "kind", file));
    } catch (const InvalidArgument& e) {
      throw IoError(file.string() + ": " + e.what());
    }
    o.half_extents = fixed_vector<3>(jo, "half_extents", file);
    o.position = fixed_vector<3>(jo, "position", file);
    o.yaw = field<double>(jo, "yaw", file);
    spec.objects.push_back(o);
  }
  spec.target_index = field<int>(j, "target_index", file);
  const json probe = field<json>(j, "probe", file);
  const auto state = field<std::vector<double>>(probe, "robot_state", file);
  spec.probe.robot_state = Eigen::Map<const Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size()));
  spec.probe.pose = fixed_vector<4>(probe, "pose", file);
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw IoError(file.string() + ": " + e.what());
  }
  return spec;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void write_depth(const fs::path& file, const DepthImage& depth) {
  std::string bytes(depth.values.size() * 4, '\0');
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    const std::uint32_t le = to_little(std::bit_cast<std::uint32_t>(depth.values[i]));
    std::memcpy(bytes.data() + 4 * i, &le, 4);
  }
  write_text(file, bytes);
}

DepthImage read_depth(const fs::path& file, int width, int height) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = static_cast<std::size_t>(width) * height * 4;
  if (bytes.size() != expected) {
    throw IoError(file.string() + ": expected " + std::to_string(expected) + " bytes for a " + std::to_string(height) + "x" +
                  std::to_string(width) + " float32 raster, found " + std::to_string(bytes.size()));
  }
  DepthImage depth(width, height);
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    std::uint32_t le;
    std::memcpy(&le, bytes.data() + 4 * i, 4);
    depth.values[i] = std::bit_cast<float>(to_little(le));
  }
  return depth;
}

}  // namespace

fs::path scene_dir(const fs::path& root, int scene_id) { return root / format_name("scene_%06d", scene_id); }

void write_dataset(const std::vector<SceneSample>& samples, const fs::path& root, bool overwrite) {
  if (samples.empty()) throw InvalidArgument("write_dataset: no samples");
  std::error_code ec;
  if (fs::exists(root) && !fs::is_empty(root) && !overwrite) {
    throw IoError("write_dataset: " + root.string() + " exists and is not empty (use --force)");
  }
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

  const SceneSample& first = samples.front();
  const int views = static_cast<int>(first.views.size());
  const int dim = static_cast<int>(first.text_embedding.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SceneSample& s = samples[i];
    if (s.scene_id != static_cast<int>(i)) throw InvalidArgument("write_dataset: scene ids must be 0..n-1 in order");
    if (static_cast<int>(s.views.size()) != views || s.text_embedding.size() != dim || s.image_embeddings.rows() != views ||
        s.image_embeddings.cols() != dim) {
      throw InvalidArgument("write_dataset: scene " + std::to_string(i) + " does not match the dataset's view count / teacher dim");
    }
    const fs::path sdir = scene_dir(root, s.scene_id);
    for (int v = 0; v < views; ++v) {
      const fs::path vdir = view_dir(root, s.scene_id, v);
      fs::create_directories(vdir, ec);
      if (ec) throw IoError("cannot create " + vdir.string() + ": " + ec.message());
      write_depth(vdir / "depth.bin", s.views[static_cast<std::size_t>(v)].depth);
      write_text(vdir / "camera.json", camera_json(s.views[static_cast<std::size_t>(v)].camera).dump(2));
    }
    write_text(sdir / "meta.json", scene_json(s).dump(2));
    json image = json::array();
    for (int v = 0; v < views; ++v) image.push_back(to_vector(s.image_embeddings.row(v).transpose()));
    write_text(sdir / "teacher.json", json{{"image", image}, {"text", to_vector(s.text_embedding)}}.dump());
  }
  const json manifest = {{"format_version", kDatasetFormatVersion},
                         {"scene_count", static_cast<int>(samples.size())},
                         {"views_per_scene", views},
                         {"teacher_dim", dim},
                         {"depth_height", first.views.front().depth.height},
                         {"depth_width", first.views.front().depth.width}};
  write_text(root / "manifest.json", manifest.dump(2));
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  const json j = read_json(file);
  DatasetManifest m;
  m.format_version = field<int>(j, "format_version", file);
  if (m.format_version != kDatasetFormatVersion) {
    throw IoError(file.string() + ": unsupported format_version " + std::to_string(m.format_version));
  }
  m.scene_count = field<int>(j, "scene_count", file);
  m.views_per_scene = field<int>(j, "views_per_scene", file);
  m.teacher_dim = field<int>(j, "teacher_dim", file);
  m.depth_height = field<int>(j, "depth_height", file);
  m.depth_width = field<int>(j, "depth_width", file);
  if (m.scene_count < 1 || m.views_per_scene < 1 || m.teacher_dim < 1 || m.depth_height < 1 || m.depth_width < 1) {
    throw IoError(file.string() + ": counts and extents must be positive");
  }
  return m;
}

TeacherEmbeddings read_teacher(const fs::path& file, int views, int dim) {
  const json j = read_json(file);
  const auto image = field<std::vector<std::vector<double>>>(j, "image", file);
  const auto text = field<std::vector<double>>(j, "text", file);
  if (static_cast<int>(image.size()) != views) throw IoError(file.string() + ": field 'image' must have " + std::to_string(views) + " rows");
  if (static_cast<int>(text.size()) != dim) throw IoError(file.string() + ": field 'text' must have " + std::to_string(dim) + " entries");
  TeacherEmbeddings t;
  t.image.resize(views, dim);
  for (int v = 0; v < views; ++v) {
    if (static_cast<int>(image[static_cast<std::size_t>(v)].size()) != dim) {
      throw IoError(file.string() + ": field 'image' row " + std::to_string(v) + " must have " + std::to_string(dim) + " entries");
    }
    for (int d = 0; d < dim; ++d) t.image(v, d) = image[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)];
  }
  t.text = Eigen::Map<const Eigen::VectorXd>(text.data(), dim);
  const auto unit = [&](const Eigen::VectorXd& e, const std::string& what) {
    if (std::abs(e.norm() - 1.0) > 1e-6) throw IoError(file.string() + ": " + what + " embedding is not unit-norm");
  };
  for (int v = 0; v < views; ++v) unit(t.image.row(v).transpose(), "image[" + std::to_string(v) + "]");
  unit(t.text, "text");
  return t;
}

std::vector<SceneSample> read_dataset(const fs::path& root) {
  const DatasetManifest m = read_manifest(root);
  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(m.scene_count));
  for (int i = 0; i < m.scene_count; ++i) {
    SceneSample s;
    const fs::path meta = scene_dir(root, i) / "meta.json";
    const json mj = read_json(meta);
    s.scene_id = field<int>(mj, "scene_id", meta);
    if (s.scene_id != i) throw IoError(meta.string() + ": field 'scene_id' is " + std::to_string(s.scene_id) + ", expected " + std::to_string(i));
    s.spec = scene_from_json(mj, meta);
    for (int v = 0; v < m.views_per_scene; ++v) {
      const fs::path vdir = view_dir(root, i, v);
      const fs::path cam_file = vdir / "camera.json";
      View view;
      view.camera = camera_from_json(read_json(cam_file), cam_file);
      if (view.camera.width != m.depth_width || view.camera.height != m.depth_height) {
        throw IoError(cam_file.string() + ": camera size disagrees with manifest depth_width/depth_height");
      }
      view.depth = read_depth(vdir / "depth.bin", m.depth_width, m.depth_height);
      s.views.push_back(std::move(view));
    }
    TeacherEmbeddings t = read_teacher(scene_dir(root, i) / "teacher.json", m.views_per_scene, m.teacher_dim);
    s.image_embeddings = std::move(t.image);
    s.text_embedding = std::move(t.text);
    out.push_back(std::move(s));
  }
  return out;
}

void load_external_teacher(std::vector<SceneSample>& samples, const fs::path& source) {
  std::vector<TeacherEmbeddings> loaded;
  for (const auto& s : samples) {
    loaded.push_back(read_teacher(scene_dir(source, s.scene_id) / "teacher.json", static_cast<int>(s.views.size()),
                                  static_cast<int>(s.text_embedding.size())));
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].image_embeddings = std::move(loaded[i].image);
    samples[i].text_embedding = std::move(loaded[i].text);
  }
}

}  // namespace cl3r

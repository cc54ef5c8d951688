#include "cl3r/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "cl3r/error.hpp"

using nlohmann::json;

namespace cl3r {

namespace {

constexpr char kMagic[4] = {'C', 'L', '3', 'R'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    T out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
}

template <typename T>
void put(std::string& out, T v) {
  v = to_little(v);
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_block(std::string& out, const std::string& block) {
  put<std::uint64_t>(out, block.size());
  out += block;
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }

  std::string block(const char* what) {
    const auto n = get<std::uint64_t>(what);
    need(n, what);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) throw IoError(source_ + ": truncated while reading " + what);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  ad::Shape shape;
  std::uint64_t offset;
  std::uint64_t count;
  bool decay;
};

void append_floats(std::string& blob, const ad::Vec<float>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(v[i]));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& params = ckpt.params;
  if (ckpt.optimizer.m.size() != params.size() || ckpt.optimizer.v.size() != params.size()) {
    throw InvalidArgument("checkpoint: optimizer state does not match parameters");
  }
  json entries = json::array();
  std::string blob;
  const auto add = [&](const std::string& name, const ad::Shape& shape, const ad::Vec<float>& values, bool decay) {
    if (values.size() != ad::numel(shape)) throw InvalidArgument("checkpoint: '" + name + "' size does not match its shape");
    entries.push_back({{"name", name}, {"shape", shape}, {"offset", blob.size()}, {"count", values.size()}, {"decay", decay}});
    append_floats(blob, values);
  };
  for (std::size_t i = 0; i < params.size(); ++i) add(params[i].name, params[i].shape, params[i].value, params[i].decay);
  for (std::size_t i = 0; i < params.size(); ++i) add("adam.m/" + params[i].name, params[i].shape, ckpt.optimizer.m[i], false);
  for (std::size_t i = 0; i < params.size(); ++i) add("adam.v/" + params[i].name, params[i].shape, ckpt.optimizer.v[i], false);
  const json manifest = {{"entries", entries}, {"optimizer_step", ckpt.optimizer.step}};

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.step));
  put_block(out, to_json(ckpt.config).dump());
  put_block(out, manifest.dump());
  put_block(out, blob);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  r.need(sizeof(kMagic), "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IoError(source + ": not a CL3R checkpoint (bad magic)");
  r.get<std::uint32_t>("magic");
  const auto version = r.get<std::uint32_t>("format version");
  if (version != kCheckpointFormatVersion) {
    throw IoError(source + ": unsupported checkpoint format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.step = static_cast<std::int64_t>(r.get<std::uint64_t>("step counter"));
  const std::string config_text = r.block("config");
  const std::string manifest_text = r.block("manifest");
  const std::string blob = r.block("parameter blobs");
  if (!r.at_end()) throw IoError(source + ": trailing bytes after parameter blobs");

  json config_json, manifest;
  try {
    config_json = json::parse(config_text);
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw IoError(source + ": malformed config or manifest: " + e.what());
  }
  try {
    ckpt.config = train_config_from_json(config_json);
  } catch (const InvalidArgument& e) {
    throw IoError(source + ": config: " + e.what());
  }

  std::vector<Entry> entries;
  try {
    for (const auto& e : manifest.at("entries")) {
      entries.push_back({e.at("name").get<std::string>(), e.at("shape").get<ad::Shape>(), e.at("offset").get<std::uint64_t>(),
                         e.at("count").get<std::uint64_t>(), e.at("decay").get<bool>()});
    }
    ckpt.optimizer.step = manifest.at("optimizer_step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw IoError(source + ": malformed manifest: " + e.what());
  }
  std::uint64_t cursor = 0;
  for (const auto& e : entries) {
    if (e.offset != cursor || e.count != static_cast<std::uint64_t>(ad::numel(e.shape))) {
      throw IoError(source + ": manifest entry '" + e.name + "' does not tile the blob region");
    }
    cursor += 4 * e.count;
  }
  if (cursor != blob.size()) throw IoError(source + ": manifest covers " + std::to_string(cursor) + " of " + std::to_string(blob.size()) + " blob bytes");
  if (entries.size() % 3 != 0) throw IoError(source + ": manifest must list parameters and both moment buffers");

  const std::size_t count = entries.size() / 3;
  const auto values = [&](const Entry& e) {
    ad::Vec<float> v(static_cast<Eigen::Index>(e.count));
    for (std::uint64_t i = 0; i < e.count; ++i) {
      std::uint32_t raw;
      std::memcpy(&raw, blob.data() + e.offset + 4 * i, 4);
      v[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(to_little(raw));
    }
    return v;
  };
  for (std::size_t i = 0; i < count; ++i) {
    const Entry& p = entries[i];
    const Entry& m = entries[count + i];
    const Entry& v = entries[2 * count + i];
    if (m.name != "adam.m/" + p.name || v.name != "adam.v/" + p.name || m.shape != p.shape || v.shape != p.shape) {
      throw IoError(source + ": optimizer moments for '" + p.name + "' missing or misordered");
    }
    ckpt.params.add(p.name, p.shape, p.decay).value = values(p);
    ckpt.optimizer.m.push_back(values(m));
    ckpt.optimizer.v.push_back(values(v));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + file.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, file.string());
}

}  // namespace cl3r

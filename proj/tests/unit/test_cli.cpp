#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <doctest.h>
#include <json.hpp>

#include "cl3r/config.hpp"

using namespace cl3r;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(CL3R_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json first_line(const std::string& out) { return nlohmann::json::parse(out.substr(0, out.find('\n'))); }

struct Workspace {
  fs::path root = fs::temp_directory_path() / "cl3r_unit_cli";
  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string at(const std::string& name) const { return (root / name).string(); }
};

void write_tiny_config(const std::string& path) {
  TrainConfig c;
  c.steps = 4;
  c.batch_size = 4;
  c.num_points = 128;
  c.patch.n = c.model.n = 8;
  c.patch.k_nn = c.model.k_nn = 8;
  c.model.embed_dim = 16;
  c.model.encoder_depth = 1;
  c.model.decoder_depth = 1;
  c.model.num_heads = 2;
  c.model.teacher_dim = 16;
  c.holdout_stride = 4;
  std::ofstream(path) << to_json(c).dump(2);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("").code == 2);
  CHECK(run("bogus").code == 2);
  CHECK(run("check --suite nope").code == 2);
  CHECK(run("check --suite chamfer --unknown-flag").code == 2);
  CHECK(run("gen-data --scenes 2").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("check suites report and exit 0") {
  const Run r = run("check --suite chamfer");
  CHECK(r.code == 0);
  CHECK(first_line(r.out)["resolved"]["suite"] == "chamfer");
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(run("check --suite fps").code == 0);
}

TEST_CASE("gen-data layout, determinism and overwrite guard") {
  Workspace ws;
  const Run a = run("--seed 3 gen-data --out " + ws.at("a") + " --scenes 4 --views 3 --teacher-dim 16 --resolution 24");
  REQUIRE(a.code == 0);
  CHECK(first_line(a.out)["command"] == "gen-data");
  int scenes = 0;
  for (const auto& e : fs::directory_iterator(ws.root / "a")) {
    if (!e.is_directory()) continue;
    ++scenes;
    int views = 0;
    for (const auto& v : fs::directory_iterator(e.path() / "views")) views += v.is_directory();
    CHECK(views == 3);
  }
  CHECK(scenes == 4);
  REQUIRE(run("--seed 3 gen-data --out " + ws.at("b") + " --scenes 4 --views 3 --teacher-dim 16 --resolution 24").code == 0);
  for (int s = 0; s < 4; ++s)
    for (int v = 0; v < 3; ++v) {
      char rel[64];
      std::snprintf(rel, sizeof(rel), "scene_%06d/views/view_%02d/depth.bin", s, v);
      CHECK(read_file(ws.root / "a" / rel) == read_file(ws.root / "b" / rel));
    }
  CHECK(run("gen-data --out " + ws.at("a") + " --scenes 2").code == 3);
  CHECK(run("gen-data --out " + ws.at("a") + " --scenes 2 --views 2 --resolution 24 --force").code == 0);
}

TEST_CASE("pretrain, probe, view-shift and export") {
  Workspace ws;
  REQUIRE(run("gen-data --out " + ws.at("data") + " --scenes 16 --views 3 --teacher-dim 16 --resolution 24").code == 0);
  write_tiny_config(ws.at("tiny.json"));
  const std::string common = "--config " + ws.at("tiny.json") + " ";

  const Run pre = run(common + "pretrain --data " + ws.at("data") + " --out " + ws.at("m.ckpt") + " --metrics " + ws.at("m.jsonl") +
                      " --steps 3 --no-contrastive");
  REQUIRE(pre.code == 0);
  const auto echoed = first_line(pre.out)["resolved"]["config"];
  CHECK(echoed["disable_contrastive"] == true);
  CHECK(echoed["steps"] == 3);
  std::istringstream lines(read_file(ws.root / "m.jsonl"));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["L_C_PI"] == 0.0);
    ++count;
  }
  CHECK(count == 3);

  std::ofstream(ws.at("echoed.json")) << echoed.dump();
  const Run replay = run("--config " + ws.at("echoed.json") + " pretrain --data " + ws.at("data") + " --out " + ws.at("r.ckpt"));
  REQUIRE(replay.code == 0);
  CHECK(read_file(ws.root / "r.ckpt") == read_file(ws.root / "m.ckpt"));

  const Run probe = run("probe --data " + ws.at("data") + " --checkpoint " + ws.at("m.ckpt") + " --probe-steps 50");
  REQUIRE(probe.code == 0);
  const auto report = nlohmann::json::parse(probe.out.substr(probe.out.find('\n') + 1));
  CHECK(report["heldout_count"] == 4);
  CHECK(run(common + "probe --data " + ws.at("data") + " --random-init --probe-steps 50").code == 0);
  CHECK(run(common + "probe --data " + ws.at("data")).code == 2);

  const Run vs = run(common + "view-shift --data " + ws.at("data") + " --random-init --gallery 4 --identical-subsets");
  REQUIRE(vs.code == 0);
  CHECK(nlohmann::json::parse(vs.out.substr(vs.out.find('\n') + 1))["top1"] == 1.0);

  REQUIRE(run("export-features --data " + ws.at("data") + " --checkpoint " + ws.at("m.ckpt") + " --out " + ws.at("feat")).code == 0);
  CHECK(fs::exists(ws.root / "feat" / "scene_000000" / "embedding.bin"));

  std::string bytes = read_file(ws.root / "m.ckpt");
  bytes[4] = 9;
  std::ofstream(ws.at("bad.ckpt"), std::ios::binary) << bytes;
  CHECK(run("probe --data " + ws.at("data") + " --checkpoint " + ws.at("bad.ckpt")).code == 3);
  CHECK(run("probe --data " + ws.at("missing") + " --checkpoint " + ws.at("m.ckpt")).code == 3);

  nlohmann::json bad = echoed;
  bad["stepz"] = 1;
  std::ofstream(ws.at("bad.json")) << bad.dump();
  CHECK(run("--config " + ws.at("bad.json") + " pretrain --data " + ws.at("data") + " --out " + ws.at("x.ckpt")).code == 2);
}

}  // TEST_SUITE

#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hyperagg/aggregator.hpp"
#include "hyperagg/cli.hpp"

using namespace hyperagg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "hyperagg");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Run r;
  r.code = cli_dispatch(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "hyperagg_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Small benchmark shared by the cases below, generated once.
const fs::path& data() {
  static const fs::path dir = [] {
    const fs::path d = workdir() / "data";
    const Run r = run({"toygen", "--seed", "0", "--pairs", "10", "--out", d.string()});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

const fs::path& checkpoint() {
  static const fs::path ckpt = [] {
    const fs::path p = workdir() / "run_a" / "ckpt.dhaw";
    const Run r = run({"train", "--data", (data() / "train.txt").string(), "--steps", "30", "--eval-every", "10",
                       "--dim", "8", "--res", "8", "--eval", (data() / "test.txt").string(), "--out", p.string()});
    REQUIRE(r.code == 0);
    return p;
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("toygen writes records, archives, images and splits") {
  const fs::path d = data();
  for (const char* f : {"pairs.txt", "train.txt", "val.txt", "test.txt", "manifest.json"}) CHECK(fs::exists(d / f));
  std::size_t archives = 0;
  for (const auto& e : fs::directory_iterator(d / "archives")) archives += e.path().extension() == ".dhfa";
  CHECK(archives == 20);
  const auto manifest = nlohmann::json::parse(slurp(d / "manifest.json"));
  CHECK(manifest["command"] == "toygen");
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["config"]["pairs"] == "10");
  for (const auto& [name, ms] : manifest["timings_ms"].items()) CHECK(ms.get<double>() >= 0.0);
}

TEST_CASE("train twice gives byte-identical checkpoints and logs") {
  const fs::path a = checkpoint();
  const fs::path b = workdir() / "run_b" / "ckpt.dhaw";
  const Run r = run({"train", "--data", (data() / "train.txt").string(), "--steps", "30", "--eval-every", "10",
                     "--dim", "8", "--res", "8", "--eval", (data() / "test.txt").string(), "--out", b.string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a.parent_path() / "ckpt.metrics.log") == slurp(b.parent_path() / "ckpt.metrics.log"));
  CHECK(r.out.find("step=30 loss=") != std::string::npos);
  CHECK(fs::exists(b.parent_path() / "ckpt.manifest.json"));
}

TEST_CASE("eval prints the requested basis and is repeatable") {
  const fs::path out1 = workdir() / "eval1", out2 = workdir() / "eval2";
  const Run r1 = run({"eval", "--ckpt", checkpoint().string(), "--data", (data() / "test.txt").string(), "--alpha",
                      "0.1", "--basis", "img", "--out", out1.string()});
  const Run r2 = run({"eval", "--ckpt", checkpoint().string(), "--data", (data() / "test.txt").string(), "--alpha",
                      "0.1", "--basis", "img", "--out", out2.string()});
  REQUIRE(r1.code == 0);
  CHECK(r1.out.rfind("pck@0.1_img=", 0) == 0);
  CHECK(r1.out.find("bbox") == std::string::npos);
  CHECK(slurp(out1 / "eval_report.txt") == slurp(out2 / "eval_report.txt"));
  CHECK(r1.out == r2.out);
}

TEST_CASE("eval on ground-truth predictions reports 1.0 for both bases") {
  const Run r = run({"eval", "--oracle-gt", "--data", (data() / "pairs.txt").string(), "--out",
                     (workdir() / "oracle").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == "pck@0.1_img=1.000000\npck@0.1_bbox=1.000000\n");
}

TEST_CASE("prune reports the top mixing weight") {
  const Run r = run({"prune", "--ckpt", checkpoint().string(), "--data", (data() / "test.txt").string(), "--out",
                     (workdir() / "prune").string()});
  REQUIRE(r.code == 0);
  const TopWeight top = top_mixing_weight(read_checkpoint(checkpoint()));
  char expected[96];
  std::snprintf(expected, sizeof expected, "l=%zu s=%zu w=%.6f\n", top.layer, top.slot, top.weight);
  CHECK(r.out == expected);
  const std::string report = slurp(workdir() / "prune" / "prune_report.txt");
  CHECK(report.find("ours_pruned.pck@0.1_img=") != std::string::npos);
  CHECK(report.find("layer_pruned.pck@0.1_img=") != std::string::npos);
}

TEST_CASE("flip twice is a byte-identical archive") {
  const fs::path src = data() / "archives" / "p0000_src.dhfa";
  const fs::path once = workdir() / "flip" / "once.dhfa", twice = workdir() / "flip" / "twice.dhfa";
  REQUIRE(run({"flip", "--in", src.string(), "--out", once.string()}).code == 0);
  REQUIRE(run({"flip", "--in", once.string(), "--out", twice.string()}).code == 0);
  CHECK(slurp(twice) == slurp(src));
  CHECK(slurp(once) != slurp(src));
}

TEST_CASE("visualization and dense-transfer subcommands write their outputs") {
  const fs::path v = workdir() / "viz";
  CHECK(run({"viz-weights", "--ckpt", checkpoint().string(), "--out", (v / "w").string()}).code == 0);
  CHECK(fs::exists(v / "w" / "weights.ppm"));
  CHECK(run({"viz-pca", "--archive", (data() / "archives" / "p0001_tgt.dhfa").string(), "--out", (v / "p").string()})
            .code == 0);
  CHECK(fs::exists(v / "p" / "l2_s3.ppm"));
  const std::vector<std::string> pair_args{"--ckpt", checkpoint().string(), "--data", (data() / "pairs.txt").string(),
                                           "--index", "2"};
  auto with = [&](std::string cmd, std::string out) {
    std::vector<std::string> a{std::move(cmd)};
    a.insert(a.end(), pair_args.begin(), pair_args.end());
    a.push_back("--out");
    a.push_back((v / out).string());
    return run(a);
  };
  const Run m = with("match", "m");
  CHECK(m.code == 0);
  CHECK(m.out.rfind("k=0 src=", 0) == 0);
  CHECK(fs::exists(v / "m" / "match.ppm"));
  CHECK(with("warp", "w2").code == 0);
  CHECK(fs::exists(v / "w2" / "warped.ppm"));
  CHECK(with("splat", "s").code == 0);
  CHECK(fs::exists(v / "s" / "splat.pam"));
  const Run b = run({"bench", "--data", (data() / "test.txt").string(), "--pairs", "2", "--dim", "8", "--res", "8",
                     "--out", (v / "b").string()});
  CHECK(b.code == 0);
  CHECK(b.out.find("aggregate_ms_per_pair=") != std::string::npos);
  CHECK(run({"extract-toy", "--scenes", "3,4", "--steps", "5", "--stride", "2", "--out", (v / "x").string()}).code ==
        0);
  CHECK(fs::exists(v / "x" / "scene4_tgt.dhfa"));
}

TEST_CASE("exit codes") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
  const Run unknown = run({"frobnicate"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("Usage") != std::string::npos);
  CHECK(run({"train", "--data", (data() / "train.txt").string(), "--bogus", "1", "--out", "x"}).code == 1);
  CHECK(run({}).code == 1);
  const fs::path junk = workdir() / "junk.dhaw";
  std::ofstream(junk) << "not a checkpoint";
  const Run bad = run({"prune", "--ckpt", junk.string(), "--out", (workdir() / "badprune").string()});
  CHECK(bad.code == 2);
  const auto manifest = nlohmann::json::parse(slurp(workdir() / "badprune" / "manifest.json"));
  CHECK(manifest["status"] == "error");
  CHECK(run({"eval", "--data", (data() / "test.txt").string(), "--out", (workdir() / "e").string()}).code == 2);
}

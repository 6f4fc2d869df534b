#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "hyperagg/datasets.hpp"
#include "hyperagg/error.hpp"
#include "hyperagg/feature_archive.hpp"
#include "hyperagg/training.hpp"

using namespace hyperagg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hyperagg_dataset_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kLine =
    "src=a.dhfa tgt=b.dhfa src_size=64x64 tgt_size=60x48 bbox=1,2,30.5,40 cat=blob "
    "kps=1:2>3:4;5.25:6>7:8";

}  // namespace

TEST_CASE("parse_record reads every field") {
  const PairRecord r = parse_record(kLine, 1);
  CHECK(r.src == "a.dhfa");
  CHECK(r.tgt == "b.dhfa");
  CHECK(r.src_size == ImageSize{64, 64});
  CHECK(r.tgt_size == ImageSize{60, 48});
  CHECK(r.tgt_bbox == BBox{1, 2, 30.5, 40});
  CHECK(r.category == "blob");
  REQUIRE(r.kps.size() == 2);
  CHECK(r.kps[1].src == Point{5.25, 6});
  CHECK(r.kps[1].tgt == Point{7, 8});
  CHECK(parse_record(format_record(r), 1) == r);
  CHECK(parse_record(std::string(kLine) + ";", 1) == r);
}

TEST_CASE("malformed lines raise ParseError with the line number") {
  for (const std::string bad : {
           std::string("src=a.dhfa"),
           std::string(kLine) + " extra=1",
           std::string(kLine) + " cat=again",
           std::string("src=a tgt=b src_size=64 tgt_size=60x48 bbox=1,2,3,4 cat=x kps=1:2>3:4"),
           std::string("src=a tgt=b src_size=64x64 tgt_size=60x48 bbox=1,2,3 cat=x kps=1:2>3:4"),
           std::string("src=a tgt=b src_size=64x64 tgt_size=60x48 bbox=1,2,3,4 cat=x kps=1:2-3:4"),
           std::string("src=a tgt=b src_size=64x64 tgt_size=60x48 bbox=1,2,3,4 cat=x kps=a:2>3:4"),
       }) {
    try {
      parse_record(bad, 7);
      FAIL("accepted: " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
      CHECK(e.index() == 7);
    }
  }
}

TEST_CASE("load_pairs: happy path, comments, invalid records and round trip") {
  const fs::path dir = temp_dir("load");
  write_file(dir / "two.txt", std::string("# header\n") + kLine + "\n\n" + kLine + "\n");
  const auto two = load_pairs(dir / "two.txt");
  CHECK(two.size() == 2);
  save_pairs(two, dir / "copy.txt");
  CHECK(load_pairs(dir / "copy.txt") == two);

  write_file(dir / "bad.txt", std::string(kLine) + "\n" +
                                  "src=a tgt=b src_size=64x64 tgt_size=60x48 bbox=1,2,3,4 cat=x kps=64:2>3:4\n");
  try {
    load_pairs(dir / "bad.txt");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidRecord);
    CHECK(e.index() == 1);
  }
  write_file(dir / "parse.txt", std::string("#\n") + kLine + "\nsrc=a\n");
  try {
    load_pairs(dir / "parse.txt");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(e.index() == 3);
  }
  CHECK_THROWS_AS(load_pairs(dir / "missing.txt"), Error);
}

TEST_CASE("record validation rules") {
  PairRecord r = parse_record(kLine, 1);
  r.validate(0);
  PairRecord empty = r;
  empty.kps.clear();
  CHECK_THROWS_AS(empty.validate(3), Error);
  PairRecord box = r;
  box.tgt_bbox.x1 = 61;
  CHECK_THROWS_AS(box.validate(3), Error);
  PairRecord tgt = r;
  tgt.kps[0].tgt.y = 48;
  try {
    tgt.validate(5);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidRecord);
    CHECK(e.index() == 5);
  }
}

TEST_CASE("split is a deterministic partition") {
  std::vector<int> items(37);
  for (int i = 0; i < 37; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto all = split(items, 3, {1.0, 0.0, 0.0});
  CHECK(all.train.size() == 37);
  CHECK(all.test.empty());
  const auto s = split(items, 5, {0.6, 0.1, 0.3});
  CHECK(s.train.size() == 22);
  CHECK(s.val.size() == 4);
  CHECK(s.test.size() == 11);
  std::multiset<int> joined(s.train.begin(), s.train.end());
  joined.insert(s.val.begin(), s.val.end());
  joined.insert(s.test.begin(), s.test.end());
  CHECK(joined == std::multiset<int>(items.begin(), items.end()));
  const auto again = split(items, 5, {0.6, 0.1, 0.3});
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  std::set<std::vector<int>> orders;
  for (std::uint64_t seed = 0; seed < 5; ++seed) orders.insert(split(items, seed, {1.0, 0.0, 0.0}).train);
  CHECK(orders.size() == 5);
  CHECK_THROWS_AS(split(items, 0, {0.5, 0.0, 0.6}), Error);
  CHECK_THROWS_AS(split(items, 0, {1.2, -0.2, 0.0}), Error);
}

TEST_CASE("toy warps invert and respect the displacement bound") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ToySpec spec;
    spec.seed = seed;
    const ToyPair tp = generate_toy_pair(spec);
    const double n = static_cast<double>(spec.image_size);
    CHECK(tp.warp.max_displacement(spec.image_size, spec.image_size) <= spec.max_displacement_frac * n + 1e-9);
    for (double y = 0; y < n; y += 7.5) {
      for (double x = 0; x < n; x += 7.5) {
        const Point back = tp.warp.inverse(tp.warp.apply({x, y}));
        CHECK(std::abs(back.x - x) <= 1e-6);
        CHECK(std::abs(back.y - y) <= 1e-6);
      }
    }
  }
}

TEST_CASE("toy ground truth is self-consistent") {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    ToySpec spec;
    spec.seed = seed;
    ToyPair tp = generate_toy_pair(spec);
    const std::size_t n = spec.image_size, plane = n * n;
    tp.record.src = "s.dhfa";
    tp.record.tgt = "t.dhfa";
    tp.record.validate();
    CHECK(tp.record.kps.size() == spec.keypoints);
    CHECK(tp.src_stack.slots == 4);
    CHECK(tp.src_stack.layers == 3);
    CHECK(tp.dense_map.shape() == Tensor::Shape{2, n, n});
    for (const KeypointPair& kp : tp.record.kps) {
      const Point w = tp.warp.apply(kp.src);
      CHECK(std::abs(w.x - kp.tgt.x) <= 0.5);
      CHECK(std::abs(w.y - kp.tgt.y) <= 0.5);
      const auto p = static_cast<std::size_t>(kp.src.y) * n + static_cast<std::size_t>(kp.src.x);
      CHECK(tp.dense_map[p] == kp.tgt.x);
      CHECK(tp.dense_map[plane + p] == kp.tgt.y);
      CHECK(tp.src_mask[p] == 1.0);
    }
    const BBox& b = tp.record.tgt_bbox;
    CHECK(b.width() <= static_cast<double>(n));
    CHECK(b.height() <= static_cast<double>(n));
  }
}

TEST_CASE("identity warp gives equal coordinates and determinism holds") {
  ToySpec spec;
  spec.seed = 9;
  spec.identity_warp = true;
  const ToyPair id = generate_toy_pair(spec);
  for (const KeypointPair& kp : id.record.kps) CHECK(kp.src == kp.tgt);
  spec.identity_warp = false;
  const ToyPair a = generate_toy_pair(spec), b = generate_toy_pair(spec);
  CHECK(a.record == b.record);
  CHECK(a.src_stack == b.src_stack);
  CHECK(a.tgt_stack == b.tgt_stack);
  CHECK(a.src_image == b.src_image);
  CHECK(a.tgt_image == b.tgt_image);
  CHECK(a.dense_map == b.dense_map);
  CHECK_THROWS_AS(generate_toy_pair(ToySpec{.seed = 0, .model_seed = 7, .image_size = 4}), Error);
}

TEST_CASE("a matcher reading the dense ground truth scores 1.0") {
  std::vector<LoadedPair> pairs;
  std::vector<std::vector<Point>> preds;
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    ToySpec spec;
    spec.seed = seed;
    ToyPair tp = generate_toy_pair(spec);
    const std::size_t n = spec.image_size;
    std::vector<Point> pr;
    for (const KeypointPair& kp : tp.record.kps) {
      const auto p = static_cast<std::size_t>(kp.src.y) * n + static_cast<std::size_t>(kp.src.x);
      pr.push_back({tp.dense_map[p], tp.dense_map[n * n + p]});
    }
    preds.push_back(pr);
    pairs.push_back({tp.record, std::move(tp.src_stack), std::move(tp.tgt_stack)});
  }
  const EvalReport r = score_predictions(pairs, preds, 0.1);
  CHECK(r.overall.pck_img() == 1.0);
  CHECK(r.overall.pck_bbox() == 1.0);
}

TEST_CASE("load_dataset resolves archives relative to the pair file") {
  const fs::path dir = temp_dir("resolve");
  fs::create_directories(dir / "arch");
  ToySpec spec;
  spec.seed = 4;
  ToyPair tp = generate_toy_pair(spec);
  tp.record.src = "arch/s.dhfa";
  tp.record.tgt = "arch/t.dhfa";
  archive::write_archive(tp.src_stack, dir / tp.record.src);
  archive::write_archive(tp.tgt_stack, dir / tp.record.tgt);
  save_pairs({tp.record}, dir / "pairs.txt");
  const auto loaded = load_dataset(dir / "pairs.txt");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].record == tp.record);
  CHECK(loaded[0].src == tp.src_stack);
  CHECK(loaded[0].tgt == tp.tgt_stack);
}

#include <doctest.h>

#include "hyperagg/correspondence.hpp"
#include "hyperagg/datasets.hpp"
#include "hyperagg/error.hpp"
#include "oracles.hpp"

using namespace hyperagg;

namespace {

std::vector<Point> random_queries(std::mt19937_64& rng, std::size_t n, ImageSize size, bool integer) {
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(size.w) - 1e-9),
      uy(0.0, static_cast<double>(size.h) - 1e-9);
  std::vector<Point> q;
  for (std::size_t i = 0; i < n; ++i) {
    Point p{ux(rng), uy(rng)};
    if (integer) p = {std::floor(p.x), std::floor(p.y)};
    q.push_back(p);
  }
  return q;
}

// Upsample both maps, sample each query bilinearly, exhaustive search.
std::vector<std::size_t> oracle_matches(const Tensor& src, const Tensor& tgt, const std::vector<Point>& queries,
                                        ImageSize src_size, ImageSize tgt_size) {
  const Tensor up_src = oracle::resize(src, src_size.h, src_size.w);
  const Tensor up_tgt = oracle::resize(tgt, tgt_size.h, tgt_size.w);
  std::vector<std::size_t> out;
  for (const Point& q : queries) out.push_back(oracle::brute_force_nn(oracle::sample(up_src, q.x, q.y), up_tgt));
  return out;
}

}  // namespace

TEST_CASE("self-matching with distinct descriptors returns the query pixel") {
  std::mt19937_64 rng(81);
  const Tensor d = oracle::random_tensor({6, 8, 8}, rng);
  const ImageSize size{8, 8};
  const auto queries = random_queries(rng, 20, size, true);
  const auto res = match_keypoints(d, d, queries, size, size);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    CHECK(res[i].pixel == queries[i]);
    CHECK(res[i].similarity == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a constant target map matches everything to the origin") {
  std::mt19937_64 rng(82);
  const auto res = match_keypoints(oracle::random_tensor({3, 4, 4}, rng), Tensor({3, 4, 4}, 0.5),
                                   {{1, 2}, {15, 15}, {7.5, 3.25}}, {16, 16}, {12, 20});
  for (const MatchResult& m : res) CHECK(m.pixel == Point{0, 0});
}

TEST_CASE("match_keypoints equals the brute-force oracle") {
  std::mt19937_64 rng(83);
  {
    const Tensor s = oracle::random_tensor({4, 8, 8}, rng), t = oracle::random_tensor({4, 8, 8}, rng);
    const auto q = random_queries(rng, 5, {8, 8}, false);
    const auto res = match_keypoints(s, t, q, {8, 8}, {8, 8});
    const auto ref = oracle_matches(s, t, q, {8, 8}, {8, 8});
    for (std::size_t i = 0; i < 5; ++i) CHECK(res[i].pixel.y * 8 + res[i].pixel.x == ref[i]);
  }
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 8), img(1, 16), ch(1, 5);
    const std::size_t c = ch(rng);
    const Tensor s = oracle::random_tensor({c, dim(rng), dim(rng)}, rng);
    const Tensor t = oracle::random_tensor({c, dim(rng), dim(rng)}, rng);
    const ImageSize ss{img(rng), img(rng)}, ts{img(rng), img(rng)};
    const auto q = random_queries(rng, 4, ss, trial % 2 == 0);
    const auto res = match_keypoints(s, t, q, ss, ts);
    const auto ref = oracle_matches(s, t, q, ss, ts);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(res[i].pixel.y * static_cast<double>(ts.w) + res[i].pixel.x == static_cast<double>(ref[i]));
      CHECK(res[i].pixel.x < ts.w);
      CHECK(res[i].pixel.y < ts.h);
    }
  }
}

TEST_CASE("matching is invariant to positive rescaling") {
  std::mt19937_64 rng(84);
  const Tensor s = oracle::random_tensor({5, 6, 6}, rng), t = oracle::random_tensor({5, 5, 7}, rng);
  const auto q = random_queries(rng, 10, {24, 24}, false);
  Tensor s2 = s, t2 = t;
  for (double& v : s2.values()) v *= 4.0;
  for (double& v : t2.values()) v *= 0.125;
  const auto a = match_keypoints(s, t, q, {24, 24}, {28, 20});
  const auto b = match_keypoints(s2, t2, q, {24, 24}, {28, 20});
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(a[i].pixel == b[i].pixel);
}

TEST_CASE("out-of-bounds queries raise InvalidKeypoint with the index") {
  const Tensor d({2, 4, 4}, 1.0);
  for (const Point bad : {Point{4, 0}, Point{0, 4}, Point{-0.1, 1}}) {
    try {
      match_keypoints(d, d, {{1, 1}, bad}, {4, 4}, {4, 4});
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidKeypoint);
      CHECK(e.index() == 1);
    }
  }
}

TEST_CASE("PCK fixture on a 100x80 image") {
  const PckConfig cfg{0.1, PckBasis::Image, 80, 100};
  CHECK(cfg.radius() == 10.0);
  const std::vector<Point> gts{{50, 40}, {50, 40}};
  const std::vector<Point> preds{{58, 46}, {58, 47}};
  CHECK(std::hypot(8.0, 6.0) == 10.0);
  CHECK(std::hypot(8.0, 7.0) == doctest::Approx(10.63).epsilon(1e-3));
  CHECK(pck_hits(preds, gts, cfg) == 1);
  CHECK(pck(preds, gts, cfg) == 0.5);
  CHECK(pck(gts, gts, cfg) == 1.0);
}

TEST_CASE("PCK validation and monotonicity") {
  const PckConfig cfg{0.1, PckBasis::Image, 80, 100};
  try {
    pck({{0, 0}}, {{0, 0}, {1, 1}}, cfg);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidInput);
  }
  CHECK_THROWS_AS(pck({}, {}, cfg), Error);
  CHECK_THROWS_AS((PckConfig{0.0, PckBasis::Image, 1, 1}.validate()), Error);
  CHECK_THROWS_AS((PckConfig{0.1, PckBasis::Image, 0, 1}.validate()), Error);

  std::mt19937_64 rng(85);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<Point> preds, gts;
  for (int i = 0; i < 200; ++i) {
    preds.push_back({u(rng), u(rng) * 0.8});
    gts.push_back({u(rng), u(rng) * 0.8});
  }
  double last = 0.0;
  for (double alpha = 0.05; alpha <= 1.0; alpha += 0.05) {
    const double img = pck(preds, gts, {alpha, PckBasis::Image, 80, 100});
    const double box = pck(preds, gts, {alpha, PckBasis::Bbox, 30, 45});
    CHECK(img >= last);
    CHECK(box <= img);
    CHECK(img <= 1.0);
    last = img;
  }
}

TEST_CASE("backward warp identity, empty mask and permutation ground truth") {
  std::mt19937_64 rng(86);
  const Tensor d = oracle::random_tensor({5, 8, 8}, rng);
  const Tensor img = oracle::uniform_tensor({3, 8, 8}, rng, 0, 1);
  CHECK(dense_backward_warp(d, d, img) == img);
  Tensor half({1, 8, 8});
  for (std::size_t i = 0; i < 32; ++i) half[i] = 1.0;
  const Tensor masked = dense_backward_warp(d, d, img, half);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 64; ++i) CHECK(masked[c * 64 + i] == (i < 32 ? img[c * 64 + i] : 0.0));
  }
  const Tensor empty = dense_backward_warp(d, d, img, Tensor({1, 8, 8}));
  for (double v : empty.values()) CHECK(v == 0.0);
  try {
    dense_backward_warp(d, d, img, Tensor({1, 4, 8}));
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidShape);
  }

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PermutationPair pp = make_permutation_pair(seed, 8, 8, 6);
    const Tensor warped = dense_backward_warp(pp.desc_src, pp.desc_tgt, pp.src_image);
    std::size_t agree = 0;
    for (std::size_t q = 0; q < 64; ++q) {
      bool same = true;
      for (std::size_t c = 0; c < 3; ++c) same = same && warped[c * 64 + q] == pp.src_image[c * 64 + pp.tgt_to_src[q]];
      agree += same;
    }
    CHECK(agree >= 61);  // ≥ 95% of 64
  }
}

TEST_CASE("forward splat identity and transparency") {
  std::mt19937_64 rng(87);
  const Tensor d = oracle::random_tensor({4, 6, 6}, rng);
  Tensor overlay = oracle::uniform_tensor({4, 6, 6}, rng, 0.1, 1);
  for (std::size_t i = 0; i < 36; i += 3) overlay[3 * 36 + i] = 0.0;
  const Tensor out = forward_splat(d, d, overlay);
  for (std::size_t i = 0; i < 36; ++i) {
    const bool painted = overlay[3 * 36 + i] != 0.0;
    for (std::size_t c = 0; c < 4; ++c) CHECK(out[c * 36 + i] == (painted ? overlay[c * 36 + i] : 0.0));
  }
  const Tensor clear = forward_splat(d, d, Tensor({4, 6, 6}));
  for (double v : clear.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(forward_splat(d, d, Tensor({3, 6, 6})), Error);
  CHECK_THROWS_AS(forward_splat(d, Tensor({3, 6, 6}), overlay), Error);
}

TEST_CASE("forward splat collisions match an exhaustive oracle") {
  std::mt19937_64 rng(88);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor d0 = oracle::random_tensor({3, 5, 5}, rng);
    // a small target palette forces many sources onto the same pixel
    Tensor dt({3, 5, 5}, 0.0);
    const Tensor palette = oracle::random_tensor({3, 3}, rng);
    for (std::size_t p = 0; p < 25; ++p) {
      const std::size_t k = p < 3 ? p : 3 + p % 7;
      for (std::size_t c = 0; c < 3; ++c) dt[c * 25 + p] = k < 3 ? palette.at(k, c) : 1e-3 * (c + 1) * static_cast<double>(k);
    }
    Tensor overlay = oracle::uniform_tensor({4, 5, 5}, rng, 0.2, 1);
    const Tensor out = forward_splat(d0, dt, overlay);

    std::vector<double> best(25, -1e300);
    std::vector<long> win(25, -1);
    for (std::size_t p = 0; p < 25; ++p) {
      std::vector<double> q(3);
      for (std::size_t c = 0; c < 3; ++c) q[c] = d0[c * 25 + p];
      double sim = 0.0;
      const std::size_t t = oracle::brute_force_nn(q, dt, &sim);
      if (sim > best[t]) {
        best[t] = sim;
        win[t] = static_cast<long>(p);
      }
    }
    for (std::size_t t = 0; t < 25; ++t) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(out[c * 25 + t] == (win[t] < 0 ? 0.0 : overlay[c * 25 + static_cast<std::size_t>(win[t])]));
      }
    }
  }
}

TEST_CASE("equal-similarity collisions keep the earlier source") {
  Tensor d0({2, 1, 3}, 0.0), dt({2, 1, 3}, 0.0);
  // sources 0 and 2 are identical; target pixel 1 is their only good match
  d0[0] = 1.0;
  d0[2] = 1.0;
  d0[3 + 1] = 1.0;
  dt[1] = 1.0;
  dt[3 + 0] = 1.0;
  dt[3 + 2] = 1.0;
  Tensor overlay({4, 1, 3}, 1.0);
  overlay[0] = 0.1;
  overlay[2] = 0.3;
  const Tensor out = forward_splat(d0, dt, overlay);
  CHECK(out[1] == 0.1);
}

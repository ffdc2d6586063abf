#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "countlab/datamodel.hpp"
#include "countlab/error.hpp"
#include "countlab/image.hpp"
#include "support.hpp"

using namespace countlab;

TEST_CASE("category set and binning") {
  const auto cats = CategorySet::ihc_default();
  REQUIRE(cats.size() == 2);
  CHECK(cats.name(0) == "negative tumor cell");
  CHECK(cats.name(1) == "positive tumor cell");
  CHECK_THROWS_AS(CategorySet({"a", "a"}), Error);
  CHECK_THROWS_AS(CategorySet({}), Error);

  CountBinning bins(4);
  CHECK(bins.num_bins() == 5);
  for (int j = 0; j < 4; ++j) CHECK(bins.representative(j) == j);
  CHECK(bins.representative(4) == 4.0);
  CHECK(bins.is_open(4));
  CHECK(bins.bin_of(0) == 0);
  CHECK(bins.bin_of(3) == 3);
  CHECK(bins.bin_of(4) == 4);
  CHECK(bins.bin_of(17) == 4);
  CHECK_THROWS_AS(CountBinning(0), Error);
}

TEST_CASE("block targets: small examples") {
  const CountBinning bins(4);
  SUBCASE("no points") {
    const auto t = build_block_targets({}, 28, 28, 14, bins, 2);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 2);
    CHECK(std::all_of(t.count_map().begin(), t.count_map().end(), [](int64_t c) { return c == 0; }));
    CHECK(std::all_of(t.class_index_map().begin(), t.class_index_map().end(), [](int c) { return c == 0; }));
  }
  SUBCASE("one point") {
    const auto t = build_block_targets({{3, 3, 0}}, 28, 28, 14, bins, 2);
    CHECK(t.count(0, 0, 0) == 1);
    CHECK(t.totals() == std::vector<int64_t>{1, 0});
  }
  SUBCASE("six co-located points land in the open bin") {
    std::vector<PointAnnotation> pts(6, PointAnnotation{20, 5, 0});
    const auto t = build_block_targets(pts, 28, 28, 14, bins, 2);
    CHECK(t.count(0, 1, 0) == 6);
    CHECK(t.class_index(0, 1, 0) == 4);
  }
  SUBCASE("boundary points go to floor(x / p)") {
    const auto t = build_block_targets({{14, 13.999, 1}}, 28, 28, 14, bins, 2);
    CHECK(t.count(0, 1, 1) == 1);
  }
  SUBCASE("remainder strip is dropped") {
    const auto t = build_block_targets({{29, 3, 0}, {3, 3, 0}}, 30, 30, 14, bins, 2);
    CHECK(t.cols() == 2);
    CHECK(t.totals()[0] == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_block_targets({}, 28, 28, 0, bins, 2), Error);
    CHECK_THROWS_AS(build_block_targets({{1, 1, 2}}, 28, 28, 14, bins, 2), Error);
  }
}

TEST_CASE("block targets: conservation, truncation, permutation invariance") {
  Rng rng(11);
  const CountBinning bins(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 14 * static_cast<int>(rng.uniform_int(1, 5));
    const int w = 14 * static_cast<int>(rng.uniform_int(1, 5));
    auto pts = testutil::random_points(static_cast<int>(rng.uniform_int(0, 60)), h, w, 2, rng);
    const auto t = build_block_targets(pts, h, w, 14, bins, 2);
    int64_t total = 0;
    for (auto c : t.count_map()) total += c;
    CHECK(total == static_cast<int64_t>(pts.size()));
    for (std::size_t k = 0; k < t.count_map().size(); ++k) {
      CHECK(t.class_index_map()[k] == std::min<int64_t>(t.count_map()[k], 4));
    }
    std::reverse(pts.begin(), pts.end());
    std::swap(pts.front(), pts.back());
    const auto shuffled = build_block_targets(pts, h, w, 14, bins, 2);
    CHECK(shuffled.count_map() == t.count_map());
  }
}

TEST_CASE("annotation parsing") {
  CHECK(parse_annotation_records("").empty());
  CHECK(parse_annotation_records("  \n").empty());
  CHECK(parse_annotation_records(R"({"images": []})").empty());

  const auto one = parse_annotation_records(
      R"({"images":[{"id":"a","path":"a.png","height":20,"width":30,"points":[[10,12,1]]}]})");
  REQUIRE(one.size() == 1);
  CHECK(one[0].points == std::vector<PointAnnotation>{{10, 12, 1}});

  const std::string bad = "{\"images\":[\n"
                          "{\"id\":\"a\",\"path\":\"a.png\",\"height\":20,\"width\":30,\"points\":[]},\n"
                          "{\"id\":\"b\",\"path\":\"b.png\",\"height\":20,\"width\":30,\"points\":[[30,1,0]]}\n"
                          "]}";
  try {
    parse_annotation_records(bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("point out of bounds") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_annotation_records("{\"images\":[{\"id\":\"a\"}]}"), Error);
  CHECK_THROWS_AS(parse_annotation_records("{\"images\": [}"), Error);
}

TEST_CASE("annotation files round trip through disk") {
  testutil::TempDir dir("datamodel");
  Image img(20, 30, 0.5f);
  write_png(dir / "a.png", img);
  save_annotation_records(dir / "ann.json", {{"a", "a.png", 20, 30, {{10, 12, 1}, {0, 0, 0}}}});
  const auto images = load_annotations(dir / "ann.json");
  REQUIRE(images.size() == 1);
  CHECK(images[0].id == "a");
  CHECK(images[0].height() == 20);
  CHECK(images[0].width() == 30);
  CHECK(images[0].points.size() == 2);
  CHECK(images[0].points[0] == PointAnnotation{10, 12, 1});

  std::ofstream(dir / "empty.json") << "";
  CHECK(load_annotations(dir / "empty.json").empty());
  CHECK_THROWS_WITH_AS(load_annotations(dir / "nope.json"), doctest::Contains("missing file"), Error);

  save_annotation_records(dir / "wrong.json", {{"a", "a.png", 21, 30, {}}});
  CHECK_THROWS_AS(load_annotations(dir / "wrong.json"), Error);
}

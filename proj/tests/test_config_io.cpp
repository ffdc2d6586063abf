#include <doctest.h>

#include <cstring>

#include "countlab/config.hpp"
#include "countlab/error.hpp"
#include "countlab/pipeline.hpp"
#include "countlab/tensor_io.hpp"
#include "support.hpp"

using namespace countlab;

TEST_CASE("shipped configs load") {
  for (const char* name : {"desk.ini", "smoke.ini", "overlap.ini"}) {
    INFO(name);
    const auto cfg = load_config(std::string(COUNTLAB_CONFIG_DIR) + "/" + name);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.crop_size == 84);
    CHECK(cfg.student.width == 128);
  }
  const auto desk = load_config(std::string(COUNTLAB_CONFIG_DIR) + "/desk.ini");
  CHECK(desk.images == 2000);
  CHECK(desk.holdout == 200);
  CHECK(desk.agglomerate.epochs == 20);
  CHECK(desk.finetune.epochs == 20);
  CHECK(desk.teachers.size() == 3);
}

TEST_CASE("config text round trip") {
  RunConfig cfg;
  cfg.seed = 99;
  cfg.crop_size = 84;
  cfg.synth.image_size = 84;
  cfg.loss.lambda = {0.25, 0.75};
  cfg.loss.gamma = 0.0;
  cfg.strategy = Strategy::tdrop;
  cfg.ratios = {0.5, 0.6, 0.8, 1.0};
  cfg.teachers = {"synthetic:2.5"};
  const auto text = to_text(cfg);
  const auto back = parse_config(text);
  CHECK(to_text(back) == text);
  CHECK(back.seed == 99);
  CHECK(back.loss.lambda == cfg.loss.lambda);
  CHECK(back.strategy == Strategy::tdrop);
  CHECK(back.teachers == cfg.teachers);
}

TEST_CASE("config errors") {
  CHECK_THROWS_WITH_AS(parse_config(""), doctest::Contains("empty"), Error);
  CHECK_THROWS_WITH_AS(parse_config("[losses]\nbeta = 2\n"), doctest::Contains("unknown key"), Error);
  CHECK_THROWS_AS(parse_config("[nonsense]\nk = 2\n"), Error);
  CHECK_THROWS_AS(parse_config("[losses]\nalpha = ten\n"), Error);
  CHECK_THROWS_AS(parse_config("[patchgroup]\nk = 3\n"), Error);  // ratios no longer match
  CHECK_THROWS_AS(parse_config("[rats]\nstrategy = greedy\n"), Error);
  CHECK_THROWS_AS(load_config("/nonexistent/run.ini"), Error);
  // Partial files keep the defaults elsewhere.
  const auto cfg = parse_config("[run]\nseed = 5\n");
  CHECK(cfg.seed == 5);
  CHECK(cfg.k == 4);
}

TEST_CASE("tensor file round trip") {
  TensorFile f;
  f.meta["note"] = "x";
  const float a[6] = {1.5f, -2.0f, 0.0f, 3.25f, 1e-30f, -0.0f};
  const double b[3] = {0.1, 1e300, -7.0};
  f.add_f32("a", {2, 3}, a);
  f.add_f64("b", {3}, b);
  const auto bytes = f.encode();
  CHECK(bytes.substr(0, 8) == "CNTLAB01");
  const auto back = TensorFile::decode(bytes);
  CHECK(back.encode() == bytes);
  CHECK(back.get("a").shape == std::vector<int64_t>{2, 3});
  const auto av = back.get("a").as_f32();
  CHECK(std::memcmp(av.data(), a, sizeof a) == 0);
  CHECK(back.get("b").as_f64() == std::vector<double>(b, b + 3));
  CHECK(back.meta["note"] == "x");
  CHECK_FALSE(back.has("c"));
  CHECK_THROWS_AS(back.get("c"), Error);
  CHECK_THROWS_AS(back.get("a").as_f64(), Error);

  testutil::TempDir dir("tio");
  f.save(dir / "t.ctn");
  TensorFile::load(dir / "t.ctn").save(dir / "u.ctn");
  CHECK(testutil::read_file(dir / "t.ctn") == testutil::read_file(dir / "u.ctn"));

  auto broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(TensorFile::decode(broken), Error);
  CHECK_THROWS_AS(TensorFile::decode(bytes.substr(0, bytes.size() - 1)), Error);
  CHECK_THROWS_AS(TensorFile::decode("CNTLAB01"), Error);
}

TEST_CASE("checkpoint round trip") {
  auto cfg = load_config(std::string(COUNTLAB_CONFIG_DIR) + "/smoke.ini");
  cfg.student.width = 32;
  cfg.student.depth = 2;
  cfg.student.heads = 2;
  StudentModel student = make_student(cfg);
  Rng rng(3);
  const nn::Projector decoder("decoder", cfg.anchor_dim, cfg.anchor_dim, rng);
  const auto file = make_checkpoint(cfg, "finetune", student, &decoder, rng.state());
  testutil::TempDir dir("ckpt");
  file.save(dir / "a.ctn");
  const auto loaded = read_checkpoint(TensorFile::load(dir / "a.ctn"));
  CHECK(loaded.stage == "finetune");
  CHECK(loaded.rng_state == rng.state());
  CHECK(to_text(loaded.config) == to_text(cfg));
  REQUIRE(loaded.decoder.has_value());
  CHECK(nn::fingerprint(loaded.student.parameters()) == nn::fingerprint(std::as_const(student).parameters()));
  make_checkpoint(loaded.config, loaded.stage, loaded.student, &*loaded.decoder, loaded.rng_state).save(dir / "b.ctn");
  CHECK(testutil::read_file(dir / "a.ctn") == testutil::read_file(dir / "b.ctn"));

  const auto bare = TensorFile::decode(make_checkpoint(cfg, "agglomerate", student, nullptr, "").encode());
  CHECK_FALSE(read_checkpoint(bare).decoder.has_value());
}

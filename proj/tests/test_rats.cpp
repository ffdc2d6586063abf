#include <doctest.h>

#include <set>

#include "countlab/error.hpp"
#include "criteria.hpp"
#include "support.hpp"
#include "toy.hpp"

using namespace countlab;

TEST_CASE("record argmin and ties") {
  auto r = make_record(3, {0.5, 0.2, 0.9});
  CHECK(r.selected_index == 1);
  CHECK_FALSE(r.tie_broken);
  CHECK(r.batch_id == 3);
  r = make_record(0, {0.2, 0.7, 0.2});
  CHECK(r.selected_index == 0);
  CHECK(r.tie_broken);
  CHECK_THROWS_AS(make_record(0, {}), Error);
}

TEST_CASE("selection with synthetic pools") {
  testutil::Toy toy;
  SUBCASE("a single teacher is always chosen") {
    const auto pool = toy.pool({5.0});
    for (int b = 0; b < 5; ++b) CHECK(select_teacher(pool, toy.batch(4, 4 * b), toy.rats, toy.kTemperature, 0.0).selected_index == 0);
  }
  SUBCASE("identical teachers tie and the lowest index wins") {
    testutil::Toy t2;
    TeacherPool pool;
    Rng rng(1);
    const auto teacher = t2.teacher(3.0, 42);
    pool.add(teacher, t2.kDim, rng);
    pool.add(teacher, t2.kDim, rng);
    int nonzero = 0;
    for (int b = 0; b < 10; ++b) {
      const auto rec = select_teacher(pool, t2.batch(4, 4 * b), t2.rats, t2.kTemperature, 0.0, b);
      CHECK(rec.losses[0] == rec.losses[1]);
      CHECK(rec.tie_broken);
      CHECK(rec.selected_index == 0);
      nonzero += rec.losses[0] > 0;
    }
    CHECK(nonzero > 0);
  }
  SUBCASE("the noiseless teacher wins wherever it sits") {
    const auto pool = toy.pool({5.0, 0.0});
    int won = 0;
    const int batches = 40;
    for (int b = 0; b < batches; ++b) {
      won += select_teacher(pool, toy.batch(4, 4 * b), toy.rats, toy.kTemperature, 0.0, b).selected_index == 1;
    }
    CHECK(won >= 0.95 * batches);
  }
}

TEST_CASE("selection bookkeeping on the criterion pool") {
  const auto check = criteria::rats_selection(20, 4, 3);
  CHECK(check.batches == 20);
  CHECK(check.bookkeeping_errors == 0);
  CHECK(check.noiseless_selected >= 18);
}

TEST_CASE("agglomeration step") {
  testutil::Toy toy;
  const auto pool = toy.pool({0.0, 5.0});
  const auto batch = toy.batch(3, 0);
  AgglomerateOptions opts;

  SUBCASE("zero learning rate leaves the student alone") {
    StudentModel student(toy.student_config(), 1);
    const auto before = nn::fingerprint(std::as_const(student).parameters());
    nn::AdamW adam;
    Rng rng(1);
    opts.learning_rate = 0.0;
    const auto r = agglomerate_step(student, pool, batch, toy.rats, adam, opts, 0, rng);
    CHECK(nn::fingerprint(std::as_const(student).parameters()) == before);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].losses.size() == 2);
    CHECK(r.teachers_used == std::vector<int>{r.records[0].selected_index});
    CHECK(r.loss > 0.0);
  }
  SUBCASE("repeated steps on one batch reduce the loss") {
    StudentModel student(toy.student_config(), 1);
    nn::AdamW adam;
    Rng rng(1);
    opts.learning_rate = 3e-3;
    std::vector<double> losses;
    for (int s = 0; s < 10; ++s) losses.push_back(agglomerate_step(student, pool, batch, toy.rats, adam, opts, s, rng).loss);
    CHECK(losses.back() < losses.front());
  }
  SUBCASE("per-group selection logs one record per group") {
    StudentModel student(toy.student_config(), 1);
    nn::AdamW adam;
    Rng rng(1);
    opts.per_group = true;
    const auto r = agglomerate_step(student, pool, batch, toy.rats, adam, opts, 7, rng);
    REQUIRE(r.records.size() == 3);
    for (int g = 0; g < 3; ++g) {
      CHECK(r.records[g].group == g);
      CHECK(r.records[g].batch_id == 7);
    }
  }
  SUBCASE("equal weighting uses every teacher and logs nothing") {
    StudentModel student(toy.student_config(), 1);
    nn::AdamW adam;
    Rng rng(1);
    opts.strategy = Strategy::equal;
    const auto r = agglomerate_step(student, pool, batch, toy.rats, adam, opts, 0, rng);
    CHECK(r.records.empty());
    CHECK(r.teachers_used == std::vector<int>{0, 1});
  }
  SUBCASE("teacher drop keeps a non-empty subset") {
    StudentModel student(toy.student_config(), 1);
    nn::AdamW adam;
    Rng rng(1);
    opts.strategy = Strategy::tdrop;
    std::set<std::vector<int>> seen;
    for (int s = 0; s < 12; ++s) {
      const auto r = agglomerate_step(student, pool, batch, toy.rats, adam, opts, s, rng);
      CHECK(r.records.empty());
      CHECK_FALSE(r.teachers_used.empty());
      seen.insert(r.teachers_used);
    }
    CHECK(seen.size() > 1);
  }
  SUBCASE("mismatched token grids are rejected") {
    auto cfg = toy.student_config();
    cfg.backbone.image_size = 28;
    StudentModel student(cfg, 1);
    nn::AdamW adam;
    Rng rng(1);
    CHECK_THROWS_AS(agglomerate_step(student, pool, batch, toy.rats, adam, opts, 0, rng), Error);
  }
}

TEST_CASE("strategy names") {
  for (auto s : {Strategy::rats, Strategy::equal, Strategy::tdrop}) CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_strategy("best"), Error);
}

TEST_CASE("selection log round trip") {
  testutil::TempDir dir("rats");
  std::vector<SelectionRecord> recs{make_record(0, {0.1, 0.30000000000000004, 1e-300}), make_record(1, {2.0, 2.0})};
  recs[1].group = 4;
  append_selection_log(dir / "log.jsonl", {recs[0]});
  append_selection_log(dir / "log.jsonl", {recs[1]});
  const auto back = read_selection_log(dir / "log.jsonl");
  REQUIRE(back.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back[i].batch_id == recs[i].batch_id);
    CHECK(back[i].group == recs[i].group);
    CHECK(back[i].losses == recs[i].losses);
    CHECK(back[i].selected_index == recs[i].selected_index);
    CHECK(back[i].tie_broken == recs[i].tie_broken);
  }
  CHECK(selection_histogram(back, 3) == std::vector<int64_t>{1, 0, 1});
}

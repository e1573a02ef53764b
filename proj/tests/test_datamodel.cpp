#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "sudokusens/datamodel.hpp"
#include "sudokusens/rng.hpp"

using namespace sudoku;

namespace {

// classes x envs grid, one session per cell, each session one continuous
// signal of session_s seconds per modality
Dataset toy_dataset(int n_classes, int n_envs, double session_s = 10.0,
                    int sessions_per_cell = 1) {
  Dataset ds;
  std::vector<std::string> cls, envs;
  for (int i = 0; i < n_classes; ++i) cls.push_back("c" + std::to_string(i));
  for (int i = 0; i < n_envs; ++i) envs.push_back("e" + std::to_string(i));
  ds.schema.attributes = {{"class", cls}, {"env", envs}};
  ds.class_attribute = "class";
  ds.modality_spec = {{"imu", 1024.0}, {"mic", 256.0}};
  int sid = 0;
  for (int c = 0; c < n_classes; ++c)
    for (int e = 0; e < n_envs; ++e)
      for (int k = 0; k < sessions_per_cell; ++k) {
        Session s;
        s.session_id = "s" + std::to_string(sid++);
        s.class_label = cls[static_cast<size_t>(c)];
        s.condition.values = {cls[static_cast<size_t>(c)],
                              envs[static_cast<size_t>(e)]};
        Sample smp;
        smp.timestamp_index = 0;
        for (const auto& m : ds.modality_spec) {
          const auto n = static_cast<size_t>(session_s * m.sample_rate_hz);
          smp.per_modality.emplace_back(n, static_cast<float>(c + 1));
        }
        s.samples.push_back(std::move(smp));
        ds.sessions.push_back(std::move(s));
      }
  return ds;
}

} // namespace

TEST_CASE("schema validation catches duplicates and empties") {
  AttributeSchema s;
  s.attributes = {{"a", {"x", "y"}}, {"b", {"z"}}};
  CHECK_NOTHROW(s.validate());
  s.attributes.push_back({"a", {"q"}});
  CHECK_THROWS(s.validate());
  s.attributes = {{"a", {"x", "x"}}};
  CHECK_THROWS(s.validate());
  s.attributes = {{"a", {}}};
  CHECK_THROWS(s.validate());
  CHECK(AttributeSchema{{{"a", {"x", "y"}}, {"b", {"z"}}}}.onehot_length() == 3);
}

TEST_CASE("condition validation") {
  AttributeSchema s{{{"class", {"c0", "c1"}}, {"env", {"e0"}}}};
  CHECK_NOTHROW(validate_condition(ConditionVector{{"c1", "e0"}}, s));
  CHECK_THROWS(validate_condition(ConditionVector{{"c1"}}, s));
  CHECK_THROWS(validate_condition(ConditionVector{{"c1", "bogus"}}, s));
}

TEST_CASE("dataset validate passes on toy and catches label mismatch") {
  auto ds = toy_dataset(2, 2, 1.0);
  CHECK_NOTHROW(ds.validate());
  ds.sessions[0].class_label = "c1"; // condition still says c0
  CHECK_THROWS(ds.validate());
}

TEST_CASE("segment_sessions window arithmetic") {
  auto ds = toy_dataset(1, 1, 10.0);
  auto seg = segment_sessions(ds, 2.0, 1.0);
  REQUIRE(seg.dataset.sessions.size() == 1);
  CHECK(seg.rejected_sessions.empty());
  const auto& s = seg.dataset.sessions[0];
  // 10 s session, 2 s window, 1 s hop: starts at 0..8 s
  CHECK(s.samples.size() == 9);
  CHECK(s.samples[0].per_modality[0].size() == 2048);
  CHECK(s.samples[0].per_modality[1].size() == 512);
  for (size_t k = 0; k < s.samples.size(); ++k)
    CHECK(s.samples[k].timestamp_index == static_cast<int64_t>(k));
}

TEST_CASE("segment_sessions edge cases: exact fit and too short") {
  auto exact = toy_dataset(1, 1, 2.0);
  auto seg = segment_sessions(exact, 2.0, 1.0);
  REQUIRE(seg.dataset.sessions.size() == 1);
  CHECK(seg.dataset.sessions[0].samples.size() == 1);

  auto tiny = toy_dataset(1, 1, 1.5);
  auto seg2 = segment_sessions(tiny, 2.0, 1.0);
  CHECK(seg2.dataset.sessions.empty());
  REQUIRE(seg2.rejected_sessions.size() == 1);
  CHECK(seg2.rejected_sessions[0] == "s0");

  CHECK_THROWS(segment_sessions(exact, 1.0, 1.0));
}

TEST_CASE("segmented windows reproduce the source signal slices") {
  Dataset ds = toy_dataset(1, 1, 4.0);
  // make the signal a ramp so window contents are checkable
  auto& sig = ds.sessions[0].samples[0].per_modality[0];
  for (size_t i = 0; i < sig.size(); ++i) sig[i] = static_cast<float>(i);
  auto seg = segment_sessions(ds, 2.0, 1.0);
  const auto& s = seg.dataset.sessions[0];
  REQUIRE(s.samples.size() == 3);
  CHECK(s.samples[1].per_modality[0][0] == 1024.0f);
  CHECK(s.samples[2].per_modality[0][0] == 2048.0f);
}

TEST_CASE("build_sudoku_matrix coverage arithmetic") {
  auto full = toy_dataset(3, 3, 1.0);
  auto m = build_sudoku_matrix(full);
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 3);
  CHECK(m.coverage_percent == doctest::Approx(100.0));
  CHECK(m.unseen_cells().empty());

  // drop sessions of 3 cells -> 6/9 seen
  Dataset partial = full;
  partial.sessions.erase(
      std::remove_if(partial.sessions.begin(), partial.sessions.end(),
                     [](const Session& s) {
                       return (s.class_label == "c0" &&
                               s.condition.values[1] == "e1") ||
                              (s.class_label == "c1" &&
                               s.condition.values[1] == "e2") ||
                              (s.class_label == "c2" &&
                               s.condition.values[1] == "e0");
                     }),
      partial.sessions.end());
  auto m2 = build_sudoku_matrix(partial);
  CHECK(m2.coverage_percent == doctest::Approx(100.0 * 6 / 9));
  CHECK(m2.unseen_cells().size() == 3);
}

TEST_CASE("mask_cells reduces coverage and drops sessions") {
  auto ds = toy_dataset(3, 3, 1.0);
  auto m = build_sudoku_matrix(ds);
  auto res = mask_cells(ds, m, {{0, 1}, {1, 2}, {2, 0}});
  CHECK(res.matrix.coverage_percent == doctest::Approx(100.0 * 6 / 9));
  CHECK(res.dataset.sessions.size() == 6);
  // idempotence: rebuilding from the reduced dataset gives the same seen set
  auto rebuilt = build_sudoku_matrix(res.dataset);
  REQUIRE(rebuilt.rows() == res.matrix.rows());
  REQUIRE(rebuilt.cols() == res.matrix.cols());
  for (int64_t r = 0; r < rebuilt.rows(); ++r)
    for (int64_t c = 0; c < rebuilt.cols(); ++c)
      CHECK(rebuilt.is_seen(r, c) == res.matrix.is_seen(r, c));
}

TEST_CASE("mask_cells rejects orphaned attribute values by name") {
  auto ds = toy_dataset(3, 3, 1.0);
  auto m = build_sudoku_matrix(ds);
  // hiding a whole row orphans that class value
  try {
    mask_cells(ds, m, {{0, 0}, {0, 1}, {0, 2}});
    FAIL("expected orphan error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("c0") != std::string::npos);
    CHECK(std::string(e.what()).find("orphan") != std::string::npos);
  }
}

TEST_CASE("mask_cells rejects already-unseen cells") {
  auto ds = toy_dataset(2, 2, 1.0);
  auto m = build_sudoku_matrix(ds);
  auto res = mask_cells(ds, m, {{0, 1}}, true);
  CHECK_THROWS(mask_cells(res.dataset, res.matrix, {{0, 1}}, true));
}

TEST_CASE("no-rectangle patterns need the override flag") {
  // 2x2 diagonal: both unseen cells lack a closing rectangle but no value is
  // orphaned
  auto ds = toy_dataset(2, 2, 1.0);
  auto m = build_sudoku_matrix(ds);
  CHECK_THROWS(mask_cells(ds, m, {{0, 0}, {1, 1}}));
  auto res = mask_cells(ds, m, {{0, 0}, {1, 1}}, true);
  CHECK(res.matrix.coverage_percent == doctest::Approx(50.0));

  // feasible pattern passes without the flag
  auto ds3 = toy_dataset(3, 3, 1.0);
  auto m3 = build_sudoku_matrix(ds3);
  CHECK_NOTHROW(mask_cells(ds3, m3, {{0, 1}, {1, 2}, {2, 0}}));
}

TEST_CASE("make_split in_dataset 80/10/10 contiguous") {
  auto ds = toy_dataset(1, 1, 101.0); // 100 windows at 2 s / 1 s hop
  auto seg = segment_sessions(ds, 2.0, 1.0);
  REQUIRE(seg.dataset.sessions[0].samples.size() == 100);
  auto m = build_sudoku_matrix(seg.dataset);
  auto split = make_split(seg.dataset, m, SplitMode::in_dataset);
  REQUIRE(split.per_session.size() == 1);
  const auto& sp = split.per_session[0];
  CHECK(sp.train.size() == 80);
  CHECK(sp.val.size() == 10);
  CHECK(sp.test.size() == 10);
  CHECK(sp.train.front() == 0);
  CHECK(sp.train.back() == 79);
  CHECK(sp.val.front() == 80);
  CHECK(sp.test.front() == 90);
  CHECK(sp.test.back() == 99);
}

TEST_CASE("make_split 10-sample session rounds 8/1/1") {
  auto ds = toy_dataset(1, 1, 11.0);
  auto seg = segment_sessions(ds, 2.0, 1.0);
  REQUIRE(seg.dataset.sessions[0].samples.size() == 10);
  auto m = build_sudoku_matrix(seg.dataset);
  auto split = make_split(seg.dataset, m, SplitMode::in_dataset);
  CHECK(split.per_session[0].train.size() == 8);
  CHECK(split.per_session[0].val.size() == 1);
  CHECK(split.per_session[0].test.size() == 1);
}

TEST_CASE("make_split sudoku mode: unseen cells are the test set") {
  auto ds = toy_dataset(3, 3, 11.0);
  auto seg = segment_sessions(ds, 2.0, 1.0);
  auto m = build_sudoku_matrix(seg.dataset);
  auto masked = mask_cells(seg.dataset, m, {{0, 1}, {1, 2}, {2, 0}});
  // split over the full dataset with the masked matrix
  auto split = make_split(seg.dataset, masked.matrix, SplitMode::sudoku);
  int test_sessions = 0, train_sessions = 0;
  for (size_t i = 0; i < split.per_session.size(); ++i) {
    const auto& sp = split.per_session[i];
    const auto& sess = seg.dataset.sessions[i];
    const int64_t n = static_cast<int64_t>(sess.samples.size());
    if (!sp.test.empty()) {
      ++test_sessions;
      CHECK(sp.train.empty());
      CHECK(sp.val.empty());
      CHECK(static_cast<int64_t>(sp.test.size()) == n);
    } else {
      ++train_sessions;
      CHECK(static_cast<int64_t>(sp.train.size()) == n - n / 5);
      CHECK(static_cast<int64_t>(sp.val.size()) == n / 5);
      // contiguity: val follows train
      CHECK(sp.train.front() == 0);
      CHECK(sp.val.front() == sp.train.back() + 1);
    }
  }
  CHECK(test_sessions == 3);
  CHECK(train_sessions == 6);

  // sudoku mode without unseen cells errors
  CHECK_THROWS(make_split(seg.dataset, m, SplitMode::sudoku));
}

TEST_CASE("cell_condition composes class and environment") {
  auto ds = toy_dataset(3, 2, 1.0);
  auto m = build_sudoku_matrix(ds);
  auto c = cell_condition(ds, m, 2, 1);
  REQUIRE(c.values.size() == 2);
  CHECK(c.values[0] == "c2");
  CHECK(c.values[1] == "e1");
  CHECK_NOTHROW(validate_condition(c, ds.schema));
}

TEST_CASE("random datasets validate (fuzz)") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const int nc = 2 + static_cast<int>(rng.index(4));
    const int ne = 1 + static_cast<int>(rng.index(4));
    const int spc = 1 + static_cast<int>(rng.index(2));
    auto ds = toy_dataset(nc, ne, 1.0 + rng.uniform() * 3.0, spc);
    CHECK_NOTHROW(ds.validate());
    auto m = build_sudoku_matrix(ds);
    CHECK(m.rows() == nc);
    CHECK(m.cols() == ne);
    CHECK(m.coverage_percent == doctest::Approx(100.0));
  }
}

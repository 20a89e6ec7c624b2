#include "fsd/errors.hpp"
#include "fsd/metrics.hpp"

#include "metric_oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace fsd;
using fsd::test::data_path;
using fsd::test::TempDir;

namespace {

std::vector<ScoreRecord> make_records(const std::vector<double>& bonafide,
                                      const std::vector<double>& spoof) {
  std::vector<ScoreRecord> out;
  for (double s : bonafide) out.push_back({"B" + std::to_string(out.size()), Label::kBonafide, s});
  for (double s : spoof) out.push_back({"S" + std::to_string(out.size()), Label::kSpoof, s});
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("perfect and inverted separation") {
  CHECK(compute_eer(make_records({3, 4, 5}, {-1, 0, 2.5})).eer == 0.0);
  CHECK(compute_eer(make_records({-1, 0, 2.5}, {3, 4, 5})).eer == 1.0);
  CHECK(compute_min_tdcf(make_records({3, 4, 5}, {-1, 0, 2.5}), {}).min_tdcf == 0.0);
}

TEST_CASE("four-score example") {
  const auto records = make_records({0.9, 0.8}, {0.95, 0.7});
  CHECK(fsd::test::brute_force_eer(records) == 0.5);
  CHECK(compute_eer(records).eer == 0.5);
  CHECK(compute_eer(records).threshold == 0.9);
}

TEST_CASE("interpolated crossing") {
  const auto records = make_records({2, 4}, {1, 3});
  const double eer = compute_eer(records).eer;
  CHECK(eer == fsd::test::brute_force_eer(records));
  CHECK(eer == doctest::Approx(0.5));
  const RocPoint lo{0, 0.0, 0.75};
  const RocPoint hi{1, 0.5, 0.25};
  CHECK(interpolate_eer(lo, hi) == doctest::Approx(0.375));
}

TEST_CASE("sweep agrees with brute force on random sets") {
  std::mt19937_64 rng(11);
  const TDcfCostModel cost;
  for (int i = 0; i < 200; ++i) {
    const auto records = fsd::test::random_score_set(rng, 100, i);
    CAPTURE(i);
    REQUIRE(compute_eer(records).eer == fsd::test::brute_force_eer(records));
    REQUIRE(compute_min_tdcf(records, cost).min_tdcf ==
            fsd::test::brute_force_min_tdcf(records, cost));
  }
}

TEST_CASE("EER is unchanged by increasing transforms") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> grid(-3000, 3000);
  for (int i = 0; i < 50; ++i) {
    auto records = fsd::test::random_score_set(rng, 80, 1);
    for (auto& r : records) r.score = grid(rng) / 1000.0 + (r.label == Label::kBonafide ? 0.5 : 0);
    auto warped = records;
    for (auto& r : warped) r.score = std::exp(r.score / 3.0) * 7.0 - 2.0;
    REQUIRE(compute_eer(records).eer == compute_eer(warped).eer);
  }
}

TEST_CASE("identical scores give the trivial cost") {
  const auto records = make_records({0.2, 0.2, 0.2}, {0.2, 0.2});
  const TDcfCostModel cost;
  CHECK(compute_min_tdcf(records, cost).min_tdcf ==
        std::min(cost.c1(), cost.c2()) / cost.default_cost());
  CHECK(compute_eer(records).eer == 0.5);
}

TEST_CASE("cost model checks") {
  TDcfCostModel cost;
  CHECK(cost.c1() == doctest::Approx(0.95 * 0.99));
  CHECK(cost.c2() == doctest::Approx(10 * 0.05));
  cost.p_miss_spoof_asv = 1.0;
  CHECK_THROWS_WITH_AS(cost.validate(), doctest::Contains("degenerate"), ConfigError);
  cost = {};
  cost.p_spoof = 0.2;
  CHECK_THROWS_AS(cost.validate(), ConfigError);
}

TEST_CASE("unknown labels are ignored and one-class sets rejected") {
  auto records = make_records({1, 2}, {0});
  const double eer = compute_eer(records).eer;
  records.push_back({"U", Label::kUnknown, -100});
  CHECK(compute_eer(records).eer == eer);
  CHECK_THROWS_AS(compute_eer(make_records({1, 2}, {})), DataError);
}

TEST_CASE("ASV operating point from a score file") {
  TempDir dir("metrics");
  {
    std::ofstream out(dir / "asv.txt");
    out << "A target 5\nA target 3\nB nontarget 1\nB nontarget 4\nC spoof 2\nC spoof 6\n";
  }
  TDcfCostModel cost;
  set_asv_operating_point(cost, dir / "asv.txt");
  // target/nontarget EER threshold is 4: one nontarget accepted, one target missed
  CHECK(cost.p_fa_asv == 0.5);
  CHECK(cost.p_miss_asv == 0.5);
  CHECK(cost.p_miss_spoof_asv == 0.5);
}

TEST_CASE("score file round trip") {
  TempDir dir("metrics");
  std::vector<ScoreRecord> records{{"LA_E_3", Label::kSpoof, -0.1},
                                   {"LA_E_1", Label::kBonafide, 1.0 / 3.0},
                                   {"LA_E_2", Label::kUnknown, 1e-300}};
  write_score_file(dir / "scores.txt", records);
  const auto back = read_score_file(dir / "scores.txt");
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.trial_id < b.trial_id; });
  CHECK(back == records);
}

TEST_CASE("CRLF and LF score files parse the same") {
  const auto lf = read_score_file(data_path("scores_lf.txt"));
  const auto crlf = read_score_file(data_path("scores_crlf.txt"));
  REQUIRE(lf.size() == 3);
  CHECK(lf == crlf);
  CHECK(lf[1].score == -2.25);
  CHECK(lf[2].label == Label::kUnknown);
}

TEST_CASE("malformed score lines name the line") {
  CHECK_THROWS_WITH_AS(parse_score_text("# h\nA\tspoof\t1\nB\tbonafide\tabc\n"),
                       doctest::Contains("line 3"), DataError);
  CHECK_THROWS_WITH_AS(parse_score_text("A\tspoof\n"), doctest::Contains("line 1"), DataError);
  CHECK_THROWS_WITH_AS(parse_score_text("A\tfake\t1\n"), doctest::Contains("unknown label"),
                       DataError);
}

}  // TEST_SUITE

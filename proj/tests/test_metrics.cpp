#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/cohort.hpp"
#include "trinet/error.hpp"
#include "trinet/metrics.hpp"

using namespace trinet;

TEST_CASE("horizon labels") {
  for (int k = 1; k <= 5; ++k) {
    CAPTURE(k);
    CHECK(horizon_label(true, 30.0, k) == (k <= 2 ? HorizonStatus::kNegative : HorizonStatus::kPositive));
    CHECK(horizon_label(false, 18.0, k) == (k == 1 ? HorizonStatus::kNegative : HorizonStatus::kUnobservable));
    CHECK(horizon_label(true, 0.0, k) == HorizonStatus::kPositive);
  }
}

TEST_CASE("horizon labels of a patient record use months after the exam") {
  PatientRecord p;
  p.diagnosed = true;
  p.outcome_months = 40.0;
  p.screenings.resize(2);
  p.screenings[0].months_from_first = 0;
  p.screenings[1].months_from_first = 12;
  CHECK(horizon_label(p, 0, 3) == HorizonStatus::kNegative);
  CHECK(horizon_label(p, 0, 4) == HorizonStatus::kPositive);
  CHECK(horizon_label(p, 1, 3) == HorizonStatus::kPositive);
}

TEST_CASE("auc examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auc(s, y) == 0.75);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y) == 0.5);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1, 1}), ContractError);
}

TEST_CASE("auc matches pair counting and is rank based") {
  Rng rng(60);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(2, 50));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.integer(0, 9)) / 10.0;
      y[i] = static_cast<int>(i % 2 == 0 ? 1 : rng.integer(0, 1));
    }
    y[1] = 0;
    CHECK(auc(s, y) == auc_bruteforce(s, y));
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    CHECK(auc(t, y) == auc(s, y));
  }
}

TEST_CASE("bootstrap intervals") {
  const std::vector<double> s{0.2, 0.8, 0.2, 0.8};
  const std::vector<int> y{0, 1, 0, 1};
  const std::vector<std::string> ids{"a", "b", "a", "b"};
  auto ci = bootstrap_ci(s, y, ids, 200, 1);
  CHECK(ci.low == 1.0);
  CHECK(ci.high == 1.0);

  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 30;
    std::vector<double> sc(n);
    std::vector<int> lab(n);
    std::vector<std::string> pid(n);
    for (std::size_t i = 0; i < n; ++i) {
      lab[i] = i % 3 == 0;
      sc[i] = rng.normal(lab[i] ? 0.7 : 0.0, 1.0);
      pid[i] = "p" + std::to_string(i / 2);
    }
    const double point = auc(sc, lab);
    auto iv = bootstrap_ci(sc, lab, pid, 200, trial);
    CHECK(iv.low <= point);
    CHECK(iv.high >= point);
    auto again = bootstrap_ci(sc, lab, pid, 200, trial);
    CHECK(again.low == iv.low);
    CHECK(again.high == iv.high);
  }
}

TEST_CASE("roc curves") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  auto perfect = roc_curve(s, y);
  CHECK(perfect.front().fpr == 0.0);
  CHECK(perfect.front().tpr == 0.0);
  CHECK(std::isinf(perfect.front().threshold));
  CHECK(perfect.back().fpr == 1.0);
  CHECK(perfect.back().tpr == 1.0);
  bool corner = false;
  for (const auto& p : perfect) {
    CHECK((p.fpr == 0.0 || p.tpr == 1.0));
    corner |= p.fpr == 0.0 && p.tpr == 1.0;
  }
  CHECK(corner);

  Rng rng(62);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 40;
    std::vector<double> sc(n);
    std::vector<int> lab(n), inv(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = trial % 2 ? rng.uniform() : double(rng.integer(0, 5));
      lab[i] = i % 4 == 0;
      inv[i] = 1 - lab[i];
    }
    CHECK(std::abs(trapezoid_area(roc_curve(sc, lab)) - auc_bruteforce(sc, lab)) <= 1e-12);
    CHECK(std::abs(auc(sc, inv) - (1.0 - auc(sc, lab))) <= 1e-12);
  }
}

TEST_CASE("roc export writes a csv with a hash trailer") {
  auto dir = test::scratch_dir("roc");
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  auto curve = roc_export(s, y, dir / "roc.csv", "abc123");
  std::ifstream in(dir / "roc.csv");
  std::string line, last;
  std::getline(in, line);
  CHECK(line == "threshold,fpr,tpr");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
    ++rows;
  }
  CHECK(rows == curve.size() + 1);
  CHECK(last.find("abc123") != std::string::npos);
  CHECK(last[0] == '#');
  CHECK_THROWS(roc_export(s, y, dir / "roc.csv" / "nested.csv", "h"));
}

TEST_CASE("type-7 quantiles") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 100 - i;
  CHECK(quantile(v, 0.99) == doctest::Approx(99.01).epsilon(1e-14));
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 100.0);
  CHECK(quantile({4.0}, 0.3) == 4.0);
}

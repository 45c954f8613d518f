#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/error.hpp"
#include "trinet/gradcheck.hpp"
#include "trinet/hazard.hpp"

using namespace trinet;
using ad::Tensor;

namespace {

void fill(ParameterStore& store, const std::string& name, double value) {
  for (double& v : store.get(name).mutable_data()) v = value;
}

void randomize(ParameterStore& store, Rng& rng, double sd) {
  for (const auto& [name, t] : store.items()) {
    auto data = store.get(name).mutable_data();
    for (double& v : data) v = rng.normal(0.0, sd);
  }
}

}  // namespace

TEST_CASE("zero marginal weights give a flat curve") {
  ParameterStore store;
  Rng rng(30);
  HazardHead head(store, 5, true, rng);
  fill(store, "hazard/marginal_w", 0.0);
  fill(store, "hazard/marginal_b", 0.0);
  auto x = test::randn(rng, {5});
  auto curve = head.risk_curve(x);
  double base = store.get("hazard/base_b")[0];
  for (std::size_t i = 0; i < 5; ++i) base += x[i] * store.get("hazard/base_w")[i];
  for (double p : curve.probs) CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-base))).epsilon(1e-14));
}

TEST_CASE("constant hazards accumulate linearly") {
  ParameterStore store;
  Rng rng(31);
  HazardHead head(store, 5, true, rng);
  fill(store, "hazard/base_w", 0.0);
  fill(store, "hazard/base_b", 0.0);
  fill(store, "hazard/marginal_w", 0.0);
  fill(store, "hazard/marginal_b", 0.1);
  auto curve = head.risk_curve(test::randn(rng, {5}));
  for (std::size_t k = 0; k < kHorizons; ++k) {
    CHECK(curve.logits[k] == doctest::Approx(0.1 * double(k)).epsilon(1e-14));
  }
}

TEST_CASE("risk curves never decrease") {
  for (bool embed : {true, false}) {
    ParameterStore store;
    Rng rng(32);
    HazardHead head(store, 6, embed, rng);
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      if (trial % 10 == 0) randomize(store, rng, 1.0);
      auto curve = head.risk_curve(test::randn(rng, {6}, 2.0));
      for (std::size_t k = 0; k + 1 < kHorizons; ++k) violations += curve.probs[k + 1] < curve.probs[k];
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("time embedding shifts the marginal inputs") {
  ParameterStore with, without;
  Rng r1(33), r2(33);
  HazardHead a(with, 4, true, r1), b(without, 4, false, r2);
  for (const char* n : {"hazard/base_w", "hazard/base_b", "hazard/marginal_w", "hazard/marginal_b"}) {
    auto src = with.get(n).data();
    std::copy(src.begin(), src.end(), without.get(n).mutable_data().begin());
  }
  Rng rng(34);
  auto x = test::randn(rng, {4});
  fill(with, "hazard/time_embed", 0.0);
  CHECK(a.logits(x).to_vector() == b.logits(x).to_vector());
  fill(with, "hazard/time_embed", 0.3);
  CHECK(a.logits(x).to_vector() != b.logits(x).to_vector());
  CHECK_THROWS_AS(a.logits(test::randn(rng, {5})), DimensionError);
}

TEST_CASE("zero hazard weights reduce the forecast to the aggregated baseline") {
  ParameterStore store;
  Rng rng(35);
  RadmilAggregator agg(store, 5, 3, {RadmilMode::kD, false, 4, 4}, rng);
  HazardHead head(store, 5, true, rng);
  fill(store, "hazard/marginal_w", 0.0);
  fill(store, "hazard/marginal_b", 0.0);
  FeatureBag bag;
  for (std::size_t v = 0; v < kViews; ++v) {
    bag.deep[v] = test::randn(rng, {5});
    bag.radiomic[v] = test::randn(rng, {3});
  }
  auto x = agg.aggregate(bag).features[0];
  auto f = full_forecast(agg, head, bag);
  double base = store.get("hazard/base_b")[0];
  for (std::size_t i = 0; i < 5; ++i) base += x[i] * store.get("hazard/base_w")[i];
  for (double l : f.logits.data()) CHECK(l == doctest::Approx(base).epsilon(1e-14));
  // Composite equals aggregate followed by the head.
  CHECK(f.probs.to_vector() == head.forecast(x).probs.to_vector());
}

TEST_CASE("averaged per-view forecasts") {
  ParameterStore store;
  Rng rng(36);
  RadmilAggregator agg(store, 5, 3, {RadmilMode::kDefault, false, 4, 4}, rng);
  HazardHead head(store, 5, false, rng);
  FeatureBag bag;
  for (std::size_t v = 0; v < kViews; ++v) {
    bag.deep[v] = test::randn(rng, {5});
    bag.radiomic[v] = test::randn(rng, {3});
  }
  auto rep = agg.aggregate(bag);
  auto f = full_forecast(agg, head, bag);
  CHECK_FALSE(f.logits.defined());
  for (std::size_t k = 0; k < kHorizons; ++k) {
    double mean = 0.0;
    for (const auto& feat : rep.features) mean += head.forecast(feat).probs[k] / 4.0;
    CHECK(f.probs[k] == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("horizon targets") {
  auto dx = horizon_targets({true, 30.0});
  const std::array<double, kHorizons> want{0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  CHECK(dx.target == want);
  CHECK(dx.observed() == kHorizons);

  auto cens = horizon_targets({false, 24.0});
  for (std::size_t k = 0; k < kHorizons; ++k) {
    CHECK(cens.target[k] == 0.0);
    CHECK(cens.mask[k] == (k <= 4 ? 1.0 : 0.0));
  }
  CHECK(horizon_targets({false, 0.0}).observed() == 0);
  CHECK_THROWS_AS(horizon_targets({true, -1.0}), InputError);
}

TEST_CASE("horizon loss") {
  auto targets = horizon_targets({true, 30.0});
  ForecastTensor perfect{Tensor(), Tensor::from_vector({kHorizons}, {targets.target.begin(), targets.target.end()})};
  CHECK(horizon_loss(perfect, targets).item() <= 1e-11);

  // Masked entries do not contribute.
  auto cens = horizon_targets({false, 24.0});
  std::vector<double> logits(kHorizons, -3.0);
  for (std::size_t k = 5; k < kHorizons; ++k) logits[k] = 50.0;
  ForecastTensor f{Tensor::from_vector({kHorizons}, logits), Tensor()};
  CHECK(horizon_loss(f, cens).item() == doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-12));
  CHECK(horizon_loss(f, horizon_targets({false, 0.0})).item() == 0.0);
}

TEST_CASE("hazard head gradients") {
  for (bool embed : {true, false}) {
    ParameterStore store;
    Rng rng(37);
    HazardHead head(store, 4, embed, rng);
    auto x = test::randn(rng, {4});
    x.set_track(true);
    auto targets = horizon_targets({true, 20.0});
    std::vector<Tensor> inputs{x};
    for (const auto& [name, t] : store.items()) inputs.push_back(t);
    CHECK(ad::grad_check([&] { return horizon_loss(head.forecast(x), targets); }, inputs) <= 1e-4);
  }
}

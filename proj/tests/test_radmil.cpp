#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/error.hpp"
#include "trinet/radmil.hpp"

using namespace trinet;
using ad::Tensor;

namespace {

using Vec = std::vector<double>;

// Plain-double reference for attention MIL pooling.
Vec ref_amil(const std::vector<Vec>& bag, const Tensor& fc1, const Tensor& fc2, Vec* weights = nullptr) {
  const std::size_t d = bag[0].size(), hidden = fc1.dim(1);
  Vec score(bag.size());
  for (std::size_t k = 0; k < bag.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < hidden; ++j) {
      double pre = 0.0;
      for (std::size_t i = 0; i < d; ++i) pre += bag[k][i] * fc1[i * hidden + j];
      s += std::tanh(pre) * fc2[j];
    }
    score[k] = s;
  }
  double mx = score[0];
  for (double s : score) mx = std::max(mx, s);
  double total = 0.0;
  for (double& s : score) total += (s = std::exp(s - mx));
  Vec z(d, 0.0);
  for (std::size_t k = 0; k < bag.size(); ++k) {
    score[k] /= total;
    for (std::size_t i = 0; i < d; ++i) z[i] += score[k] * bag[k][i];
  }
  if (weights) *weights = score;
  return z;
}

Vec ref_affine(const Vec& x, const Tensor& w, const Tensor& b) {
  const std::size_t out = w.dim(1);
  Vec y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i * out + j];
    y[j] = acc;
  }
  return y;
}

Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Vec pad(const Vec& r, std::size_t d) {
  Vec out = r;
  out.resize(d, 0.0);
  return out;
}

double max_diff(const Tensor& t, const Vec& v) {
  double m = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) m = std::max(m, std::abs(t[i] - v[i]));
  return m;
}

AmilHead random_head(Rng& rng, std::size_t d, std::size_t hidden) {
  return {test::randn(rng, {d, hidden}), test::randn(rng, {hidden, 1})};
}

FeatureBag random_bag(Rng& rng, std::size_t d, std::size_t r) {
  FeatureBag bag;
  for (std::size_t v = 0; v < kViews; ++v) {
    bag.deep[v] = test::randn(rng, {d});
    bag.radiomic[v] = test::randn(rng, {r});
  }
  return bag;
}

}  // namespace

TEST_CASE("amil pooling examples") {
  Rng rng(20);
  auto head = random_head(rng, 5, 3);
  auto h = test::randn(rng, {5});
  auto r = amil_pool({h, h, h, h}, head);
  for (double a : r.a.data()) CHECK(a == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(test::max_abs_diff(r.z, h) <= 1e-15);

  auto single = amil_pool({h}, head);
  CHECK(single.a[0] == 1.0);
  CHECK(single.z.to_vector() == h.to_vector());

  CHECK_THROWS_AS(amil_pool({}, head), InputError);
}

TEST_CASE("amil pooling is permutation equivariant") {
  Rng rng(21);
  auto head = random_head(rng, 6, 4);
  std::vector<Tensor> bag;
  for (int i = 0; i < 5; ++i) bag.push_back(test::randn(rng, {6}));
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<Tensor> permuted;
  for (auto p : perm) permuted.push_back(bag[p]);
  auto r = amil_pool(bag, head), rp = amil_pool(permuted, head);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(std::abs(rp.a[i] - r.a[perm[i]]) <= 1e-15);
  CHECK(test::max_abs_diff(r.z, rp.z) <= 1e-14);
}

TEST_CASE("lateral scores") {
  Rng rng(22);
  std::vector<Tensor> bag;
  for (int i = 0; i < 4; ++i) bag.push_back(test::randn(rng, {5}));
  LateralHead zero{Tensor::zeros({5, 3}), Tensor::zeros({3, 1}), LateralSquash::kSigmoid};
  const auto half = lateral_scores(bag, zero);
  for (double l : half.data()) CHECK(l == 0.5);
  zero.squash = LateralSquash::kSoftmax;
  const auto quarter = lateral_scores(bag, zero);
  for (double l : quarter.data()) CHECK(l == 0.25);

  for (int trial = 0; trial < 1000; ++trial) {
    LateralHead head{test::randn(rng, {5, 3}, 3.0), test::randn(rng, {3, 1}, 3.0),
                     trial % 2 ? LateralSquash::kSoftmax : LateralSquash::kSigmoid};
    for (auto& h : bag) h = test::randn(rng, {5}, 2.0);
    const auto l_scores = lateral_scores(bag, head);
    for (double l : l_scores.data()) {
      CHECK(l >= 0.0);
      CHECK(l <= 1.0);
    }
  }
}

TEST_CASE("lateral pooling") {
  auto h1 = Tensor::from_vector({3}, {1, 2, 3}), h2 = Tensor::from_vector({3}, {-4, 5, 0.5});
  Tensor w;
  auto z = lateral_pool({h1, h2}, Tensor::from_vector({2}, {0.5, 0.5}),
                        Tensor::from_vector({2}, {1, 0}), &w);
  CHECK(w.to_vector() == std::vector<double>{1, 0});
  CHECK(z.to_vector() == h1.to_vector());

  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tensor> bag;
    for (int i = 0; i < 4; ++i) bag.push_back(test::randn(rng, {5}));
    auto a = ad::softmax(test::randn(rng, {4}), 0);
    auto l = test::uniform(rng, {4}, 0.0, 1.0);
    lateral_pool(bag, a, l, &w);
    double s = 0.0;
    for (double v : w.data()) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
    auto constant = Tensor::full({4}, rng.uniform(0.1, 1.0));
    lateral_pool(bag, a, constant, &w);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(w[i] - a[i]) <= 1e-15);
  }

  bool degenerate = false;
  lateral_pool({h1, h2}, Tensor::from_vector({2}, {0.5, 0.5}), Tensor::zeros({2}), nullptr,
               &degenerate);
  CHECK(degenerate);
}

TEST_CASE("C_noRad on identical deep features attends uniformly") {
  ParameterStore store;
  Rng rng(24);
  RadmilAggregator agg(store, 6, 4, {RadmilMode::kCNoRad, false, 5, 5}, rng);
  FeatureBag bag;
  auto h = test::randn(rng, {6});
  for (auto& d : bag.deep) d = h;
  auto rep = agg.aggregate(bag);
  for (double a : rep.view_attention.data()) CHECK(a == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(test::max_abs_diff(rep.features[0], h) <= 1e-15);
}

TEST_CASE("mode E with a silenced radiomic branch reproduces C_noRad pooling") {
  const std::size_t d = 6, r = 4, hidden = 5;
  ParameterStore es, cs;
  Rng rng(25);
  RadmilAggregator e(es, d, r, {RadmilMode::kE, false, hidden, hidden}, rng);
  RadmilAggregator c(cs, d, r, {RadmilMode::kCNoRad, false, hidden, hidden}, rng);
  for (const char* n : {"radmil/amil1/fc1", "radmil/amil1/fc2"}) {
    auto src = es.get(n).data();
    std::copy(src.begin(), src.end(), cs.get(n).mutable_data().begin());
  }
  for (double& v : es.get("radmil/radmap/w").mutable_data()) v = 0.0;
  auto bag = random_bag(rng, d, r);
  auto pooled = c.aggregate(bag).features[0];
  // Second head saturates towards whatever is aligned with the pooled deep
  // vector; the zero radiomic map scores exactly 0.
  auto fc1 = es.get("radmil/amil2/fc1").mutable_data();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < hidden; ++j) fc1[i * hidden + j] = 1e3 * pooled[i];
  for (double& v : es.get("radmil/amil2/fc2").mutable_data()) v = 1e3;
  CHECK(e.aggregate(bag).features[0].to_vector() == pooled.to_vector());
}

TEST_CASE("every mode matches a hand-composed pipeline") {
  const std::size_t d = 6, r = 4;
  for (auto mode : {RadmilMode::kDefault, RadmilMode::kA, RadmilMode::kB, RadmilMode::kC,
                    RadmilMode::kCNoRad, RadmilMode::kD, RadmilMode::kE}) {
    for (bool lateral : {false, true}) {
      if (lateral && mode != RadmilMode::kE) continue;
      CAPTURE(to_string(mode));
      CAPTURE(lateral);
      ParameterStore store;
      Rng rng(26);
      RadmilAggregator agg(store, d, r, {mode, lateral, 3, 3}, rng);
      auto bag = random_bag(rng, d, r);
      auto rep = agg.aggregate(bag);
      std::vector<Vec> deep, rad;
      for (std::size_t v = 0; v < kViews; ++v) {
        deep.push_back(bag.deep[v].to_vector());
        rad.push_back(bag.radiomic[v].to_vector());
      }
      auto head = [&](const char* p, const char* which) {
        return store.get(std::string("radmil/") + p + "/" + which);
      };
      std::vector<Vec> expect;
      switch (mode) {
        case RadmilMode::kDefault:
          for (std::size_t v = 0; v < kViews; ++v)
            expect.push_back(ref_affine(cat(deep[v], rad[v]), head("merge", "w"), head("merge", "b")));
          break;
        case RadmilMode::kA:
          for (std::size_t v = 0; v < kViews; ++v)
            expect.push_back(ref_amil({deep[v], pad(rad[v], d)}, head("amil1", "fc1"), head("amil1", "fc2")));
          break;
        case RadmilMode::kB: {
          std::vector<Vec> merged;
          for (std::size_t v = 0; v < kViews; ++v)
            merged.push_back(ref_affine(cat(deep[v], rad[v]), head("merge", "w"), head("merge", "b")));
          expect.push_back(ref_amil(merged, head("amil1", "fc1"), head("amil1", "fc2")));
          break;
        }
        case RadmilMode::kC: {
          auto items = deep;
          for (auto& x : rad) items.push_back(pad(x, d));
          expect.push_back(ref_amil(items, head("amil1", "fc1"), head("amil1", "fc2")));
          break;
        }
        case RadmilMode::kCNoRad:
          expect.push_back(ref_amil(deep, head("amil1", "fc1"), head("amil1", "fc2")));
          break;
        case RadmilMode::kD: {
          std::vector<Vec> items{ref_amil(deep, head("amil1", "fc1"), head("amil1", "fc2"))};
          for (auto& x : rad) items.push_back(pad(x, d));
          expect.push_back(ref_amil(items, head("amil2", "fc1"), head("amil2", "fc2")));
          break;
        }
        case RadmilMode::kE: {
          Vec a;
          Vec pooled = ref_amil(deep, head("amil1", "fc1"), head("amil1", "fc2"), &a);
          if (lateral) {
            auto l = lateral_scores(std::vector<Tensor>(bag.deep.begin(), bag.deep.end()),
                                    agg.lateral_head());
            double denom = 0.0;
            for (std::size_t k = 0; k < kViews; ++k) denom += a[k] * l[k];
            pooled.assign(d, 0.0);
            for (std::size_t k = 0; k < kViews; ++k)
              for (std::size_t i = 0; i < d; ++i) pooled[i] += a[k] * l[k] / denom * deep[k][i];
          }
          Vec all;
          for (auto& x : rad) all = cat(all, x);
          Vec mapped = ref_affine(all, head("radmap", "w"), head("radmap", "b"));
          expect.push_back(ref_amil({pooled, mapped}, head("amil2", "fc1"), head("amil2", "fc2")));
          break;
        }
      }
      REQUIRE(rep.features.size() == expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) CHECK(max_diff(rep.features[i], expect[i]) <= 1e-12);
    }
  }
}

TEST_CASE("aggregator validation") {
  ParameterStore store;
  Rng rng(27);
  CHECK_THROWS_AS(RadmilAggregator(store, 4, 6, {RadmilMode::kC}, rng), ConfigError);
  ParameterStore s2;
  RadmilAggregator agg(s2, 6, 4, {RadmilMode::kE, false, 3, 3}, rng);
  auto bag = random_bag(rng, 6, 4);
  bag.radiomic[2] = test::randn(rng, {5});
  CHECK_THROWS_AS(agg.aggregate(bag), DimensionError);
  bag.deep[1] = Tensor();
  CHECK_THROWS_AS(agg.aggregate(bag), InputError);
}

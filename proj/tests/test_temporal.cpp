#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/error.hpp"
#include "trinet/model.hpp"
#include "trinet/temporal.hpp"
#include "trinet/trainer.hpp"

using namespace trinet;
using ad::Tensor;

namespace {

FeatureMap random_map(Rng& rng, std::size_t c, std::size_t s, std::size_t h, std::size_t w) {
  FeatureMap fm;
  fm.values = test::randn(rng, {c, s * h * w});
  fm.channels = c;
  fm.steps = s;
  fm.height = h;
  fm.width = w;
  return fm;
}

NonLocalWeights random_nl(Rng& rng, std::size_t c) {
  return {test::randn(rng, {c, c}, 0.5), test::randn(rng, {c, c}, 0.5),
          test::randn(rng, {c, c}, 0.5), test::randn(rng, {c, c}, 0.5)};
}

ShiftWeights random_shift(Rng& rng, std::size_t c) {
  return {test::randn(rng, {c, c}, 0.5), test::randn(rng, {c, c}, 0.5),
          test::randn(rng, {c, c}, 0.5), test::randn(rng, {1, c}, 0.5),
          test::randn(rng, {1, c}, 0.5), test::randn(rng, {c, c}, 0.5)};
}

}  // namespace

TEST_CASE("time decay closed forms") {
  TimeDecayParams p;
  const std::vector<double> at0{0.0}, at60{60.0}, at120{120.0};
  CHECK(compute_time_decay(at0, p)[0] == doctest::Approx(0.135335).epsilon(1e-5));
  CHECK(compute_time_decay(at60, p)[0] == doctest::Approx(0.122456).epsilon(1e-5));
  CHECK(compute_time_decay(at120, p)[0] == compute_time_decay(at60, p)[0]);
  const std::vector<double> seq{24, 12, 0};
  auto t = compute_time_decay(seq, p);
  CHECK(t[0] == doctest::Approx(std::exp(-2.04)).epsilon(1e-14));
  CHECK(t[1] == doctest::Approx(std::exp(-2.02)).epsilon(1e-14));
  CHECK(t[2] == doctest::Approx(std::exp(-2.0)).epsilon(1e-14));
  CHECK(t[0] <= t[1]);
  const std::vector<double> bad{-1.0};
  CHECK_THROWS_AS(compute_time_decay(bad, p), InputError);
  TimeDecayParams zero_t{2.0, 0.1, 0.0};
  CHECK_THROWS(compute_time_decay(at0, zero_t));
}

TEST_CASE("qkv projection") {
  Rng rng(10);
  auto x = random_map(rng, 3, 2, 2, 2);
  auto eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto zero = Tensor::zeros({3, 3});
  auto qkv = qkv_project(x, eye, zero, zero);
  CHECK(qkv.q.to_vector() == x.values.to_vector());
  for (double v : qkv.k.data()) CHECK(v == 0.0);

  auto mq = test::randn(rng, {3, 3});
  auto q = qkv_project(x, mq, zero, zero).q;
  const std::size_t n = x.positions();
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < 3; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 3; ++j) acc += mq[i * 3 + j] * x.values[j * n + pos];
      CHECK(q[i * n + pos] == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("decay disabled reproduces the vanilla blocks") {
  Rng rng(11);
  auto x = random_map(rng, 4, 3, 2, 2);
  auto nl = random_nl(rng, 4);
  auto sh = random_shift(rng, 4);
  const std::vector<double> dt{24, 12, 0};
  auto ones = compute_time_decay(dt, {0.0, 0.0, 60.0});
  CHECK(test::max_abs_diff(td_nonlocal(x, ones, nl).values, nonlocal_block(x, nl).values) == 0.0);
  CHECK(test::max_abs_diff(td_shift(x, ones, sh).values, shift_block(x, sh).values) == 0.0);
  CHECK_THROWS_AS(td_nonlocal(x, Tensor::full({2}, 1.0), nl), DimensionError);
  CHECK_THROWS_AS(td_shift(x, Tensor::full({4}, 1.0), sh), DimensionError);
}

TEST_CASE("attention weights are normalized") {
  Rng rng(12);
  auto x = random_map(rng, 4, 3, 2, 2);
  const std::vector<double> dt{24, 12, 0};
  auto t = compute_time_decay(dt, {});
  AttentionTrace nl_trace, sh_trace;
  td_nonlocal(x, t, random_nl(rng, 4), &nl_trace);
  const std::size_t n = x.positions();
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += nl_trace.attention[i * n + j];
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }
  td_shift(x, t, random_shift(rng, 4), &sh_trace);
  double sa = 0.0, sb = 0.0;
  for (double v : sh_trace.alpha.data()) sa += v;
  for (double v : sh_trace.beta.data()) sb += v;
  CHECK(std::abs(sa - 1.0) <= 1e-12);
  CHECK(std::abs(sb - 1.0) <= 1e-12);
}

TEST_CASE("single screening: decay acts as a pre-scaling of the query and key maps") {
  Rng rng(13);
  auto x = random_map(rng, 4, 1, 3, 3);
  auto nl = random_nl(rng, 4);
  const double t1 = 0.37;
  NonLocalWeights scaled = nl;
  scaled.mq = ad::scale(nl.mq, t1);
  scaled.mk = ad::scale(nl.mk, t1);
  auto td = td_nonlocal(x, Tensor::from_vector({1}, {t1}), nl);
  auto oracle = nonlocal_block(x, scaled);
  CHECK(test::max_abs_diff(td.values, oracle.values) <= 1e-12);
}

TEST_CASE("encoder on zero images with zero biases gives a zero vector") {
  for (auto kind : {AttentionKind::kNone, AttentionKind::kTdNonLocal, AttentionKind::kTdShift}) {
    ParameterStore store;
    Rng rng(14);
    TemporalEncoder enc(store, {4, 2, 8}, {kind, {}}, rng);
    ViewSequence seq{Tensor::zeros({2, 8, 8}), {12, 0}};
    auto m = enc.encode_view(seq);
    CHECK(m.shape() == ad::Shape{4});
    for (double v : m.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("encoder is deterministic and rejects empty sequences") {
  ParameterStore store;
  Rng rng(15);
  TemporalEncoder enc(store, {4, 2, 8}, {AttentionKind::kTdShift, {}}, rng);
  Rng data(16);
  ViewSequence seq{test::randn(data, {3, 8, 8}), {24, 12, 0}};
  CHECK(enc.encode_view(seq).to_vector() == enc.encode_view(seq).to_vector());
  ViewSequence empty{Tensor::zeros({0, 8, 8}), {}};
  CHECK_THROWS_AS(enc.encode_view(empty), InputError);
}

TEST_CASE("pooling after the attention block ignores position order") {
  ParameterStore store;
  Rng rng(17);
  TemporalEncoder enc(store, {4, 1, 8}, {AttentionKind::kTdNonLocal, {}}, rng);
  store.get("attn/out").mutable_data()[0] = 0.7;
  Rng data(18);
  auto frames = test::randn(data, {2, 4, 4, 4});
  const std::vector<double> dt{6, 0};
  auto fm = enc.attention().forward(to_feature_map(frames), dt);
  const std::size_t c = fm.channels, n = fm.positions();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  data.shuffle(perm);
  std::vector<double> shuffled(c * n);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < n; ++j) shuffled[i * n + j] = fm.values[i * n + perm[j]];
  auto pooled = enc.attend_and_pool(frames, dt);
  auto repooled = ad::mean(Tensor::from_vector({c, n}, shuffled), 1);
  CHECK(test::max_abs_diff(pooled, repooled) <= 1e-12);
}

TEST_CASE("time-decay fine-tuning with no steps returns the pretrained weights") {
  ModelConfig mc;
  mc.encoder = {4, 2, 8};
  mc.attention.kind = AttentionKind::kShift;
  mc.radmil.attention_hidden = 4;
  TriNet vanilla(mc, 1);
  mc.attention.kind = AttentionKind::kTdShift;
  TriNet td(mc, 2);
  const auto pretrained = vanilla.params().snapshot();
  std::vector<ExamInput> none;
  finetune_td(td, pretrained, two_step_schedule(0, 0), none, nullptr, TrainConfig{});
  CHECK(checksum(td.params().snapshot()) == checksum(pretrained));

  mc.encoder.channels = 8;
  TriNet wrong(mc, 3);
  CHECK_THROWS_AS(finetune_td(wrong, pretrained, two_step_schedule(0, 0), none, nullptr, {}),
                  CheckpointError);
}

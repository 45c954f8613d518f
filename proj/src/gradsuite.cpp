#include "trinet/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "trinet/error.hpp"
#include "trinet/gradcheck.hpp"
#include "trinet/hazard.hpp"
#include "trinet/radmil.hpp"
#include "trinet/rng.hpp"
#include "trinet/temporal.hpp"

namespace trinet {

using ad::Shape;
using ad::Tensor;

namespace {

Tensor randn(Rng& rng, const Shape& shape, double sd = 1.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor::from_vector(shape, std::move(v));
}

Tensor uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vector(shape, std::move(v));
}

// Values bounded away from zero so relu's kink is never crossed.
Tensor off_zero(Rng& rng, const Shape& shape) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return Tensor::from_vector(shape, std::move(v));
}

// Random projection to a scalar so every output component is exercised.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum_all(ad::mul(y, randn(rng, y.shape())));
}

void randomize(ParameterStore& store, Rng& rng, double sd) {
  for (const auto& [name, t] : store.items()) {
    for (double& x : store.get(name).mutable_data()) x = rng.normal(0.0, sd);
  }
}

std::vector<Tensor> leaves(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : store.items()) out.push_back(t);
  return out;
}

class Suite {
 public:
  void check(const std::string& name, bool composite, const std::function<Tensor()>& f,
             std::vector<Tensor> inputs) {
    GradcheckEntry e;
    e.name = name;
    e.composite = composite;
    e.tolerance = composite ? kCompositeTolerance : kPrimitiveTolerance;
    try {
      e.max_rel_error = ad::grad_check(f, std::move(inputs));
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    entries.push_back(std::move(e));
  }

  std::vector<GradcheckEntry> entries;
};

void primitives(Suite& s) {
  Rng rng(101);
  auto a = randn(rng, {3, 4}), b = randn(rng, {4, 2}), row = randn(rng, {4});
  auto c = randn(rng, {3, 4}), pos = uniform(rng, {3, 4}, 1.0, 2.0);
  auto cube = randn(rng, {2, 3, 4});
  auto p = [](const Tensor& y) { return project(y, 7); };

  s.check("matmul", false, [&] { return p(ad::matmul(a, b)); }, {a, b});
  s.check("transpose", false, [&] { return p(ad::transpose(a)); }, {a});
  s.check("swap_axes01", false, [&] { return p(ad::swap_axes01(cube)); }, {cube});
  s.check("add", false, [&] { return p(ad::add(a, row)); }, {a, row});
  s.check("sub", false, [&] { return p(ad::sub(a, c)); }, {a, c});
  s.check("mul", false, [&] { return p(ad::mul(a, row)); }, {a, row});
  s.check("div", false, [&] { return p(ad::div(a, pos)); }, {a, pos});
  s.check("scale", false, [&] { return p(ad::scale(a, -1.7)); }, {a});
  s.check("add_scalar", false, [&] { return p(ad::add_scalar(a, 0.3)); }, {a});
  s.check("neg", false, [&] { return p(ad::neg(a)); }, {a});
  auto kinked = off_zero(rng, {3, 4});
  s.check("relu", false, [&] { return p(ad::relu(kinked)); }, {kinked});
  s.check("tanh", false, [&] { return p(ad::tanh(a)); }, {a});
  s.check("sigmoid", false, [&] { return p(ad::sigmoid(a)); }, {a});
  s.check("exp", false, [&] { return p(ad::exp(a)); }, {a});
  s.check("log", false, [&] { return p(ad::log(pos)); }, {pos});
  s.check("sum", false, [&] { return p(ad::sum(cube, 1)); }, {cube});
  s.check("mean", false, [&] { return p(ad::mean(cube, 2)); }, {cube});
  s.check("sum_all", false, [&] { return ad::sum_all(ad::mul(a, a)); }, {a});
  s.check("mean_all", false, [&] { return ad::mean_all(ad::mul(a, a)); }, {a});
  s.check("softmax", false, [&] { return p(ad::softmax(a, 1)); }, {a});
  s.check("reshape", false, [&] { return p(ad::reshape(a, {2, 6})); }, {a});
  s.check("slice", false, [&] { return p(ad::slice(cube, 1, 2)); }, {cube});
  s.check("stack", false, [&] { return p(ad::stack({a, c})); }, {a, c});
  s.check("concat", false, [&] { return p(ad::concat({a, c})); }, {a, c});
  s.check("embedding_lookup", false, [&] { return p(ad::embedding_lookup(a, 2)); }, {a});

  auto img = randn(rng, {2, 3, 5, 5}), w = randn(rng, {4, 3, 3, 3}), bias = randn(rng, {4});
  s.check("conv3x3", false, [&] { return p(ad::conv3x3(img, w, bias)); }, {img, w, bias});
  auto pool_in = randn(rng, {2, 3, 4, 4});
  s.check("avg_pool2", false, [&] { return p(ad::avg_pool2(pool_in)); }, {pool_in});

  const std::vector<double> targets{1.0, 0.0, 1.0, 0.3, 0.0};
  const std::vector<double> mask{1.0, 1.0, 0.0, 1.0, 1.0};
  auto logits = randn(rng, {5});
  s.check("bce_with_logits", false, [&] { return ad::bce_with_logits(logits, targets, mask); },
          {logits});
  auto probs = uniform(rng, {5}, 0.1, 0.9);
  s.check("bce_probs", false, [&] { return ad::bce_probs(probs, targets, mask); }, {probs});
}

void attention(Suite& s) {
  const std::size_t channels = 4;
  const std::vector<double> deltas{30.0, 14.0, 0.0};
  for (auto kind : {AttentionKind::kNonLocal, AttentionKind::kTdNonLocal, AttentionKind::kShift,
                    AttentionKind::kTdShift}) {
    ParameterStore store;
    Rng rng(202);
    AttentionBlockConfig cfg;
    cfg.kind = kind;
    AttentionBlock block(store, channels, cfg, rng);
    randomize(store, rng, 0.5);
    FeatureMap x;
    x.channels = channels;
    x.steps = deltas.size();
    x.height = 2;
    x.width = 2;
    x.values = randn(rng, {channels, x.positions()});
    auto inputs = leaves(store);
    inputs.push_back(x.values);
    s.check("block " + to_string(kind), true,
            [&] { return project(block.forward(x, deltas).values, 11); }, inputs);
  }

  for (auto kind : {AttentionKind::kNone, AttentionKind::kNonLocal, AttentionKind::kTdNonLocal,
                    AttentionKind::kShift, AttentionKind::kTdShift}) {
    ParameterStore store;
    Rng rng(203);
    EncoderConfig enc{3, 1, 8};
    AttentionBlockConfig attn;
    attn.kind = kind;
    TemporalEncoder encoder(store, enc, attn, rng);
    randomize(store, rng, 0.5);
    ViewSequence seq;
    seq.images = randn(rng, {2, 8, 8});
    seq.delta_months = {12.0, 0.0};
    s.check("encoder " + to_string(kind), true,
            [&] { return project(encoder.encode_view(seq), 12); }, leaves(store));
  }
}

FeatureBag random_bag(Rng& rng, std::size_t d, std::size_t r) {
  FeatureBag bag;
  for (std::size_t v = 0; v < kViews; ++v) {
    bag.deep[v] = randn(rng, {d});
    bag.radiomic[v] = randn(rng, {r});
  }
  return bag;
}

void aggregation(Suite& s) {
  const std::size_t d = 5, r = 3;
  struct Variant {
    RadmilMode mode;
    bool lateral;
  };
  const std::vector<Variant> variants{
      {RadmilMode::kDefault, false}, {RadmilMode::kA, false}, {RadmilMode::kB, false},
      {RadmilMode::kC, false},       {RadmilMode::kCNoRad, false}, {RadmilMode::kD, false},
      {RadmilMode::kE, false},       {RadmilMode::kE, true}};
  for (const auto& var : variants) {
    ParameterStore store;
    Rng rng(303);
    RadmilConfig cfg;
    cfg.mode = var.mode;
    cfg.lateral = var.lateral;
    cfg.attention_hidden = 4;
    cfg.lateral_hidden = 4;
    RadmilAggregator agg(store, d, r, cfg, rng);
    HazardHead head(store, d, true, rng);
    randomize(store, rng, 0.5);
    FeatureBag bag = random_bag(rng, d, r);
    auto inputs = leaves(store);
    for (std::size_t v = 0; v < kViews; ++v) {
      inputs.push_back(bag.deep[v]);
      inputs.push_back(bag.radiomic[v]);
    }
    const std::string name =
        "radmil " + to_string(var.mode) + (var.lateral ? " lateral" : "") + " + hazard";
    s.check(name, true, [&] { return project(full_forecast(agg, head, bag).probs, 13); }, inputs);
  }

  // Pools on their own, including the lateral weights.
  Rng rng(304);
  std::vector<Tensor> bag;
  for (int k = 0; k < 4; ++k) bag.push_back(randn(rng, {d}));
  AmilHead amil{randn(rng, {d, 4}), randn(rng, {4, 1})};
  std::vector<Tensor> inputs = bag;
  inputs.push_back(amil.fc1);
  inputs.push_back(amil.fc2);
  s.check("amil_pool", true, [&] { return project(amil_pool(bag, amil).z, 14); }, inputs);
  auto a = ad::softmax(randn(rng, {4}), 0).detach();
  auto l = uniform(rng, {4}, 0.1, 0.9);
  std::vector<Tensor> lp = bag;
  lp.push_back(a);
  lp.push_back(l);
  s.check("lateral_pool", true, [&] { return project(lateral_pool(bag, a, l), 15); }, lp);
}

void hazard(Suite& s) {
  for (bool embed : {false, true}) {
    ParameterStore store;
    Rng rng(404);
    HazardHead head(store, 6, embed, rng);
    randomize(store, rng, 0.5);
    auto x = randn(rng, {6});
    auto inputs = leaves(store);
    inputs.push_back(x);
    HorizonTargets t = horizon_targets({true, 20.0});
    s.check(std::string("hazard ") + (embed ? "with" : "without") + " time embedding", true,
            [&] { return ad::add(project(head.logits(x), 16), horizon_loss(head.forecast(x), t)); },
            inputs);
  }
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite() {
  Suite s;
  primitives(s);
  attention(s);
  aggregation(s);
  hazard(s);
  return std::move(s.entries);
}

}  // namespace trinet

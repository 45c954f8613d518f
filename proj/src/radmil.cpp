#include "trinet/radmil.hpp"

#include <cmath>

#include "trinet/error.hpp"
#include "trinet/log.hpp"

namespace trinet {

std::string to_string(RadmilMode mode) {
  switch (mode) {
    case RadmilMode::kDefault: return "Default";
    case RadmilMode::kA: return "A";
    case RadmilMode::kB: return "B";
    case RadmilMode::kC: return "C";
    case RadmilMode::kCNoRad: return "C_noRad";
    case RadmilMode::kD: return "D";
    case RadmilMode::kE: return "E";
  }
  return "E";
}

RadmilMode parse_radmil_mode(const std::string& name) {
  for (auto m : {RadmilMode::kDefault, RadmilMode::kA, RadmilMode::kB, RadmilMode::kC,
                 RadmilMode::kCNoRad, RadmilMode::kD, RadmilMode::kE}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown RADMIL mode '" + name + "'");
}

void RadmilConfig::validate() const {
  if (lateral && mode != RadmilMode::kE) throw ConfigError("lateral attention requires mode E");
  if (attention_hidden == 0 || lateral_hidden == 0) {
    throw ConfigError("attention hidden widths must be positive");
  }
}

namespace {

ad::Tensor stack_bag(const std::vector<ad::Tensor>& bag) {
  if (bag.empty()) throw InputError("empty bag");
  const std::size_t d = bag.front().numel();
  for (const auto& h : bag) {
    if (h.rank() != 1 || h.numel() != d) throw DimensionError("bag items must share width");
  }
  return ad::stack(bag);
}

// [K, D] -> [K] raw scores fc2 . tanh(fc1 . h_k)
ad::Tensor head_scores(const ad::Tensor& h, const ad::Tensor& fc1, const ad::Tensor& fc2) {
  auto hidden = ad::tanh(ad::matmul(h, fc1));
  auto s = ad::matmul(hidden, fc2);
  return ad::reshape(s, {h.dim(0)});
}

ad::Tensor weighted_sum(const ad::Tensor& w, const ad::Tensor& h) {
  const std::size_t k = h.dim(0);
  return ad::reshape(ad::matmul(ad::reshape(w, {1, k}), h), {h.dim(1)});
}

ad::Tensor gaussian(const ad::Shape& shape, double sd, Rng& rng) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return ad::Tensor::from_vector(shape, std::move(v));
}

AmilHead make_head(ParameterStore& store, const std::string& prefix, std::size_t d,
                   std::size_t hidden, Rng& rng) {
  AmilHead h;
  h.fc1 = store.add(prefix + "fc1", gaussian({d, hidden}, 1.0 / std::sqrt(double(d)), rng));
  h.fc2 = store.add(prefix + "fc2", gaussian({hidden, 1}, 1.0 / std::sqrt(double(hidden)), rng));
  return h;
}

}  // namespace

AmilResult amil_pool(const std::vector<ad::Tensor>& bag, const AmilHead& head) {
  auto h = stack_bag(bag);
  auto a = ad::softmax(head_scores(h, head.fc1, head.fc2), 0);
  return {weighted_sum(a, h), a};
}

ad::Tensor lateral_scores(const std::vector<ad::Tensor>& bag, const LateralHead& head) {
  auto h = stack_bag(bag);
  auto s = head_scores(h, head.fc1, head.fc2);
  return head.squash == LateralSquash::kSigmoid ? ad::sigmoid(s) : ad::softmax(s, 0);
}

ad::Tensor lateral_pool(const std::vector<ad::Tensor>& bag, const ad::Tensor& a,
                        const ad::Tensor& l, ad::Tensor* weights, bool* degenerate) {
  auto h = stack_bag(bag);
  const std::size_t k = h.dim(0);
  if (a.numel() != k || l.numel() != k) throw DimensionError("attention length differs from bag");
  auto al = ad::mul(ad::reshape(a, {k}), ad::reshape(l, {k}));
  auto denom = ad::reshape(ad::sum_all(al), {1});
  const bool tiny = denom.item() <= kLateralEps;
  if (tiny) {
    log::warning("degenerate lateral attention: sum(a*l) = " + std::to_string(denom.item()));
    denom = ad::add_scalar(denom, kLateralEps);
  }
  if (degenerate) *degenerate = tiny;
  auto abar = ad::div(al, denom);
  if (weights) *weights = abar;
  return weighted_sum(abar, h);
}

RadmilAggregator::RadmilAggregator(ParameterStore& store, std::size_t deep_width,
                                   std::size_t radiomic_width, const RadmilConfig& cfg, Rng& rng)
    : cfg_(cfg), d_(deep_width), r_(radiomic_width) {
  cfg.validate();
  if (d_ == 0) throw ConfigError("deep feature width must be positive");
  const bool pads = cfg.mode == RadmilMode::kA || cfg.mode == RadmilMode::kC ||
                    cfg.mode == RadmilMode::kD;
  if (pads && r_ > d_) {
    throw ConfigError("radiomic width " + std::to_string(r_) + " exceeds deep width " +
                      std::to_string(d_) + " for mode " + to_string(cfg.mode));
  }
  const std::size_t da = cfg.attention_hidden;
  switch (cfg.mode) {
    case RadmilMode::kDefault:
    case RadmilMode::kB: {
      const double sd = 1.0 / std::sqrt(double(d_ + r_));
      merge_w_ = store.add("radmil/merge/w", gaussian({d_ + r_, d_}, sd, rng));
      merge_b_ = store.add("radmil/merge/b", ad::Tensor::zeros({d_}));
      if (cfg.mode == RadmilMode::kB) amil1_ = make_head(store, "radmil/amil1/", d_, da, rng);
      break;
    }
    case RadmilMode::kA:
    case RadmilMode::kC:
    case RadmilMode::kCNoRad:
      amil1_ = make_head(store, "radmil/amil1/", d_, da, rng);
      break;
    case RadmilMode::kD:
      amil1_ = make_head(store, "radmil/amil1/", d_, da, rng);
      amil2_ = make_head(store, "radmil/amil2/", d_, da, rng);
      break;
    case RadmilMode::kE: {
      amil1_ = make_head(store, "radmil/amil1/", d_, da, rng);
      amil2_ = make_head(store, "radmil/amil2/", d_, da, rng);
      const double sd = 1.0 / std::sqrt(double(kViews * r_));
      radmap_w_ = store.add("radmil/radmap/w", gaussian({kViews * r_, d_}, sd, rng));
      radmap_b_ = store.add("radmil/radmap/b", ad::Tensor::zeros({d_}));
      // The lateral head exists in every mode-E model so that lateral and
      // non-lateral checkpoints share one layout.
      const std::size_t dl = cfg.lateral_hidden;
      lateral_.fc1 = store.add(std::string(kLateralPrefix) + "fc1",
                               gaussian({d_, dl}, 1.0 / std::sqrt(double(d_)), rng));
      lateral_.fc2 = store.add(std::string(kLateralPrefix) + "fc2",
                               gaussian({dl, 1}, 1.0 / std::sqrt(double(dl)), rng));
      lateral_.squash = cfg.squash;
      break;
    }
  }
}

void RadmilAggregator::check_bag(const FeatureBag& bag) const {
  for (std::size_t v = 0; v < kViews; ++v) {
    if (!bag.deep[v].defined()) throw InputError(std::string("missing view ") + kViewNames[v]);
    if (bag.deep[v].numel() != d_) throw DimensionError("deep feature width mismatch");
    if (cfg_.mode != RadmilMode::kCNoRad) {
      if (!bag.radiomic[v].defined()) {
        throw InputError(std::string("missing radiomics for view ") + kViewNames[v]);
      }
      if (bag.radiomic[v].numel() != r_) throw DimensionError("radiomic width mismatch");
    }
  }
}

ad::Tensor RadmilAggregator::pad_radiomic(const ad::Tensor& r) const {
  if (r_ == d_) return r;
  return ad::concat({r, ad::Tensor::zeros({d_ - r_})});
}

ad::Tensor RadmilAggregator::merge_view(const FeatureBag& bag, std::size_t view) const {
  auto cat = ad::reshape(ad::concat({bag.deep[view], bag.radiomic[view]}), {1, d_ + r_});
  return ad::add(ad::reshape(ad::matmul(cat, merge_w_), {d_}), merge_b_);
}

ExamRepresentation RadmilAggregator::aggregate(const FeatureBag& bag) const {
  check_bag(bag);
  ExamRepresentation out;
  std::vector<ad::Tensor> deep(bag.deep.begin(), bag.deep.end());
  switch (cfg_.mode) {
    case RadmilMode::kDefault:
      for (std::size_t v = 0; v < kViews; ++v) out.features.push_back(merge_view(bag, v));
      break;
    case RadmilMode::kA:
      for (std::size_t v = 0; v < kViews; ++v) {
        out.features.push_back(amil_pool({bag.deep[v], pad_radiomic(bag.radiomic[v])}, amil1_).z);
      }
      break;
    case RadmilMode::kB: {
      std::vector<ad::Tensor> merged;
      for (std::size_t v = 0; v < kViews; ++v) merged.push_back(merge_view(bag, v));
      auto r = amil_pool(merged, amil1_);
      out.features.push_back(r.z);
      out.view_attention = r.a;
      break;
    }
    case RadmilMode::kC: {
      std::vector<ad::Tensor> items = deep;
      for (std::size_t v = 0; v < kViews; ++v) items.push_back(pad_radiomic(bag.radiomic[v]));
      auto r = amil_pool(items, amil1_);
      out.features.push_back(r.z);
      out.view_attention = ad::slice(r.a, 0, kViews);
      break;
    }
    case RadmilMode::kCNoRad: {
      auto r = amil_pool(deep, amil1_);
      out.features.push_back(r.z);
      out.view_attention = r.a;
      break;
    }
    case RadmilMode::kD: {
      auto first = amil_pool(deep, amil1_);
      std::vector<ad::Tensor> items{first.z};
      for (std::size_t v = 0; v < kViews; ++v) items.push_back(pad_radiomic(bag.radiomic[v]));
      out.features.push_back(amil_pool(items, amil2_).z);
      out.view_attention = first.a;
      break;
    }
    case RadmilMode::kE: {
      auto first = amil_pool(deep, amil1_);
      ad::Tensor pooled = first.z;
      out.view_attention = first.a;
      if (cfg_.lateral) {
        out.lateral = lateral_scores(deep, lateral_);
        pooled = lateral_pool(deep, first.a, out.lateral, &out.lateral_weights);
      }
      std::vector<ad::Tensor> rads(bag.radiomic.begin(), bag.radiomic.end());
      auto cat = ad::reshape(ad::concat(rads), {1, kViews * r_});
      auto mapped = ad::add(ad::reshape(ad::matmul(cat, radmap_w_), {d_}), radmap_b_);
      out.features.push_back(amil_pool({pooled, mapped}, amil2_).z);
      break;
    }
  }
  return out;
}

ad::Tensor RadmilAggregator::view_lateral_scores(const FeatureBag& bag) const {
  if (!has_lateral_head()) throw ContractError("model has no lateral attention head");
  std::vector<ad::Tensor> deep(bag.deep.begin(), bag.deep.end());
  return lateral_scores(deep, lateral_);
}

}  // namespace trinet

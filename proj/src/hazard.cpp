#include "trinet/hazard.hpp"

#include <cmath>

#include "trinet/error.hpp"
#include "trinet/log.hpp"

namespace trinet {

namespace {
constexpr std::size_t kSteps = kHorizons - 1;

ad::Tensor gaussian(const ad::Shape& shape, double sd, Rng& rng) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return ad::Tensor::from_vector(shape, std::move(v));
}
}  // namespace

RiskCurve ForecastTensor::curve() const {
  RiskCurve c;
  auto p = probs.data();
  for (std::size_t k = 0; k < kHorizons; ++k) {
    c.probs[k] = p[k];
    c.logits[k] = logits.defined() ? logits.data()[k] : std::log(p[k] / (1.0 - p[k]));
  }
  return c;
}

HazardHead::HazardHead(ParameterStore& store, std::size_t width, bool use_time_embed, Rng& rng)
    : width_(width), use_time_embed_(use_time_embed) {
  if (width == 0) throw ConfigError("hazard head width must be positive");
  const double sd = 1.0 / std::sqrt(static_cast<double>(width));
  base_w_ = store.add("hazard/base_w", gaussian({width}, sd, rng));
  base_b_ = store.add("hazard/base_b", ad::Tensor::full({1}, -2.0));
  marginal_w_ = store.add("hazard/marginal_w", gaussian({kSteps, width}, sd, rng));
  marginal_b_ = store.add("hazard/marginal_b", ad::Tensor::full({kSteps}, 0.1));
  embed_ = store.add("hazard/time_embed", gaussian({kHorizons, width}, 0.01, rng));
  std::vector<double> tri(kHorizons * kSteps, 0.0);
  for (std::size_t k = 0; k < kHorizons; ++k) {
    for (std::size_t t = 0; t < k; ++t) tri[k * kSteps + t] = 1.0;
  }
  cumulative_ = ad::Tensor::from_vector({kHorizons, kSteps}, std::move(tri));
}

ad::Tensor HazardHead::logits(const ad::Tensor& x) const {
  if (x.rank() != 1 || x.numel() != width_) {
    throw DimensionError("hazard head expects [" + std::to_string(width_) + "], got " +
                         ad::shape_str(x.shape()));
  }
  // Row t-1 of `inputs` feeds marginal unit t.
  ad::Tensor inputs = use_time_embed_ ? ad::add(ad::slice(embed_, 1, kHorizons), x)
                                      : ad::reshape(x, {1, width_});
  auto pre = ad::add(ad::sum(ad::mul(inputs, marginal_w_), 1), marginal_b_);
  auto hazards = ad::relu(pre);  // [10]
  auto base = ad::add(ad::reshape(ad::sum_all(ad::mul(x, base_w_)), {1}), base_b_);
  auto running = ad::reshape(ad::matmul(cumulative_, ad::reshape(hazards, {kSteps, 1})),
                             {kHorizons});
  return ad::add(running, base);
}

ForecastTensor HazardHead::forecast(const ad::Tensor& x) const {
  auto l = logits(x);
  return {l, ad::sigmoid(l)};
}

ForecastTensor forecast_representation(const ExamRepresentation& rep, const HazardHead& head) {
  if (rep.features.empty()) throw ContractError("empty exam representation");
  if (rep.features.size() == 1) return head.forecast(rep.features.front());
  std::vector<ad::Tensor> probs;
  for (const auto& f : rep.features) probs.push_back(head.forecast(f).probs);
  return {ad::Tensor{}, ad::mean(ad::stack(probs), 0)};
}

ForecastTensor full_forecast(const RadmilAggregator& aggregator, const HazardHead& head,
                             const FeatureBag& bag) {
  return forecast_representation(aggregator.aggregate(bag), head);
}

std::size_t HorizonTargets::observed() const {
  std::size_t n = 0;
  for (double m : mask) n += m > 0.0;
  return n;
}

HorizonTargets horizon_targets(const Outcome& outcome) {
  if (!(outcome.months >= 0.0)) throw InputError("outcome months must be non-negative");
  HorizonTargets h;
  if (!outcome.diagnosed && outcome.months <= 0.0) {
    log::warning("censored outcome with zero follow-up contributes no horizons");
    return h;
  }
  for (std::size_t k = 0; k < kHorizons; ++k) {
    const double horizon = kMonthsPerHorizon * static_cast<double>(k);
    if (outcome.diagnosed) {
      h.target[k] = outcome.months <= horizon ? 1.0 : 0.0;
      h.mask[k] = 1.0;
    } else if (horizon <= outcome.months) {
      h.mask[k] = 1.0;
    }
  }
  return h;
}

ad::Tensor horizon_loss(const ForecastTensor& forecast, const HorizonTargets& targets) {
  if (forecast.logits.defined()) {
    return ad::bce_with_logits(forecast.logits, targets.target, targets.mask);
  }
  return ad::bce_probs(forecast.probs, targets.target, targets.mask);
}

}  // namespace trinet

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "trinet/checkpoint.hpp"
#include "trinet/radmil.hpp"
#include "trinet/rng.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

// Horizon index k covers k six-month intervals: 0 = now, 10 = five years.
inline constexpr std::size_t kHorizons = 11;
inline constexpr double kMonthsPerHorizon = 6.0;

struct RiskCurve {
  std::array<double, kHorizons> logits{};
  std::array<double, kHorizons> probs{};

  // Cumulative risk k years ahead (k in 1..5), read at horizon index 2k.
  double yearly(std::size_t k) const { return probs[2 * k]; }
};

// Differentiable forecast. `logits` is undefined when the forecast averages
// several per-view curves in probability space.
struct ForecastTensor {
  ad::Tensor logits;  // [11]
  ad::Tensor probs;   // [11]

  RiskCurve curve() const;
};

// logit(k) = B(x) + sum_{t=1..k} relu(w_t . (x + e(t)) + b_t)
class HazardHead {
 public:
  HazardHead(ParameterStore& store, std::size_t width, bool use_time_embed, Rng& rng);

  ad::Tensor logits(const ad::Tensor& x) const;
  ForecastTensor forecast(const ad::Tensor& x) const;
  RiskCurve risk_curve(const ad::Tensor& x) const { return forecast(x).curve(); }

  bool use_time_embed() const { return use_time_embed_; }
  std::size_t width() const { return width_; }

 private:
  std::size_t width_;
  bool use_time_embed_;
  ad::Tensor base_w_;      // [D]
  ad::Tensor base_b_;      // [1]
  ad::Tensor marginal_w_;  // [10, D]
  ad::Tensor marginal_b_;  // [10]
  ad::Tensor embed_;       // [11, D]; row 0 is never added
  ad::Tensor cumulative_;  // [11, 10] constant lower-triangular ones
};

// Aggregation followed by the hazard head. Per-view representations are
// combined by averaging probabilities.
ForecastTensor full_forecast(const RadmilAggregator& aggregator, const HazardHead& head,
                             const FeatureBag& bag);
ForecastTensor forecast_representation(const ExamRepresentation& rep, const HazardHead& head);

// Outcome relative to the exam being scored.
struct Outcome {
  bool diagnosed = false;
  double months = 0.0;  // months to diagnosis, or follow-up length when censored
};

struct HorizonTargets {
  std::array<double, kHorizons> target{};
  std::array<double, kHorizons> mask{};

  std::size_t observed() const;
};

// Target 1{diagnosis <= 6k months}; censored horizons beyond follow-up are
// masked. A censored outcome with no follow-up masks everything (warning).
HorizonTargets horizon_targets(const Outcome& outcome);

// Masked mean binary cross-entropy over horizons.
ad::Tensor horizon_loss(const ForecastTensor& forecast, const HorizonTargets& targets);

}  // namespace trinet

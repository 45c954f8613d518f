#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "trinet/checkpoint.hpp"
#include "trinet/rng.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

inline constexpr std::size_t kViews = 4;
enum class View : std::size_t { kLCC = 0, kLMLO = 1, kRCC = 2, kRMLO = 3 };
inline constexpr std::array<const char*, kViews> kViewNames = {"LCC", "LMLO", "RCC", "RMLO"};
inline bool is_left(std::size_t view) { return view < 2; }

// Per-exam inputs: four deep view features [D] and four radiomic vectors [R],
// indexed in View order.
struct FeatureBag {
  std::array<ad::Tensor, kViews> deep;
  std::array<ad::Tensor, kViews> radiomic;
};

enum class RadmilMode { kDefault, kA, kB, kC, kCNoRad, kD, kE };
std::string to_string(RadmilMode mode);
RadmilMode parse_radmil_mode(const std::string& name);

enum class LateralSquash { kSigmoid, kSoftmax };

struct RadmilConfig {
  RadmilMode mode = RadmilMode::kE;
  bool lateral = false;
  std::size_t attention_hidden = 64;
  std::size_t lateral_hidden = 64;
  LateralSquash squash = LateralSquash::kSigmoid;

  void validate() const;
};

struct AmilHead {
  ad::Tensor fc1;  // [D, d_a]
  ad::Tensor fc2;  // [d_a, 1]
};

struct LateralHead {
  ad::Tensor fc1;  // [D, d_l]
  ad::Tensor fc2;  // [d_l, 1]
  LateralSquash squash = LateralSquash::kSigmoid;
};

struct AmilResult {
  ad::Tensor z;  // [D]
  ad::Tensor a;  // [K]
};

inline constexpr double kLateralEps = 1e-8;

// a_k = softmax_k(fc2 . tanh(fc1 . h_k)), z = sum_k a_k h_k.
AmilResult amil_pool(const std::vector<ad::Tensor>& bag, const AmilHead& head);
// l_k = squash(fc2 . tanh(fc1 . h_k)).
ad::Tensor lateral_scores(const std::vector<ad::Tensor>& bag, const LateralHead& head);
// z = sum_k a_k l_k h_k / sum_i a_i l_i. When the denominator is at most
// kLateralEps it is regularized by +kLateralEps and a warning is logged;
// `degenerate` (optional) reports that case.
ad::Tensor lateral_pool(const std::vector<ad::Tensor>& bag, const ad::Tensor& a,
                        const ad::Tensor& l, ad::Tensor* weights = nullptr,
                        bool* degenerate = nullptr);

// Output of aggregate(). Default and A yield one feature per view whose
// risk predictions are averaged; every other mode yields a single feature.
struct ExamRepresentation {
  std::vector<ad::Tensor> features;
  ad::Tensor view_attention;   // AMIL weights over the deep views, when defined
  ad::Tensor lateral;          // l over the deep views (mode E with lateral)
  ad::Tensor lateral_weights;  // normalized a*l (mode E with lateral)
};

class RadmilAggregator {
 public:
  RadmilAggregator(ParameterStore& store, std::size_t deep_width, std::size_t radiomic_width,
                   const RadmilConfig& cfg, Rng& rng);

  ExamRepresentation aggregate(const FeatureBag& bag) const;
  // Lateral scores for the four deep views (mode E only).
  ad::Tensor view_lateral_scores(const FeatureBag& bag) const;

  const RadmilConfig& config() const { return cfg_; }
  bool has_lateral_head() const { return lateral_.fc1.defined(); }
  std::size_t deep_width() const { return d_; }
  std::size_t radiomic_width() const { return r_; }

  // Parameter-name prefix of the lateral head.
  static constexpr const char* kLateralPrefix = "radmil/lateral/";

  const AmilHead& first_head() const { return amil1_; }
  const AmilHead& second_head() const { return amil2_; }
  const LateralHead& lateral_head() const { return lateral_; }

 private:
  ad::Tensor pad_radiomic(const ad::Tensor& r) const;
  ad::Tensor merge_view(const FeatureBag& bag, std::size_t view) const;
  void check_bag(const FeatureBag& bag) const;

  RadmilConfig cfg_;
  std::size_t d_;
  std::size_t r_;
  AmilHead amil1_;
  AmilHead amil2_;
  LateralHead lateral_;
  ad::Tensor merge_w_, merge_b_;    // [D + R, D], [D]
  ad::Tensor radmap_w_, radmap_b_;  // [4R, D], [D]
};

}  // namespace trinet

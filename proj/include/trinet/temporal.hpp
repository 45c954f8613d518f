#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "trinet/checkpoint.hpp"
#include "trinet/rng.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

// Exponential down-weighting of older screenings:
//   t_i = exp(-A - B * min(dt_i, T) / T)
struct TimeDecayParams {
  double A = 2.0;
  double B = 0.1;
  double T = 60.0;  // months

  void validate() const;
};

// One decay factor per screening; delta_months[i] is the gap between
// screening i and the most recent one.
ad::Tensor compute_time_decay(std::span<const double> delta_months, const TimeDecayParams& params);

enum class AttentionKind { kNone, kNonLocal, kTdNonLocal, kShift, kTdShift };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& name);
bool uses_time_decay(AttentionKind kind);
// NL for TD-NL, SHIFT for TD-SHIFT, identity otherwise.
AttentionKind without_time_decay(AttentionKind kind);

struct AttentionBlockConfig {
  AttentionKind kind = AttentionKind::kNone;
  TimeDecayParams decay;  // read only by the time-decay kinds
};

// S screenings of one view, oldest first.
struct ViewSequence {
  ad::Tensor images;  // [S, H, W]
  std::vector<double> delta_months;

  void validate() const;
};

// Encoder activations flattened to [C, n] with n = steps * height * width
// (time-major, then row-major space).
struct FeatureMap {
  ad::Tensor values;
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t positions() const { return steps * height * width; }
  std::size_t positions_per_step() const { return height * width; }
};

// [S, C, h, w] backbone output -> FeatureMap.
FeatureMap to_feature_map(const ad::Tensor& frames);

struct Qkv {
  ad::Tensor q;
  ad::Tensor k;
  ad::Tensor v;
};

// 1x1 channel-mixing projections applied at every position.
Qkv qkv_project(const FeatureMap& x, const ad::Tensor& mq, const ad::Tensor& mk,
                const ad::Tensor& mv);

// Scales slice s of a [C, S*P] tensor by t[s].
ad::Tensor scale_time_slices(const ad::Tensor& values, const ad::Tensor& t, std::size_t steps);

struct NonLocalWeights {
  ad::Tensor mq, mk, mv;  // [C, C]
  ad::Tensor out;         // [C, C], residual projection
};

struct ShiftWeights {
  ad::Tensor mq, mk, mv;  // [C, C]
  ad::Tensor fc_q, fc_k;  // [1, C] position-scoring maps
  ad::Tensor out;         // [C, C]
};

// Softmax weights observed during a forward pass, for inspection.
struct AttentionTrace {
  ad::Tensor attention;  // non-local: [n, n], rows sum to 1
  ad::Tensor alpha;      // shift: [1, n]
  ad::Tensor beta;       // shift: [1, n]
};

// Vanilla blocks.
FeatureMap nonlocal_block(const FeatureMap& x, const NonLocalWeights& w,
                          AttentionTrace* trace = nullptr);
FeatureMap shift_block(const FeatureMap& x, const ShiftWeights& w,
                       AttentionTrace* trace = nullptr);
// Time-decay blocks; t has one entry per screening.
FeatureMap td_nonlocal(const FeatureMap& x, const ad::Tensor& t, const NonLocalWeights& w,
                       AttentionTrace* trace = nullptr);
FeatureMap td_shift(const FeatureMap& x, const ad::Tensor& t, const ShiftWeights& w,
                    AttentionTrace* trace = nullptr);

struct EncoderConfig {
  std::size_t channels = 32;
  std::size_t stages = 3;
  std::size_t image_size = 32;
};

// Per-frame stack of (3x3 conv, ReLU, residual add, 2x average pool).
class Backbone {
 public:
  Backbone(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);
  // [F, 1, H, W] -> [F, C, H / 2^stages, W / 2^stages]
  ad::Tensor forward(const ad::Tensor& frames) const;
  const EncoderConfig& config() const { return cfg_; }
  std::size_t output_side() const { return cfg_.image_size >> cfg_.stages; }

 private:
  EncoderConfig cfg_;
  std::vector<ad::Tensor> weights_;
  std::vector<ad::Tensor> biases_;
};

class AttentionBlock {
 public:
  AttentionBlock(ParameterStore& store, std::size_t channels, const AttentionBlockConfig& cfg,
                 Rng& rng);
  FeatureMap forward(const FeatureMap& x, std::span<const double> delta_months,
                     AttentionTrace* trace = nullptr) const;
  const AttentionBlockConfig& config() const { return cfg_; }

 private:
  AttentionBlockConfig cfg_;
  NonLocalWeights nl_;
  ShiftWeights shift_;
};

// Shared backbone + optional attention block + global average pooling.
class TemporalEncoder {
 public:
  TemporalEncoder(ParameterStore& store, const EncoderConfig& enc,
                  const AttentionBlockConfig& attn, Rng& rng);

  // Full path for one view sequence -> feature vector [C].
  ad::Tensor encode_view(const ViewSequence& seq) const;
  // Attention + pooling on precomputed backbone output [S, C, h, w].
  ad::Tensor attend_and_pool(const ad::Tensor& frames, std::span<const double> delta_months,
                             AttentionTrace* trace = nullptr) const;

  const Backbone& backbone() const { return backbone_; }
  const AttentionBlock& attention() const { return attention_; }
  std::size_t width() const { return backbone_.config().channels; }

 private:
  Backbone backbone_;
  AttentionBlock attention_;
};

}  // namespace trinet

#include "trinet/temporal.hpp"

#include <cmath>

#include "trinet/error.hpp"

namespace trinet {

void TimeDecayParams::validate() const {
  if (!(A >= 0.0) || !(B >= 0.0) || !(T > 0.0)) {
    throw ConfigError("time decay requires A >= 0, B >= 0, T > 0");
  }
}

ad::Tensor compute_time_decay(std::span<const double> delta_months, const TimeDecayParams& params) {
  params.validate();
  std::vector<double> t(delta_months.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double dt = delta_months[i];
    if (!(dt >= 0.0)) throw InputError("negative screening interval");
    const double clipped = std::min(dt, params.T) / params.T;
    t[i] = std::exp(-params.A - params.B * clipped);
  }
  const std::size_t n = t.size();
  return ad::Tensor::from_vector({n}, std::move(t));
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kNone: return "none";
    case AttentionKind::kNonLocal: return "NL";
    case AttentionKind::kTdNonLocal: return "TD-NL";
    case AttentionKind::kShift: return "SHIFT";
    case AttentionKind::kTdShift: return "TD-SHIFT";
  }
  return "none";
}

AttentionKind parse_attention_kind(const std::string& name) {
  for (auto k : {AttentionKind::kNone, AttentionKind::kNonLocal, AttentionKind::kTdNonLocal,
                 AttentionKind::kShift, AttentionKind::kTdShift}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown attention kind '" + name + "'");
}

bool uses_time_decay(AttentionKind kind) {
  return kind == AttentionKind::kTdNonLocal || kind == AttentionKind::kTdShift;
}

AttentionKind without_time_decay(AttentionKind kind) {
  if (kind == AttentionKind::kTdNonLocal) return AttentionKind::kNonLocal;
  if (kind == AttentionKind::kTdShift) return AttentionKind::kShift;
  return kind;
}

void ViewSequence::validate() const {
  if (!images.defined() || images.rank() != 3) throw InputError("view sequence must be [S, H, W]");
  const std::size_t s = images.dim(0);
  if (s == 0) throw InputError("view sequence has no screenings");
  if (delta_months.size() != s) throw InputError("delta_months length differs from screening count");
  if (delta_months.back() != 0.0) throw InputError("most recent screening must have zero interval");
  for (std::size_t i = 0; i + 1 < s; ++i) {
    if (delta_months[i] < delta_months[i + 1]) {
      throw InputError("screening intervals must be non-increasing from oldest to newest");
    }
  }
}

FeatureMap to_feature_map(const ad::Tensor& frames) {
  if (frames.rank() != 4) throw DimensionError("to_feature_map expects [S, C, h, w]");
  FeatureMap fm;
  fm.steps = frames.dim(0);
  fm.channels = frames.dim(1);
  fm.height = frames.dim(2);
  fm.width = frames.dim(3);
  const std::size_t p = fm.height * fm.width;
  auto t = ad::reshape(frames, {fm.steps, fm.channels, p});
  t = ad::swap_axes01(t);
  fm.values = ad::reshape(t, {fm.channels, fm.steps * p});
  return fm;
}

Qkv qkv_project(const FeatureMap& x, const ad::Tensor& mq, const ad::Tensor& mk,
                const ad::Tensor& mv) {
  return {ad::matmul(mq, x.values), ad::matmul(mk, x.values), ad::matmul(mv, x.values)};
}

ad::Tensor scale_time_slices(const ad::Tensor& values, const ad::Tensor& t, std::size_t steps) {
  if (t.rank() != 1 || t.dim(0) != steps) {
    throw DimensionError("time vector has " + std::to_string(t.rank() ? t.dim(0) : 0) +
                         " entries for " + std::to_string(steps) + " screenings");
  }
  const std::size_t c = values.dim(0);
  const std::size_t n = values.dim(1);
  auto cube = ad::reshape(values, {c, steps, n / steps});
  cube = ad::mul(cube, ad::reshape(t, {steps, 1}));
  return ad::reshape(cube, {c, n});
}

namespace {

void check_time_vector(const FeatureMap& x, const ad::Tensor& t) {
  if (t.rank() != 1 || t.dim(0) != x.steps) {
    throw DimensionError("time vector length does not match screening count");
  }
}

FeatureMap with_values(const FeatureMap& x, ad::Tensor values) {
  FeatureMap out = x;
  out.values = std::move(values);
  return out;
}

FeatureMap nonlocal_impl(const FeatureMap& x, const ad::Tensor* t, const NonLocalWeights& w,
                         AttentionTrace* trace) {
  Qkv qkv = qkv_project(x, w.mq, w.mk, w.mv);
  ad::Tensor q = qkv.q;
  ad::Tensor k = qkv.k;
  if (t) {
    q = scale_time_slices(q, *t, x.steps);
    k = scale_time_slices(k, *t, x.steps);
  }
  // attention[i, j] = softmax_j(q_i . k_j)
  ad::Tensor attention = ad::softmax(ad::matmul(ad::transpose(q), k), 1);
  if (trace) trace->attention = attention;
  ad::Tensor y = ad::matmul(qkv.v, ad::transpose(attention));
  return with_values(x, ad::add(x.values, ad::matmul(w.out, y)));
}

FeatureMap shift_impl(const FeatureMap& x, const ad::Tensor* t, const ShiftWeights& w,
                      AttentionTrace* trace) {
  Qkv qkv = qkv_project(x, w.mq, w.mk, w.mv);
  ad::Tensor q = t ? scale_time_slices(qkv.q, *t, x.steps) : qkv.q;
  ad::Tensor alpha = ad::softmax(ad::matmul(w.fc_q, q), 1);         // [1, n]
  ad::Tensor global_q = ad::matmul(q, ad::transpose(alpha));         // [C, 1]
  ad::Tensor p = ad::mul(global_q, qkv.k);                           // [C, n]
  ad::Tensor beta = ad::softmax(ad::matmul(w.fc_k, p), 1);           // [1, n]
  ad::Tensor global_k = ad::matmul(qkv.k, ad::transpose(beta));      // [C, 1]
  ad::Tensor y = ad::mul(global_k, qkv.v);                           // [C, n]
  if (trace) {
    trace->alpha = alpha;
    trace->beta = beta;
  }
  return with_values(x, ad::add(x.values, ad::matmul(w.out, y)));
}

}  // namespace

FeatureMap nonlocal_block(const FeatureMap& x, const NonLocalWeights& w, AttentionTrace* trace) {
  return nonlocal_impl(x, nullptr, w, trace);
}

FeatureMap shift_block(const FeatureMap& x, const ShiftWeights& w, AttentionTrace* trace) {
  return shift_impl(x, nullptr, w, trace);
}

FeatureMap td_nonlocal(const FeatureMap& x, const ad::Tensor& t, const NonLocalWeights& w,
                       AttentionTrace* trace) {
  check_time_vector(x, t);
  return nonlocal_impl(x, &t, w, trace);
}

FeatureMap td_shift(const FeatureMap& x, const ad::Tensor& t, const ShiftWeights& w,
                    AttentionTrace* trace) {
  check_time_vector(x, t);
  return shift_impl(x, &t, w, trace);
}

// ---------------------------------------------------------------------------

namespace {

ad::Tensor gaussian(const ad::Shape& shape, double sd, Rng& rng) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return ad::Tensor::from_vector(shape, std::move(v));
}

}  // namespace

Backbone::Backbone(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.channels == 0 || cfg.stages == 0) throw ConfigError("encoder needs channels and stages");
  if ((cfg.image_size >> cfg.stages) == 0 || (cfg.image_size % (1u << cfg.stages)) != 0) {
    throw ConfigError("image size must be divisible by 2^stages");
  }
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    const std::size_t cin = s == 0 ? 1 : cfg.channels;
    const std::string prefix = "encoder/stage" + std::to_string(s);
    const double sd = std::sqrt(2.0 / static_cast<double>(cin * 9)) * 0.5;
    weights_.push_back(store.add(prefix + "/w", gaussian({cfg.channels, cin, 3, 3}, sd, rng)));
    biases_.push_back(store.add(prefix + "/b", ad::Tensor::zeros({cfg.channels})));
  }
}

ad::Tensor Backbone::forward(const ad::Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != 1 || frames.dim(2) != cfg_.image_size ||
      frames.dim(3) != cfg_.image_size) {
    throw DimensionError("backbone expects [F, 1, " + std::to_string(cfg_.image_size) + ", " +
                         std::to_string(cfg_.image_size) + "], got " +
                         ad::shape_str(frames.shape()));
  }
  ad::Tensor x = frames;
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    ad::Tensor y = ad::relu(ad::conv3x3(x, weights_[s], biases_[s]));
    x = ad::avg_pool2(ad::add(x, y));
  }
  return x;
}

AttentionBlock::AttentionBlock(ParameterStore& store, std::size_t channels,
                               const AttentionBlockConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.kind == AttentionKind::kNone) return;
  if (uses_time_decay(cfg.kind)) cfg.decay.validate();
  const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
  auto mq = store.add("attn/mq", gaussian({channels, channels}, sd, rng));
  auto mk = store.add("attn/mk", gaussian({channels, channels}, sd, rng));
  auto mv = store.add("attn/mv", gaussian({channels, channels}, sd, rng));
  // Zero-initialised output projection: a fresh block is the identity.
  auto out = store.add("attn/out", ad::Tensor::zeros({channels, channels}));
  const auto base = without_time_decay(cfg.kind);
  if (base == AttentionKind::kNonLocal) {
    nl_ = {mq, mk, mv, out};
  } else {
    auto fq = store.add("attn/fc_q", gaussian({1, channels}, sd, rng));
    auto fk = store.add("attn/fc_k", gaussian({1, channels}, sd, rng));
    shift_ = {mq, mk, mv, fq, fk, out};
  }
}

FeatureMap AttentionBlock::forward(const FeatureMap& x, std::span<const double> delta_months,
                                   AttentionTrace* trace) const {
  switch (cfg_.kind) {
    case AttentionKind::kNone: return x;
    case AttentionKind::kNonLocal: return nonlocal_block(x, nl_, trace);
    case AttentionKind::kShift: return shift_block(x, shift_, trace);
    case AttentionKind::kTdNonLocal:
      return td_nonlocal(x, compute_time_decay(delta_months, cfg_.decay), nl_, trace);
    case AttentionKind::kTdShift:
      return td_shift(x, compute_time_decay(delta_months, cfg_.decay), shift_, trace);
  }
  return x;
}

TemporalEncoder::TemporalEncoder(ParameterStore& store, const EncoderConfig& enc,
                                 const AttentionBlockConfig& attn, Rng& rng)
    : backbone_(store, enc, rng), attention_(store, enc.channels, attn, rng) {}

ad::Tensor TemporalEncoder::attend_and_pool(const ad::Tensor& frames,
                                            std::span<const double> delta_months,
                                            AttentionTrace* trace) const {
  FeatureMap fm = to_feature_map(frames);
  if (delta_months.size() != fm.steps) {
    throw DimensionError("delta_months length differs from screening count");
  }
  fm = attention_.forward(fm, delta_months, trace);
  return ad::mean(fm.values, 1);
}

ad::Tensor TemporalEncoder::encode_view(const ViewSequence& seq) const {
  seq.validate();
  const std::size_t s = seq.images.dim(0);
  auto frames = ad::reshape(seq.images, {s, 1, seq.images.dim(1), seq.images.dim(2)});
  return attend_and_pool(backbone_.forward(frames), seq.delta_months);
}

}  // namespace trinet

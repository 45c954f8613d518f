#include "trinet/model.hpp"

#include "trinet/error.hpp"

namespace trinet {

std::vector<ExamRef> make_exam_refs(const std::vector<const PatientRecord*>& patients,
                                    bool all_exams) {
  std::vector<ExamRef> refs;
  for (const auto* p : patients) {
    if (p->screenings.empty()) continue;
    const std::size_t last = p->screenings.size() - 1;
    for (std::size_t i = all_exams ? 0 : last; i <= last; ++i) refs.push_back({p, i});
  }
  return refs;
}

ExamInput build_exam(const ExamRef& ref, const NormStats& stats, Rng* flips) {
  const PatientRecord& p = *ref.patient;
  if (ref.exam_index >= p.screenings.size()) throw InputError("exam index out of range");
  ExamInput ex;
  ex.patient_id = p.id;
  ex.exam_index = ref.exam_index;
  ex.laterality = p.laterality;
  const std::size_t s = ref.exam_index + 1;
  const double now = p.screenings[ref.exam_index].months_from_first;
  ex.outcome.diagnosed = p.diagnosed;
  ex.outcome.months = p.outcome_months - now;
  for (std::size_t v = 0; v < kViews; ++v) {
    const FlipDraw flip = flips ? draw_flips(*flips) : FlipDraw{};
    const Image& first = p.screenings[0].views[v];
    std::vector<double> pixels;
    pixels.reserve(s * first.height * first.width);
    std::vector<double> deltas(s);
    for (std::size_t i = 0; i < s; ++i) {
      auto img = normalize_image(p.screenings[i].views[v], stats, flip);
      pixels.insert(pixels.end(), img.begin(), img.end());
      deltas[i] = now - p.screenings[i].months_from_first;
    }
    ex.views[v].images = ad::Tensor::from_vector({s, first.height, first.width}, std::move(pixels));
    ex.views[v].delta_months = std::move(deltas);
    std::vector<double> r(kRadiomicWidth);
    for (std::size_t k = 0; k < kRadiomicWidth; ++k) {
      r[k] = (p.radiomics[ref.exam_index][v][k] - stats.radiomic_mean[k]) / stats.radiomic_sd[k];
    }
    ex.radiomic[v] = ad::Tensor::from_vector({kRadiomicWidth}, std::move(r));
  }
  return ex;
}

std::vector<ExamInput> build_exams(const std::vector<ExamRef>& refs, const NormStats& stats) {
  std::vector<ExamInput> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(build_exam(r, stats));
  return out;
}

TriNet::TriNet(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg),
      encoder_([&] {
        Rng rng(derive_seed(init_seed, "encoder"));
        return TemporalEncoder(params_, cfg.encoder, cfg.attention, rng);
      }()),
      aggregator_([&] {
        Rng rng(derive_seed(init_seed, "radmil"));
        return RadmilAggregator(params_, cfg.encoder.channels, cfg.radiomic_width, cfg.radmil, rng);
      }()),
      hazard_([&] {
        Rng rng(derive_seed(init_seed, "hazard"));
        return HazardHead(params_, cfg.encoder.channels, cfg.use_time_embed, rng);
      }()) {}

std::array<ad::Tensor, kViews> TriNet::backbone_frames(const ExamInput& exam) const {
  // All views of the exam share one backbone call.
  std::vector<ad::Tensor> parts;
  std::array<std::size_t, kViews> steps{};
  for (std::size_t v = 0; v < kViews; ++v) {
    exam.views[v].validate();
    const auto& img = exam.views[v].images;
    steps[v] = img.dim(0);
    parts.push_back(ad::reshape(img, {img.dim(0), 1, img.dim(1), img.dim(2)}));
  }
  auto out = encoder_.backbone().forward(ad::concat(parts));
  std::array<ad::Tensor, kViews> frames;
  std::size_t pos = 0;
  for (std::size_t v = 0; v < kViews; ++v) {
    frames[v] = ad::slice(out, pos, pos + steps[v]);
    pos += steps[v];
  }
  return frames;
}

FeatureBag TriNet::feature_bag(const ExamInput& exam,
                               std::array<AttentionTrace, kViews>* traces) const {
  const auto frames = exam.cached() ? exam.frames : backbone_frames(exam);
  FeatureBag bag;
  for (std::size_t v = 0; v < kViews; ++v) {
    bag.deep[v] = encoder_.attend_and_pool(frames[v], exam.views[v].delta_months,
                                           traces ? &(*traces)[v] : nullptr);
    bag.radiomic[v] = exam.radiomic[v];
  }
  return bag;
}

ForecastTensor TriNet::forward(const ExamInput& exam, ExamRepresentation* rep,
                               std::array<AttentionTrace, kViews>* traces) const {
  auto r = aggregator_.aggregate(feature_bag(exam, traces));
  auto f = forecast_representation(r, hazard_);
  if (rep) *rep = std::move(r);
  return f;
}

ad::Tensor TriNet::lateral_scores(const ExamInput& exam) const {
  return aggregator_.view_lateral_scores(feature_bag(exam));
}

std::vector<std::string> TriNet::trainable(const std::vector<std::string>& frozen_prefixes) const {
  std::vector<std::string> names;
  for (const auto& [name, t] : params_.items()) {
    bool frozen = false;
    for (const auto& p : frozen_prefixes) frozen = frozen || name.rfind(p, 0) == 0;
    if (!frozen) names.push_back(name);
  }
  return names;
}

void cache_backbone(const TriNet& model, std::vector<ExamInput>& exams) {
  ad::NoGradGuard guard;
  for (auto& ex : exams) ex.frames = model.backbone_frames(ex);
}

}  // namespace trinet

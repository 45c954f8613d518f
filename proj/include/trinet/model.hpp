#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trinet/checkpoint.hpp"
#include "trinet/cohort.hpp"
#include "trinet/hazard.hpp"
#include "trinet/radmil.hpp"
#include "trinet/temporal.hpp"

namespace trinet {

struct ModelConfig {
  EncoderConfig encoder;
  AttentionBlockConfig attention;
  RadmilConfig radmil;
  bool use_time_embed = true;
  std::size_t radiomic_width = kRadiomicWidth;
};

// One exam ready for the network: screenings up to and including the exam,
// normalized, plus the exam's own radiomics and its outcome.
struct ExamInput {
  std::string patient_id;
  std::size_t exam_index = 0;
  std::array<ViewSequence, kViews> views;
  std::array<ad::Tensor, kViews> radiomic;  // normalized [R]
  // Cached backbone output per view [S, C, h, w]; used instead of `views`
  // when defined.
  std::array<ad::Tensor, kViews> frames;
  Outcome outcome;
  Laterality laterality = Laterality::kNone;

  bool cached() const { return frames[0].defined(); }
};

struct ExamRef {
  const PatientRecord* patient = nullptr;
  std::size_t exam_index = 0;
};

// Last screening of every patient, or every screening when `all_exams`.
std::vector<ExamRef> make_exam_refs(const std::vector<const PatientRecord*>& patients,
                                    bool all_exams);
// `flips` (optional) draws one flip per view, shared across its screenings.
ExamInput build_exam(const ExamRef& ref, const NormStats& stats, Rng* flips = nullptr);
std::vector<ExamInput> build_exams(const std::vector<ExamRef>& refs, const NormStats& stats);

class TriNet {
 public:
  TriNet(const ModelConfig& cfg, std::uint64_t init_seed);
  TriNet(const TriNet&) = delete;
  TriNet& operator=(const TriNet&) = delete;

  ForecastTensor forward(const ExamInput& exam, ExamRepresentation* rep = nullptr,
                         std::array<AttentionTrace, kViews>* traces = nullptr) const;
  FeatureBag feature_bag(const ExamInput& exam,
                         std::array<AttentionTrace, kViews>* traces = nullptr) const;
  // Backbone output for each view, [S, C, h, w].
  std::array<ad::Tensor, kViews> backbone_frames(const ExamInput& exam) const;
  // Lateral attention per view (mode E).
  ad::Tensor lateral_scores(const ExamInput& exam) const;

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const TemporalEncoder& encoder() const { return encoder_; }
  const RadmilAggregator& aggregator() const { return aggregator_; }
  const HazardHead& hazard() const { return hazard_; }

  // Names of parameters whose name starts with none of `frozen_prefixes`.
  std::vector<std::string> trainable(const std::vector<std::string>& frozen_prefixes) const;

 private:
  ModelConfig cfg_;
  ParameterStore params_;
  TemporalEncoder encoder_;
  RadmilAggregator aggregator_;
  HazardHead hazard_;
};

// Fills `frames` of every exam from the model's backbone (no gradients).
void cache_backbone(const TriNet& model, std::vector<ExamInput>& exams);

}  // namespace trinet

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "trinet/metrics.hpp"
#include "trinet/model.hpp"
#include "trinet/optim.hpp"

namespace trinet {

inline constexpr std::size_t kYears = 5;
inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-4;
  AdamSettings adam;
  std::size_t batch_size = 12;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  bool augment = true;  // flips; ignored for cached exams
  std::vector<std::string> frozen_prefixes;

  void validate() const;
};

// ---- evaluation ----
struct ExamScore {
  std::string patient_id;
  std::size_t exam_index = 0;
  RiskCurve curve;
  Outcome outcome;
};

struct HorizonMetric {
  int year = 0;
  double auc = kUndefined;
  ConfidenceInterval ci{kUndefined, kUndefined};
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

std::vector<ExamScore> score_exams(const TriNet& model, const std::vector<ExamInput>& exams);
// AUC per year k = 1..5 on the risk at horizon index 2k; observable exams
// only. n_resamples = 0 skips the bootstrap.
std::vector<HorizonMetric> horizon_metrics(const std::vector<ExamScore>& scores,
                                           std::size_t n_resamples = 0, std::uint64_t seed = 0);
std::array<double, kYears> auc_row(const std::vector<HorizonMetric>& metrics);
double mean_risk_loss(const TriNet& model, const std::vector<ExamInput>& exams);

// ---- generic training ----
using SampleLoss = std::function<ad::Tensor(const TriNet&, const ExamInput&)>;

ad::Tensor risk_loss(const TriNet& model, const ExamInput& exam);

// Copy with per-view horizontal / vertical flips drawn from `rng`.
ExamInput augment_exam(const ExamInput& exam, Rng& rng);

// One pass over `data` in an order drawn from `rng`; each mini-batch loss is
// the mean of the per-sample losses. Returns the mean batch loss.
double train_epoch(TriNet& model, Optimizer& optimizer, const std::vector<std::string>& names,
                   const std::vector<ExamInput>& data, std::size_t batch_size, Rng& rng,
                   bool augment, const SampleLoss& loss);

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = kUndefined;
  std::array<double, kYears> val_auc{kUndefined, kUndefined, kUndefined, kUndefined, kUndefined};
};

using EpochCallback = std::function<void(const EpochLog&, const Optimizer&)>;

Optimizer make_optimizer(const TrainConfig& cfg);

// Epochs [start_epoch, cfg.epochs). Epoch e draws its batch order and flips
// from derive_seed(cfg.seed, e), so a run resumed with the saved optimizer
// state reproduces an uninterrupted run.
std::vector<EpochLog> train_model(TriNet& model, const std::vector<ExamInput>& train,
                                  const std::vector<ExamInput>* val, const TrainConfig& cfg,
                                  Optimizer& optimizer, std::size_t start_epoch = 0,
                                  const SampleLoss& loss = risk_loss,
                                  const EpochCallback& on_epoch = {});
// Same, updating exactly the parameters in `names` (sorted); every other
// parameter is frozen for the duration.
std::vector<EpochLog> train_parameters(TriNet& model, const std::vector<std::string>& names,
                                       const std::vector<ExamInput>& train,
                                       const std::vector<ExamInput>* val, const TrainConfig& cfg,
                                       Optimizer& optimizer, std::size_t start_epoch,
                                       const SampleLoss& loss, const EpochCallback& on_epoch = {});

// ---- time-decay fine-tuning ----
struct LrPhase {
  double learning_rate = 5e-4;
  std::size_t epochs = 0;
};
// 5e-4 for `first` epochs, then 5e-5 for `second`.
std::vector<LrPhase> two_step_schedule(std::size_t first, std::size_t second);

// Loads `pretrained` (a vanilla NL / SHIFT model of the same architecture)
// into the time-decay `model`, then trains phase by phase with Adam.
std::vector<EpochLog> finetune_td(TriNet& model, const TensorMap& pretrained,
                                  const std::vector<LrPhase>& schedule,
                                  const std::vector<ExamInput>& train,
                                  const std::vector<ExamInput>* val, TrainConfig cfg);

// Copies parameters from `source`; every model parameter must be present
// with matching shape and no unknown model-like names may remain.
void load_parameters(TriNet& model, const TensorMap& source);

// ---- lateral attention ----
struct LateralConfig {
  bool soft_labels = true;
  double weight = 1.0;  // lateral loss weight relative to the risk loss
};

inline constexpr double kSoftAffected = 0.9;
inline constexpr double kSoftUnaffected = 0.1;

// Per-view targets in View order; controls get 0.5 everywhere.
std::array<double, kViews> lateral_targets(bool diagnosed, Laterality lat, bool soft);

// Risk loss plus weighted BCE of the lateral scores. Cases without
// laterality contribute nothing (warning).
SampleLoss lateral_loss(const LateralConfig& lcfg);

// Names of the lateral-head parameters, sorted.
std::vector<std::string> lateral_parameter_names(const TriNet& model);

// Second phase of the lateral protocol: only the lateral head trains.
std::vector<EpochLog> train_lateral(TriNet& model, const std::vector<ExamInput>& train,
                                    const std::vector<ExamInput>* val, TrainConfig cfg,
                                    const LateralConfig& lcfg);

// ---- ReST^CL ----
// |(l_LCC + l_LMLO) - (l_RCC + l_RMLO)|
double lateral_difference(std::span<const double> view_scores);
double lateral_difference(const TriNet& model, const ExamInput& exam);

struct LabelPolicy {
  double q_case = 0.0;
  double q_control = 0.0;
};
inline constexpr double kCaseQuantile = 0.99;
inline constexpr double kControlQuantile = 0.01;

LabelPolicy compute_quantiles(std::span<const double> case_delta,
                              std::span<const double> control_delta,
                              std::size_t min_per_class = 100);
LabelPolicy compute_quantiles(const TriNet& model, const std::vector<ExamInput>& secondary,
                              std::size_t min_per_class = 100);

struct AssignedLabel {
  bool hard = false;
  HorizonTargets targets;
};

// Hard true targets for confident samples (cases with delta >= q_case,
// controls with delta <= q_control); otherwise the current probabilities.
AssignedLabel assign_label(const Outcome& outcome, double delta_a, const LabelPolicy& policy,
                           const RiskCurve& current);

// Indices with score > tau.
std::vector<std::size_t> threshold_filter(std::span<const double> scores, double tau);

struct ClConfig {
  TrainConfig train;  // SGD by default
  std::size_t iterations = 2;
  std::size_t epochs_per_iteration = 1;
  std::size_t min_per_class = 100;
  bool threshold_baseline = false;  // confidence-threshold ReST instead
  double tau = 0.7;

  ClConfig();
};

struct ClLog {
  std::size_t iteration = 0;  // 0 = before continual learning
  std::size_t epoch = 0;
  double secondary_loss = kUndefined;
  double primary_loss = kUndefined;
  double hard_fraction = kUndefined;
  std::size_t secondary_used = 0;
  std::size_t primary_used = 0;
  LabelPolicy policy;
  std::array<double, kYears> primary_auc{};
  std::array<double, kYears> secondary_auc{};
};

struct ClData {
  const std::vector<ExamInput>* primary_train = nullptr;
  const std::vector<ExamInput>* secondary_train = nullptr;
  const std::vector<ExamInput>* primary_val = nullptr;
  const std::vector<ExamInput>* secondary_val = nullptr;
};

using IterationCallback = std::function<void(std::size_t iteration, const TriNet&)>;

// Runs `iterations` rounds of the alternating secondary / primary loop.
// Row 0 of the result holds the starting metrics.
std::vector<ClLog> restcl_train(TriNet& model, const ClData& data, const ClConfig& cfg,
                                const IterationCallback& on_iteration = {});

}  // namespace trinet

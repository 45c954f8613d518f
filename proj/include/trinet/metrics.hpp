#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace trinet {

struct PatientRecord;

enum class HorizonStatus { kPositive, kNegative, kUnobservable };

// k-year label of the exam at `exam_index`: positive when diagnosed within
// 12k months of the exam, negative when follow-up reaches 12k months
// without diagnosis, unobservable otherwise.
HorizonStatus horizon_label(const PatientRecord& record, std::size_t exam_index, int k);
// Same on the relative outcome: months from the exam to diagnosis (or to the
// end of follow-up when not diagnosed).
HorizonStatus horizon_label(bool diagnosed, double months_after_exam, int k);

// Mann-Whitney AUC with ties counted 0.5. Labels are 0/1. Throws
// ContractError when either class is absent.
double auc(std::span<const double> scores, std::span<const int> labels);
// O(P*N) pair count, the reference for auc().
double auc_bruteforce(std::span<const double> scores, std::span<const int> labels);

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile (2.5, 97.5) interval of AUC over patient-level resamples.
// Resamples lacking a class are redrawn up to `max_redraws` times in total.
ConfidenceInterval bootstrap_ci(std::span<const double> scores, std::span<const int> labels,
                                std::span<const std::string> patient_ids,
                                std::size_t n_resamples, std::uint64_t seed,
                                std::size_t max_redraws = 10000);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};
using RocCurve = std::vector<RocPoint>;

// One point per distinct threshold (descending), from (0,0) to (1,1). The
// first point has threshold +inf.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(const RocCurve& curve);
// Writes threshold,fpr,tpr rows and returns the curve.
RocCurve roc_export(std::span<const double> scores, std::span<const int> labels,
                    const std::filesystem::path& path, const std::string& config_hash);

// Linear interpolation between order statistics (R type 7).
double quantile(std::vector<double> values, double q);

}  // namespace trinet

#include "trinet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "trinet/cohort.hpp"
#include "trinet/error.hpp"
#include "trinet/io.hpp"
#include "trinet/rng.hpp"

namespace trinet {

HorizonStatus horizon_label(bool diagnosed, double months_after_exam, int k) {
  if (k < 1 || k > 5) throw InputError("horizon years must lie in 1..5");
  const double horizon = 12.0 * k;
  if (diagnosed && months_after_exam <= horizon) return HorizonStatus::kPositive;
  // A later diagnosis implies cancer-free follow-up through `horizon`.
  if (months_after_exam >= horizon) return HorizonStatus::kNegative;
  return HorizonStatus::kUnobservable;
}

HorizonStatus horizon_label(const PatientRecord& record, std::size_t exam_index, int k) {
  if (exam_index >= record.screenings.size()) throw InputError("exam index out of range");
  const double rel = record.outcome_months - record.screenings[exam_index].months_from_first;
  return horizon_label(record.diagnosed, rel, k);
}

namespace {
void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
}
}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks over positives.
  double rank_sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank2 = static_cast<double>(i + 1 + j);  // twice the midrank
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        rank_sum += midrank2;
        ++npos;
      }
    }
    i = j;
  }
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw ContractError("AUC is undefined with a single class");
  const double p = static_cast<double>(npos);
  const double u2 = rank_sum - p * (p + 1.0);  // twice the Mann-Whitney U
  return u2 / (2.0 * p * static_cast<double>(nneg));
}

double auc_bruteforce(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  double wins2 = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins2 += 2.0;
      else if (scores[i] == scores[j]) wins2 += 1.0;
    }
  }
  if (pairs == 0) throw ContractError("AUC is undefined with a single class");
  return wins2 / (2.0 * static_cast<double>(pairs));
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw InputError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ConfidenceInterval bootstrap_ci(std::span<const double> scores, std::span<const int> labels,
                                std::span<const std::string> patient_ids,
                                std::size_t n_resamples, std::uint64_t seed,
                                std::size_t max_redraws) {
  check_inputs(scores, labels);
  if (patient_ids.size() != scores.size()) throw InputError("patient ids differ in length");
  if (n_resamples == 0) throw InputError("bootstrap needs at least one resample");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) groups[patient_ids[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> units;
  for (const auto& [id, rows] : groups) units.push_back(&rows);

  Rng rng(derive_seed(seed, "bootstrap"));
  std::vector<double> aucs;
  aucs.reserve(n_resamples);
  std::vector<double> s;
  std::vector<int> l;
  std::size_t redraws = 0;
  const auto m = static_cast<std::int64_t>(units.size());
  while (aucs.size() < n_resamples) {
    s.clear();
    l.clear();
    std::size_t pos = 0;
    for (std::int64_t u = 0; u < m; ++u) {
      for (std::size_t row : *units[static_cast<std::size_t>(rng.integer(0, m - 1))]) {
        s.push_back(scores[row]);
        l.push_back(labels[row]);
        pos += labels[row] != 0;
      }
    }
    if (pos == 0 || pos == l.size()) {
      if (++redraws > max_redraws) throw ContractError("bootstrap resamples keep lacking a class");
      continue;
    }
    aucs.push_back(auc(s, l));
  }
  return {quantile(aucs, 0.025), quantile(aucs, 0.975)};
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::size_t npos = 0;
  for (int x : labels) npos += x != 0;
  const std::size_t nneg = labels.size() - npos;
  if (npos == 0 || nneg == 0) throw ContractError("ROC needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve curve;
  curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      if (labels[order[i]]) ++tp;
      else ++fp;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / nneg, static_cast<double>(tp) / npos, thr});
  }
  return curve;
}

double trapezoid_area(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

RocCurve roc_export(std::span<const double> scores, std::span<const int> labels,
                    const std::filesystem::path& path, const std::string& config_hash) {
  RocCurve curve = roc_curve(scores, labels);
  io::CsvTable t;
  t.header = {"threshold", "fpr", "tpr"};
  for (const auto& p : curve) {
    t.rows.push_back({std::isinf(p.threshold) ? "inf" : io::format_double(p.threshold),
                      io::format_double(p.fpr), io::format_double(p.tpr)});
  }
  io::write_csv(path, t, config_hash);
  return curve;
}

}  // namespace trinet

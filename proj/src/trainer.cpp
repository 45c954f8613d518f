#include "trinet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trinet/error.hpp"
#include "trinet/log.hpp"

namespace trinet {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

Optimizer make_optimizer(const TrainConfig& cfg) {
  cfg.validate();
  return Optimizer(cfg.optimizer, cfg.learning_rate, cfg.adam);
}

// ---------------------------------------------------------------------------

std::vector<ExamScore> score_exams(const TriNet& model, const std::vector<ExamInput>& exams) {
  ad::NoGradGuard guard;
  std::vector<ExamScore> out;
  out.reserve(exams.size());
  for (const auto& ex : exams) {
    out.push_back({ex.patient_id, ex.exam_index, model.forward(ex).curve(), ex.outcome});
  }
  return out;
}

std::vector<HorizonMetric> horizon_metrics(const std::vector<ExamScore>& scores,
                                           std::size_t n_resamples, std::uint64_t seed) {
  std::vector<HorizonMetric> out;
  for (int k = 1; k <= static_cast<int>(kYears); ++k) {
    HorizonMetric m;
    m.year = k;
    std::vector<double> s;
    std::vector<int> l;
    std::vector<std::string> ids;
    for (const auto& e : scores) {
      const auto status = horizon_label(e.outcome.diagnosed, e.outcome.months, k);
      if (status == HorizonStatus::kUnobservable) continue;
      s.push_back(e.curve.yearly(static_cast<std::size_t>(k)));
      l.push_back(status == HorizonStatus::kPositive ? 1 : 0);
      ids.push_back(e.patient_id);
    }
    for (int x : l) (x ? m.n_pos : m.n_neg) += 1;
    if (m.n_pos > 0 && m.n_neg > 0) {
      m.auc = auc(s, l);
      if (n_resamples > 0) {
        m.ci = bootstrap_ci(s, l, ids, n_resamples, derive_seed(seed, static_cast<std::uint64_t>(k)));
      }
    }
    out.push_back(m);
  }
  return out;
}

std::array<double, kYears> auc_row(const std::vector<HorizonMetric>& metrics) {
  std::array<double, kYears> row;
  row.fill(kUndefined);
  for (const auto& m : metrics) {
    if (m.year >= 1 && m.year <= static_cast<int>(kYears)) row[m.year - 1] = m.auc;
  }
  return row;
}

ad::Tensor risk_loss(const TriNet& model, const ExamInput& exam) {
  const auto targets = horizon_targets(exam.outcome);
  if (targets.observed() == 0) return ad::Tensor::scalar(0.0);
  return horizon_loss(model.forward(exam), targets);
}

double mean_risk_loss(const TriNet& model, const std::vector<ExamInput>& exams) {
  ad::NoGradGuard guard;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ex : exams) {
    const auto targets = horizon_targets(ex.outcome);
    if (targets.observed() == 0) continue;
    total += horizon_loss(model.forward(ex), targets).item();
    ++n;
  }
  return n ? total / n : kUndefined;
}

ExamInput augment_exam(const ExamInput& exam, Rng& rng) {
  ExamInput out = exam;
  for (std::size_t v = 0; v < kViews; ++v) {
    const FlipDraw f = draw_flips(rng);
    if (!f.horizontal && !f.vertical) continue;
    const auto& img = exam.views[v].images;
    const std::size_t s = img.dim(0), h = img.dim(1), w = img.dim(2);
    auto src = img.data();
    std::vector<double> dst(src.size());
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t r = 0; r < h; ++r) {
        const std::size_t sr = f.vertical ? h - 1 - r : r;
        for (std::size_t c = 0; c < w; ++c) {
          const std::size_t sc = f.horizontal ? w - 1 - c : c;
          dst[(i * h + r) * w + c] = src[(i * h + sr) * w + sc];
        }
      }
    }
    out.views[v].images = ad::Tensor::from_vector(img.shape(), std::move(dst));
  }
  return out;
}

namespace {

// Stops gradient bookkeeping for parameters outside `names` for the
// lifetime of the guard.
class FreezeGuard {
 public:
  FreezeGuard(TriNet& model, const std::vector<std::string>& names) : model_(model) {
    for (const auto& [name, t] : model.params().items()) {
      if (!std::binary_search(names.begin(), names.end(), name)) {
        model.params().get(name).set_track(false);
        frozen_.push_back(name);
      }
    }
  }
  ~FreezeGuard() {
    for (const auto& n : frozen_) model_.params().get(n).set_track(true);
  }

 private:
  TriNet& model_;
  std::vector<std::string> frozen_;
};

void check_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) throw NumericalError(std::string("non-finite loss during ") + where);
}

// Mean of per-sample losses over one batch, then one optimizer step.
double step_batch(TriNet& model, Optimizer& optimizer, const std::vector<std::string>& names,
                  const std::vector<ad::Tensor>& losses) {
  if (losses.empty()) return 0.0;
  model.params().zero_grad();
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (const auto& l : losses) total = ad::add(total, l);
  total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));
  const double value = total.item();
  check_finite(value, "training");
  if (total.tracks()) {
    ad::backward(total);
    optimizer.step(model.params(), names);
  }
  return value;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return order;
}

EpochLog validate_epoch(const TriNet& model, const std::vector<ExamInput>* val) {
  EpochLog log;
  if (val && !val->empty()) {
    log.val_loss = mean_risk_loss(model, *val);
    log.val_auc = auc_row(horizon_metrics(score_exams(model, *val)));
  }
  return log;
}

}  // namespace

std::vector<EpochLog> train_parameters(TriNet& model, const std::vector<std::string>& names,
                                       const std::vector<ExamInput>& train,
                                       const std::vector<ExamInput>* val, const TrainConfig& cfg,
                                       Optimizer& optimizer, std::size_t start_epoch,
                                       const SampleLoss& loss, const EpochCallback& on_epoch) {
  cfg.validate();
  FreezeGuard guard(model, names);
  std::vector<EpochLog> logs;
  for (std::size_t e = start_epoch; e < cfg.epochs; ++e) {
    Rng rng(derive_seed(derive_seed(cfg.seed, "epoch"), static_cast<std::uint64_t>(e)));
    const double train_loss =
        train_epoch(model, optimizer, names, train, cfg.batch_size, rng, cfg.augment, loss);
    EpochLog log = validate_epoch(model, val);
    log.epoch = e;
    log.learning_rate = optimizer.learning_rate();
    log.train_loss = train_loss;
    logs.push_back(log);
    if (on_epoch) on_epoch(log, optimizer);
  }
  return logs;
}

double train_epoch(TriNet& model, Optimizer& optimizer, const std::vector<std::string>& names,
                   const std::vector<ExamInput>& data, std::size_t batch_size, Rng& rng,
                   bool augment, const SampleLoss& loss) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  const auto order = shuffled(data.size(), rng);
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<ad::Tensor> losses;
    for (std::size_t i = start; i < end; ++i) {
      const ExamInput& ex = data[order[i]];
      if (augment && !ex.cached()) {
        losses.push_back(loss(model, augment_exam(ex, rng)));
      } else {
        losses.push_back(loss(model, ex));
      }
    }
    sum += step_batch(model, optimizer, names, losses);
    ++batches;
  }
  return batches ? sum / batches : 0.0;
}

std::vector<EpochLog> train_model(TriNet& model, const std::vector<ExamInput>& train,
                                  const std::vector<ExamInput>* val, const TrainConfig& cfg,
                                  Optimizer& optimizer, std::size_t start_epoch,
                                  const SampleLoss& loss, const EpochCallback& on_epoch) {
  auto names = model.trainable(cfg.frozen_prefixes);
  return train_parameters(model, names, train, val, cfg, optimizer, start_epoch, loss, on_epoch);
}

// ---------------------------------------------------------------------------

void load_parameters(TriNet& model, const TensorMap& source) {
  for (const auto& [name, t] : model.params().items()) {
    auto it = source.find(name);
    if (it == source.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("parameter " + name + " has shape " + ad::shape_str(t.shape()) +
                            " but checkpoint holds " + ad::shape_str(it->second.shape()));
    }
  }
  for (const auto& [name, t] : source) {
    const bool aux = name.rfind("optim/", 0) == 0 || name.rfind("train/", 0) == 0 ||
                     name.rfind("meta/", 0) == 0;
    if (!aux && !model.params().contains(name)) {
      throw CheckpointError("checkpoint parameter " + name + " has no counterpart in the model");
    }
  }
  model.params().assign(source, true);
}

std::vector<LrPhase> two_step_schedule(std::size_t first, std::size_t second) {
  return {{5e-4, first}, {5e-5, second}};
}

std::vector<EpochLog> finetune_td(TriNet& model, const TensorMap& pretrained,
                                  const std::vector<LrPhase>& schedule,
                                  const std::vector<ExamInput>& train,
                                  const std::vector<ExamInput>* val, TrainConfig cfg) {
  if (!uses_time_decay(model.config().attention.kind)) {
    throw ContractError("finetune_td needs a time-decay attention model");
  }
  load_parameters(model, pretrained);
  std::vector<EpochLog> logs;
  if (schedule.empty()) return logs;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.learning_rate = schedule.front().learning_rate;
  Optimizer opt = make_optimizer(cfg);
  std::size_t done = 0;
  for (const auto& phase : schedule) {
    opt.set_learning_rate(phase.learning_rate);
    cfg.epochs = done + phase.epochs;
    auto part = train_model(model, train, val, cfg, opt, done);
    logs.insert(logs.end(), part.begin(), part.end());
    done = cfg.epochs;
  }
  return logs;
}

// ---------------------------------------------------------------------------

std::array<double, kViews> lateral_targets(bool diagnosed, Laterality lat, bool soft) {
  std::array<double, kViews> t;
  t.fill(0.5);
  if (!diagnosed || lat == Laterality::kNone) return t;
  const double hi = soft ? kSoftAffected : 1.0;
  const double lo = soft ? kSoftUnaffected : 0.0;
  for (std::size_t v = 0; v < kViews; ++v) {
    t[v] = is_left(v) == (lat == Laterality::kLeft) ? hi : lo;
  }
  return t;
}

SampleLoss lateral_loss(const LateralConfig& lcfg) {
  return [lcfg](const TriNet& model, const ExamInput& ex) -> ad::Tensor {
    if (ex.outcome.diagnosed && ex.laterality == Laterality::kNone) {
      log::warning("case " + ex.patient_id + " has no laterality label; skipped");
      return ad::Tensor::scalar(0.0);
    }
    ExamRepresentation rep;
    auto forecast = model.forward(ex, &rep);
    if (!rep.lateral.defined()) throw ContractError("model does not use lateral attention");
    const auto targets = horizon_targets(ex.outcome);
    ad::Tensor total = targets.observed() ? horizon_loss(forecast, targets) : ad::Tensor::scalar(0.0);
    const auto lt = lateral_targets(ex.outcome.diagnosed, ex.laterality, lcfg.soft_labels);
    const std::array<double, kViews> mask{1.0, 1.0, 1.0, 1.0};
    return ad::add(total, ad::scale(ad::bce_probs(rep.lateral, lt, mask), lcfg.weight));
  };
}

std::vector<std::string> lateral_parameter_names(const TriNet& model) {
  std::vector<std::string> names;
  for (const auto& [name, t] : model.params().items()) {
    if (name.rfind(RadmilAggregator::kLateralPrefix, 0) == 0) names.push_back(name);
  }
  return names;
}

std::vector<EpochLog> train_lateral(TriNet& model, const std::vector<ExamInput>& train,
                                    const std::vector<ExamInput>* val, TrainConfig cfg,
                                    const LateralConfig& lcfg) {
  if (!model.config().radmil.lateral || !model.aggregator().has_lateral_head()) {
    throw ContractError("train_lateral needs a mode-E model with lateral attention enabled");
  }
  Optimizer opt = make_optimizer(cfg);
  return train_parameters(model, lateral_parameter_names(model), train, val, cfg, opt, 0,
                          lateral_loss(lcfg), {});
}

// ---------------------------------------------------------------------------

double lateral_difference(std::span<const double> s) {
  if (s.size() != kViews) throw InputError("lateral difference needs all four views");
  for (double x : s) {
    if (!std::isfinite(x)) throw InputError("missing lateral score");
  }
  return std::abs((s[0] + s[1]) - (s[2] + s[3]));
}

double lateral_difference(const TriNet& model, const ExamInput& exam) {
  ad::NoGradGuard guard;
  return lateral_difference(model.lateral_scores(exam).data());
}

LabelPolicy compute_quantiles(std::span<const double> case_delta,
                              std::span<const double> control_delta, std::size_t min_per_class) {
  if (case_delta.empty() || control_delta.empty()) {
    throw ContractError("label policy needs both cases and controls");
  }
  if (case_delta.size() < min_per_class || control_delta.size() < min_per_class) {
    throw ContractError("label policy needs at least " + std::to_string(min_per_class) +
                        " cases and controls; got " + std::to_string(case_delta.size()) + " and " +
                        std::to_string(control_delta.size()));
  }
  LabelPolicy p;
  p.q_case = quantile({case_delta.begin(), case_delta.end()}, kCaseQuantile);
  p.q_control = quantile({control_delta.begin(), control_delta.end()}, kControlQuantile);
  return p;
}

LabelPolicy compute_quantiles(const TriNet& model, const std::vector<ExamInput>& secondary,
                              std::size_t min_per_class) {
  std::vector<double> cases, controls;
  for (const auto& ex : secondary) {
    (ex.outcome.diagnosed ? cases : controls).push_back(lateral_difference(model, ex));
  }
  return compute_quantiles(cases, controls, min_per_class);
}

AssignedLabel assign_label(const Outcome& outcome, double delta_a, const LabelPolicy& policy,
                           const RiskCurve& current) {
  AssignedLabel out;
  out.hard = outcome.diagnosed ? delta_a >= policy.q_case : delta_a <= policy.q_control;
  if (out.hard) {
    out.targets = horizon_targets(outcome);
  } else {
    out.targets.target = current.probs;
    out.targets.mask.fill(1.0);
  }
  return out;
}

std::vector<std::size_t> threshold_filter(std::span<const double> scores, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InputError("threshold must lie in [0, 1]");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > tau) keep.push_back(i);
  }
  return keep;
}

ClConfig::ClConfig() {
  train.optimizer = OptimizerKind::kSgd;
  train.learning_rate = 1e-7;
  train.augment = false;
}

namespace {

void record_metrics(ClLog& row, const TriNet& model, const ClData& data) {
  if (data.primary_val) row.primary_auc = auc_row(horizon_metrics(score_exams(model, *data.primary_val)));
  if (data.secondary_val) {
    row.secondary_auc = auc_row(horizon_metrics(score_exams(model, *data.secondary_val)));
  }
}

// Confidence in the true outcome, read from the one-year risk.
double outcome_confidence(const TriNet& model, const ExamInput& ex) {
  ad::NoGradGuard guard;
  const double p = model.forward(ex).curve().yearly(1);
  return ex.outcome.diagnosed ? p : 1.0 - p;
}

}  // namespace

std::vector<ClLog> restcl_train(TriNet& model, const ClData& data, const ClConfig& cfg,
                                const IterationCallback& on_iteration) {
  if (!data.primary_train || !data.secondary_train) {
    throw ContractError("continual learning needs primary and secondary training sets");
  }
  cfg.train.validate();
  std::vector<ClLog> logs(1);
  record_metrics(logs[0], model, data);
  if (cfg.iterations == 0) return logs;

  Optimizer opt = make_optimizer(cfg.train);
  const auto names = model.trainable(cfg.train.frozen_prefixes);
  FreezeGuard freeze(model, names);
  const auto& secondary = *data.secondary_train;
  const auto& primary = *data.primary_train;

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    LabelPolicy policy;
    std::vector<std::size_t> kept;
    if (cfg.threshold_baseline) {
      std::vector<double> conf;
      for (const auto& ex : secondary) conf.push_back(outcome_confidence(model, ex));
      kept = threshold_filter(conf, cfg.tau);
      policy = {kUndefined, kUndefined};
    } else {
      policy = compute_quantiles(model, secondary, cfg.min_per_class);
    }
    for (std::size_t e = 0; e < cfg.epochs_per_iteration; ++e) {
      const std::uint64_t stream = derive_seed(derive_seed(cfg.train.seed, "cl"), it * 1000 + e);
      Rng rng(stream);
      ClLog row;
      row.iteration = it;
      row.epoch = e;
      row.policy = policy;

      // Secondary pass.
      std::vector<std::size_t> pool;
      if (cfg.threshold_baseline) {
        pool = kept;
      } else {
        pool.resize(secondary.size());
        std::iota(pool.begin(), pool.end(), 0);
      }
      rng.shuffle(pool);
      std::size_t hard = 0;
      double sec_sum = 0.0;
      std::size_t sec_batches = 0;
      for (std::size_t start = 0; start < pool.size(); start += cfg.train.batch_size) {
        const std::size_t end = std::min(pool.size(), start + cfg.train.batch_size);
        std::vector<HorizonTargets> targets;
        for (std::size_t i = start; i < end; ++i) {
          const ExamInput& ex = secondary[pool[i]];
          if (cfg.threshold_baseline) {
            targets.push_back(horizon_targets(ex.outcome));
            ++hard;
            continue;
          }
          ad::NoGradGuard guard;
          const double delta = lateral_difference(model.lateral_scores(ex).data());
          const auto label = assign_label(ex.outcome, delta, policy, model.forward(ex).curve());
          hard += label.hard;
          targets.push_back(label.targets);
        }
        std::vector<ad::Tensor> losses;
        for (std::size_t i = start; i < end; ++i) {
          const auto& t = targets[i - start];
          if (t.observed() == 0) continue;
          losses.push_back(horizon_loss(model.forward(secondary[pool[i]]), t));
        }
        sec_sum += step_batch(model, opt, names, losses);
        ++sec_batches;
      }
      row.secondary_used = pool.size();
      row.secondary_loss = sec_batches ? sec_sum / sec_batches : kUndefined;
      row.hard_fraction = pool.empty() ? kUndefined : static_cast<double>(hard) / pool.size();

      // Primary pass over the full primary set.
      row.primary_loss = train_epoch(model, opt, names, primary, cfg.train.batch_size, rng,
                                     cfg.train.augment, risk_loss);
      row.primary_used = primary.size();
      record_metrics(row, model, data);
      logs.push_back(row);
    }
    if (on_iteration) on_iteration(it, model);
  }
  return logs;
}

}  // namespace trinet

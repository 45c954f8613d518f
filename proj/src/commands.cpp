#include "trinet/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "json.hpp"

#include "trinet/checkpoint.hpp"
#include "trinet/error.hpp"
#include "trinet/io.hpp"
#include "trinet/log.hpp"
#include "trinet/metrics.hpp"

#ifndef TRINET_VERSION
#define TRINET_VERSION "0.0.0"
#endif

namespace trinet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<fs::path> regular_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir);
    if (rel == files::kRunManifest) continue;
    if (rel.filename().string().find(".tmp") != std::string::npos) continue;
    out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Started at construction, written atomically by finish().
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& cfg, fs::path out)
      : command_(std::move(command)), hash_(config_hash(cfg)), seed_(cfg.seed),
        out_(std::move(out)), started_(timestamp()) {}

  void finish() const {
    json j;
    j["command"] = command_;
    j["config_hash"] = hash_;
    j["seed"] = seed_;
    j["code_version"] = TRINET_VERSION;
    j["started"] = started_;
    j["finished"] = timestamp();
    json outputs = json::array();
    for (const auto& rel : regular_files(out_)) {
      const std::string bytes = io::read_file(out_ / rel);
      outputs.push_back({{"path", rel.generic_string()}, {"bytes", bytes.size()},
                         {"fnv1a", hex64(fnv1a(bytes))}});
    }
    j["outputs"] = std::move(outputs);
    io::write_atomic(out_ / files::kRunManifest, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string hash_;
  std::uint64_t seed_;
  fs::path out_;
  std::string started_;
};

void prepare_out(const RunOptions& opt, bool refuse_nonempty) {
  if (opt.out.empty()) throw ConfigError("--out <dir> is required");
  std::error_code ec;
  if (fs::exists(opt.out, ec) && !fs::is_directory(opt.out, ec)) {
    throw IoError("output path " + opt.out.string() + " is not a directory");
  }
  if (refuse_nonempty && fs::exists(opt.out, ec) && !fs::is_empty(opt.out, ec) && !opt.overwrite) {
    throw ConfigError("output directory " + opt.out.string() +
                      " is not empty; pass --overwrite to replace it");
  }
  fs::create_directories(opt.out, ec);
  if (ec) throw IoError("cannot create " + opt.out.string() + ": " + ec.message());
}

void write_config(const RunConfig& cfg, const fs::path& out) {
  io::write_atomic(out / files::kConfig, to_json(cfg));
}

std::string fmt(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }

// ---- checkpoints ----

void put_norm(TensorMap& t, const NormStats& s) {
  t["meta/pixel_norm"] = ad::Tensor::from_vector({2}, {s.mean, s.sd});
  t["meta/radiomic_mean"] =
      ad::Tensor::from_vector({kRadiomicWidth}, {s.radiomic_mean.begin(), s.radiomic_mean.end()});
  t["meta/radiomic_sd"] =
      ad::Tensor::from_vector({kRadiomicWidth}, {s.radiomic_sd.begin(), s.radiomic_sd.end()});
}

NormStats get_norm(const TensorMap& t) {
  for (const char* key : {"meta/pixel_norm", "meta/radiomic_mean", "meta/radiomic_sd"}) {
    if (!t.count(key)) throw CheckpointError(std::string("checkpoint lacks ") + key);
  }
  NormStats s;
  s.mean = t.at("meta/pixel_norm")[0];
  s.sd = t.at("meta/pixel_norm")[1];
  for (std::size_t k = 0; k < kRadiomicWidth; ++k) {
    s.radiomic_mean[k] = t.at("meta/radiomic_mean")[k];
    s.radiomic_sd[k] = t.at("meta/radiomic_sd")[k];
  }
  return s;
}

constexpr std::size_t kLogColumns = 4 + kYears;
// Losses and AUCs are never negative; undefined entries are stored as -1
// because tensors hold finite values only.
constexpr double kMissing = -1.0;

ad::Tensor encode_logs(const std::vector<EpochLog>& logs) {
  std::vector<double> v;
  for (const auto& l : logs) {
    v.insert(v.end(), {static_cast<double>(l.epoch), l.learning_rate, l.train_loss, l.val_loss});
    v.insert(v.end(), l.val_auc.begin(), l.val_auc.end());
  }
  for (double& x : v) {
    if (std::isnan(x)) x = kMissing;
  }
  return ad::Tensor::from_vector({logs.size(), kLogColumns}, std::move(v));
}

std::vector<EpochLog> decode_logs(const ad::Tensor& t) {
  std::vector<EpochLog> logs;
  if (t.rank() != 2 || t.dim(1) != kLogColumns) throw CheckpointError("malformed train/log entry");
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    auto row = t.data().subspan(r * kLogColumns, kLogColumns);
    auto value = [](double x) { return x == kMissing ? kUndefined : x; };
    EpochLog l;
    l.epoch = static_cast<std::size_t>(row[0]);
    l.learning_rate = row[1];
    l.train_loss = row[2];
    l.val_loss = value(row[3]);
    for (std::size_t k = 0; k < kYears; ++k) l.val_auc[k] = value(row[4 + k]);
    logs.push_back(l);
  }
  return logs;
}

TensorMap model_checkpoint(const TriNet& model, const NormStats& norm) {
  TensorMap t = model.params().snapshot();
  put_norm(t, norm);
  return t;
}

// Model built from the run config with weights and normalization from `path`.
struct LoadedModel {
  std::unique_ptr<TriNet> model;
  NormStats norm;
};

LoadedModel load_model(const RunConfig& cfg, const fs::path& path) {
  if (path.empty()) throw ConfigError("no checkpoint path configured");
  const TensorMap ck = checkpoint::load(path);
  LoadedModel out;
  out.model = std::make_unique<TriNet>(cfg.model, cfg.seed);
  load_parameters(*out.model, ck);
  out.norm = get_norm(ck);
  return out;
}

// ---- data ----

Dataset load_dataset(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("no dataset directory configured");
  return dataset_io::load(dir);
}

std::vector<ExamInput> exams_for(const Dataset& data, const std::string& split, bool all_exams,
                                 const NormStats& norm) {
  return build_exams(make_exam_refs(select_split(data, split), all_exams), norm);
}

io::CsvTable train_metrics_table(const std::vector<EpochLog>& logs) {
  io::CsvTable t;
  t.header = {"epoch", "learning_rate", "train_loss", "val_loss"};
  for (std::size_t k = 1; k <= kYears; ++k) t.header.push_back("val_auc_" + std::to_string(k) + "y");
  for (const auto& l : logs) {
    std::vector<std::string> row{std::to_string(l.epoch), fmt(l.learning_rate), fmt(l.train_loss),
                                 fmt(l.val_loss)};
    for (double a : l.val_auc) row.push_back(fmt(a));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_nan_dump(const fs::path& path, const TriNet& model, std::size_t epoch, double lr,
                    const std::string& message) {
  json j;
  j["epoch"] = epoch;
  j["learning_rate"] = lr;
  j["message"] = message;
  json params = json::array();
  for (const auto& [name, t] : model.params().items()) {
    std::size_t bad = 0;
    double lo = INFINITY, hi = -INFINITY, sq = 0.0;
    for (double x : t.data()) {
      if (!std::isfinite(x)) {
        ++bad;
        continue;
      }
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      sq += x * x;
    }
    params.push_back({{"name", name}, {"non_finite", bad}, {"min", fmt(lo)}, {"max", fmt(hi)},
                      {"l2", fmt(std::sqrt(sq))}});
  }
  j["parameters"] = std::move(params);
  io::write_atomic(path, j.dump(2) + "\n");
}

double phase_lr(const std::vector<LrPhase>& phases, std::size_t epoch) {
  std::size_t end = 0;
  for (const auto& p : phases) {
    end += p.epochs;
    if (epoch < end) return p.learning_rate;
  }
  return phases.back().learning_rate;
}

std::size_t total_epochs(const std::vector<LrPhase>& phases) {
  std::size_t n = 0;
  for (const auto& p : phases) n += p.epochs;
  return n;
}

void log_epoch(const std::string& tag, const EpochLog& l) {
  log::info(tag + " epoch " + std::to_string(l.epoch) + " lr " + fmt(l.learning_rate) +
            " train_loss " + fmt(l.train_loss) + " val_loss " + fmt(l.val_loss) + " val_auc_1y " +
            fmt(l.val_auc[0]));
}

// ---- evaluation tables ----

io::CsvTable summary_table(const std::vector<HorizonMetric>& metrics,
                           const std::vector<std::string>& prefix_header = {},
                           const std::vector<std::string>& prefix = {}) {
  io::CsvTable t;
  t.header = prefix_header;
  for (const char* c : {"horizon", "auc", "ci_low", "ci_high", "n_pos", "n_neg"}) t.header.push_back(c);
  for (const auto& m : metrics) {
    std::vector<std::string> row = prefix;
    row.insert(row.end(), {std::to_string(m.year) + "y", fmt(m.auc), fmt(m.ci.low), fmt(m.ci.high),
                           std::to_string(m.n_pos), std::to_string(m.n_neg)});
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace

std::string directory_digest(const fs::path& dir) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& rel : regular_files(dir)) {
    h = fnv1a(rel.generic_string(), h);
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(io::read_file(dir / rel), h);
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------

void cmd_gen(const RunConfig& cfg, const RunOptions& opt) {
  prepare_out(opt, true);
  if (opt.overwrite) {
    // Only remove what a dataset directory contains.
    for (const char* name : {"manifest.csv", "radiomics.csv", "images", files::kConfig,
                             files::kRunManifest}) {
      fs::remove_all(opt.out / name);
    }
  }
  RunManifest manifest("gen", cfg, opt.out);
  CohortSpec spec = cfg.cohort.spec;
  spec.seed = cfg.seed;
  Dataset data = generate_cohort(spec);
  split_cohort(data, cfg.cohort.split, derive_seed(cfg.seed, "split"), cfg.cohort.min_cases_per_split);
  dataset_io::save(opt.out, data, config_hash(cfg));
  write_config(cfg, opt.out);
  manifest.finish();
  log::info("gen: " + std::to_string(data.patients.size()) + " patients written to " +
            opt.out.string());
}

void cmd_train(const RunConfig& cfg, const RunOptions& opt) {
  prepare_out(opt, false);
  RunManifest manifest("train", cfg, opt.out);
  const std::string hash = config_hash(cfg);
  const TrainSection& ts = cfg.train;

  Dataset data = load_dataset(ts.data_dir);
  const auto train_patients = select_split(data, "train");
  if (train_patients.empty()) throw InputError("dataset has no training patients");
  const NormStats norm = compute_norm_stats(train_patients);
  const auto train = exams_for(data, "train", ts.all_exams, norm);
  const auto val = exams_for(data, "val", ts.all_exams, norm);

  TriNet model(cfg.model, cfg.seed);
  TrainConfig tc = ts.train;
  tc.seed = derive_seed(cfg.seed, "train");
  std::vector<LrPhase> phases{{tc.learning_rate, tc.epochs}};
  std::vector<std::string> names = model.trainable(tc.frozen_prefixes);
  SampleLoss loss = risk_loss;

  if (!ts.pretrained.empty()) {
    load_parameters(model, checkpoint::load(ts.pretrained));
    if (ts.lateral_phase) {
      names = lateral_parameter_names(model);
      loss = lateral_loss(ts.lateral);
    } else if (uses_time_decay(cfg.model.attention.kind)) {
      phases = ts.schedule;
      tc.optimizer = OptimizerKind::kAdam;
    }
  } else if (ts.lateral_phase) {
    throw ConfigError("train.lateral_phase needs train.pretrained");
  }
  if (phases.empty()) phases.push_back({tc.learning_rate, 0});
  Optimizer optimizer(tc.optimizer, phases.front().learning_rate, tc.adam);

  std::size_t start = 0;
  std::vector<EpochLog> logs;
  if (!ts.resume.empty()) {
    const TensorMap ck = checkpoint::load(ts.resume);
    load_parameters(model, ck);
    optimizer.load_state(ck);
    if (!ck.count("train/epoch") || !ck.count("train/log")) {
      throw CheckpointError("resume checkpoint lacks training progress");
    }
    start = static_cast<std::size_t>(ck.at("train/epoch").item());
    logs = decode_logs(ck.at("train/log"));
  }

  auto save = [&](std::size_t epochs_done) {
    TensorMap ck = model_checkpoint(model, norm);
    for (auto& [k, v] : optimizer.state()) ck[k] = v;
    ck["train/epoch"] = ad::Tensor::scalar(static_cast<double>(epochs_done));
    ck["train/log"] = encode_logs(logs);
    checkpoint::save(opt.out / files::kCheckpoint, ck);
    io::write_csv(opt.out / files::kTrainMetrics, train_metrics_table(logs), hash);
  };

  const std::size_t total = total_epochs(phases);
  if (start == 0 || start >= total) save(start);
  for (std::size_t e = start; e < total; ++e) {
    optimizer.set_learning_rate(phase_lr(phases, e));
    tc.epochs = e + 1;
    try {
      auto part = train_parameters(model, names, train, &val, tc, optimizer, e, loss);
      logs.insert(logs.end(), part.begin(), part.end());
    } catch (const NumericalError& err) {
      write_nan_dump(opt.out / files::kNanDump, model, e, optimizer.learning_rate(), err.what());
      log::error("train: numerical failure in epoch " + std::to_string(e) + "; state dumped to " +
                 (opt.out / files::kNanDump).string());
      throw;
    }
    log_epoch("train", logs.back());
    save(e + 1);
  }
  write_config(cfg, opt.out);
  manifest.finish();
}

void cmd_eval(const RunConfig& cfg, const RunOptions& opt) {
  prepare_out(opt, false);
  RunManifest manifest("eval", cfg, opt.out);
  const std::string hash = config_hash(cfg);
  auto loaded = load_model(cfg, cfg.eval.checkpoint);
  Dataset data = load_dataset(cfg.eval.data_dir);
  const auto exams = exams_for(data, cfg.eval.split, cfg.eval.all_exams, loaded.norm);
  const auto scores = score_exams(*loaded.model, exams);
  const auto metrics = horizon_metrics(scores, cfg.eval.n_resamples, derive_seed(cfg.seed, "eval"));
  io::write_csv(opt.out / files::kMetrics, summary_table(metrics), hash);

  io::CsvTable curves;
  curves.header = {"patient_id", "exam_index", "diagnosed", "months_to_outcome"};
  for (std::size_t i = 0; i < kHorizons; ++i) {
    curves.header.push_back("risk_" + std::to_string(static_cast<int>(i * kMonthsPerHorizon)) + "m");
  }
  for (const auto& s : scores) {
    std::vector<std::string> row{s.patient_id, std::to_string(s.exam_index),
                                 s.outcome.diagnosed ? "1" : "0", fmt(s.outcome.months)};
    for (double p : s.curve.probs) row.push_back(fmt(p));
    curves.rows.push_back(std::move(row));
  }
  io::write_csv(opt.out / files::kRiskCurves, curves, hash);
  write_config(cfg, opt.out);
  manifest.finish();
}

void cmd_roc(const RunConfig& cfg, const RunOptions& opt) {
  prepare_out(opt, false);
  RunManifest manifest("roc", cfg, opt.out);
  auto loaded = load_model(cfg, cfg.eval.checkpoint);
  Dataset data = load_dataset(cfg.eval.data_dir);
  const auto exams = exams_for(data, cfg.eval.split, cfg.eval.all_exams, loaded.norm);
  const int k = cfg.eval.roc_year;
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& e : score_exams(*loaded.model, exams)) {
    const auto status = horizon_label(e.outcome.diagnosed, e.outcome.months, k);
    if (status == HorizonStatus::kUnobservable) continue;
    s.push_back(e.curve.yearly(static_cast<std::size_t>(k)));
    l.push_back(status == HorizonStatus::kPositive);
  }
  const auto curve = roc_export(s, l, opt.out / files::kRoc, config_hash(cfg));
  log::info("roc: " + std::to_string(k) + "-year AUC " + fmt(auc(s, l)) + ", trapezoid " +
            fmt(trapezoid_area(curve)));
  write_config(cfg, opt.out);
  manifest.finish();
}

void cmd_cl(const RunConfig& cfg, const RunOptions& opt) {
  prepare_out(opt, false);
  RunManifest manifest("cl", cfg, opt.out);
  const std::string hash = config_hash(cfg);
  const ClSection& cs = cfg.cl;
  auto loaded = load_model(cfg, cs.checkpoint);
  TriNet& model = *loaded.model;
  Dataset primary = load_dataset(cs.primary_dir);
  Dataset secondary = load_dataset(cs.secondary_dir);
  // Each population is normalized with its own training subset, so radiomic
  // standardization does not saturate on the shifted cohort.
  const NormStats s_norm = compute_norm_stats(select_split(secondary, "train"));
  const auto p_train = exams_for(primary, "train", false, loaded.norm);
  const auto p_val = exams_for(primary, "val", false, loaded.norm);
  const auto s_train = exams_for(secondary, "train", false, s_norm);
  const auto s_val = exams_for(secondary, "val", false, s_norm);

  ClConfig cl = cs.cl;
  cl.train.seed = derive_seed(cfg.seed, "cl");
  io::CsvTable table;
  auto add_metrics = [&](std::size_t iteration, const TriNet& m) {
    for (const auto& [name, exams] :
         {std::pair{"primary", &p_val}, std::pair{"secondary", &s_val}}) {
      const auto metrics = horizon_metrics(score_exams(m, *exams), cs.n_resamples,
                                           derive_seed(cfg.seed, "cl-eval"));
      auto t = summary_table(metrics, {"iteration", "dataset"}, {std::to_string(iteration), name});
      table.header = t.header;
      table.rows.insert(table.rows.end(), t.rows.begin(), t.rows.end());
    }
  };
  add_metrics(0, model);
  const auto logs = restcl_train(model, {&p_train, &s_train, &p_val, &s_val}, cl,
                                 [&](std::size_t it, const TriNet& m) {
                                   add_metrics(it, m);
                                   log::info("cl: iteration " + std::to_string(it) + " done");
                                 });
  io::write_csv(opt.out / files::kClMetrics, table, hash);

  io::CsvTable log_table;
  log_table.header = {"iteration", "epoch", "secondary_loss", "primary_loss", "hard_fraction",
                      "secondary_used", "primary_used", "q_case", "q_control",
                      "primary_auc_1y", "secondary_auc_1y"};
  for (const auto& r : logs) {
    log_table.rows.push_back({std::to_string(r.iteration), std::to_string(r.epoch),
                              fmt(r.secondary_loss), fmt(r.primary_loss), fmt(r.hard_fraction),
                              std::to_string(r.secondary_used), std::to_string(r.primary_used),
                              fmt(r.policy.q_case), fmt(r.policy.q_control),
                              fmt(r.primary_auc[0]), fmt(r.secondary_auc[0])});
  }
  io::write_csv(opt.out / files::kClLog, log_table, hash);
  checkpoint::save(opt.out / files::kCheckpoint, model_checkpoint(model, loaded.norm));
  write_config(cfg, opt.out);
  manifest.finish();
}

// ---------------------------------------------------------------------------

namespace {

struct Cell {
  AttentionKind attention;
  RadmilMode radmil;
  bool time_embed;

  std::string name() const {
    return to_string(attention) + "_" + to_string(radmil) + (time_embed ? "_T" : "_noT");
  }
  Cell vanilla() const { return {without_time_decay(attention), radmil, time_embed}; }
};

struct AblateContext {
  const RunConfig* cfg;
  fs::path root;
  std::string hash;
  const std::vector<ExamInput>* train;
  const std::vector<ExamInput>* val;
  const std::vector<ExamInput>* test;
  NormStats norm;
};

fs::path cell_dir(const AblateContext& ctx, const Cell& c, std::uint64_t seed) {
  return ctx.root / "cells" / c.name() / ("seed_" + std::to_string(seed));
}

constexpr const char* kCellResult = "result.csv";
constexpr const char* kCellModel = "model.bin";

void run_cell(const AblateContext& ctx, const Cell& c, std::uint64_t seed) {
  const fs::path dir = cell_dir(ctx, c, seed);
  if (fs::exists(dir / kCellResult)) return;
  fs::create_directories(dir);
  const RunConfig& cfg = *ctx.cfg;
  ModelConfig mc = cfg.model;
  mc.attention.kind = c.attention;
  mc.radmil.mode = c.radmil;
  mc.use_time_embed = c.time_embed;
  if (c.radmil != RadmilMode::kE) mc.radmil.lateral = false;
  TriNet model(mc, seed);
  TrainConfig tc = cfg.train.train;
  tc.seed = derive_seed(seed, "train");
  if (uses_time_decay(c.attention)) {
    const TensorMap pre = checkpoint::load(cell_dir(ctx, c.vanilla(), seed) / kCellModel);
    finetune_td(model, pre, cfg.train.schedule, *ctx.train, nullptr, tc);
  } else {
    Optimizer optimizer = make_optimizer(tc);
    train_model(model, *ctx.train, nullptr, tc, optimizer);
  }
  checkpoint::save(dir / kCellModel, model_checkpoint(model, ctx.norm));
  const auto metrics = horizon_metrics(score_exams(model, *ctx.test), cfg.eval.n_resamples,
                                       derive_seed(seed, "eval"));
  io::CsvTable t;
  for (const auto& m : metrics) {
    const std::string y = std::to_string(m.year) + "y";
    t.header.insert(t.header.end(), {"auc_" + y, "ci_low_" + y, "ci_high_" + y});
  }
  t.rows.emplace_back();
  for (const auto& m : metrics) t.rows[0].insert(t.rows[0].end(), {fmt(m.auc), fmt(m.ci.low), fmt(m.ci.high)});
  io::write_csv(dir / kCellResult, t, ctx.hash);
  log::info("ablate: " + c.name() + " seed " + std::to_string(seed) + " 1y AUC " + fmt(metrics[0].auc));
}

// Runs tasks on `jobs` threads; each task owns its model and RNG.
void run_parallel(const std::vector<std::function<void()>>& tasks, std::size_t jobs) {
  if (jobs <= 1) {
    for (const auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < std::min(jobs, tasks.size()); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < tasks.size(); i = next++) {
        try {
          tasks[i]();
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kUndefined;
  return quantile(std::move(v), 0.5);
}

}  // namespace

void cmd_ablate(const RunConfig& cfg, const RunOptions& opt) {
  prepare_out(opt, false);
  RunManifest manifest("ablate", cfg, opt.out);
  const AblateSection& as = cfg.ablate;
  if (as.attention.empty() || as.radmil.empty() || as.time_embed.empty() || as.seeds.empty()) {
    throw ConfigError("ablate grid has an empty axis");
  }
  Dataset data = load_dataset(cfg.train.data_dir);
  const auto train_patients = select_split(data, "train");
  if (train_patients.empty()) throw InputError("dataset has no training patients");
  AblateContext ctx;
  ctx.cfg = &cfg;
  ctx.root = opt.out;
  ctx.hash = config_hash(cfg);
  ctx.norm = compute_norm_stats(train_patients);
  const auto train = exams_for(data, "train", cfg.train.all_exams, ctx.norm);
  const auto val = exams_for(data, "val", cfg.train.all_exams, ctx.norm);
  const auto test = exams_for(data, cfg.eval.split, cfg.eval.all_exams, ctx.norm);
  ctx.train = &train;
  ctx.val = &val;
  ctx.test = &test;

  std::vector<Cell> cells;
  for (auto a : as.attention)
    for (auto r : as.radmil)
      for (bool t : as.time_embed) cells.push_back({a, r, t});

  // Vanilla runs first: time-decay cells start from them.
  std::vector<std::function<void()>> first, second;
  std::map<std::string, bool> queued;
  for (const auto& c : cells) {
    const Cell base = uses_time_decay(c.attention) ? c.vanilla() : c;
    if (queued[base.name()]) continue;
    queued[base.name()] = true;
    for (auto s : as.seeds) first.push_back([&ctx, base, s] { run_cell(ctx, base, s); });
  }
  for (const auto& c : cells) {
    if (!uses_time_decay(c.attention)) continue;
    for (auto s : as.seeds) second.push_back([&ctx, c, s] { run_cell(ctx, c, s); });
  }
  run_parallel(first, as.jobs);
  run_parallel(second, as.jobs);

  io::CsvTable out;
  out.header = {"cell", "attention", "radmil", "time_embed", "seed"};
  std::vector<std::string> metric_cols;
  for (const auto& c : cells) {
    std::vector<std::vector<double>> columns;
    for (auto s : as.seeds) {
      const auto t = io::read_csv(cell_dir(ctx, c, s) / kCellResult);
      if (metric_cols.empty()) {
        metric_cols = t.header;
        out.header.insert(out.header.end(), t.header.begin(), t.header.end());
      }
      if (t.rows.size() != 1 || t.header != metric_cols) throw IoError("malformed cell result");
      columns.resize(t.header.size());
      std::vector<std::string> row{c.name(), to_string(c.attention), to_string(c.radmil),
                                   c.time_embed ? "1" : "0", std::to_string(s)};
      for (std::size_t i = 0; i < t.header.size(); ++i) {
        row.push_back(t.rows[0][i]);
        columns[i].push_back(t.rows[0][i] == "nan" ? kUndefined : std::stod(t.rows[0][i]));
      }
      out.rows.push_back(std::move(row));
    }
    std::vector<std::string> agg{c.name(), to_string(c.attention), to_string(c.radmil),
                                 c.time_embed ? "1" : "0", "median"};
    for (const auto& col : columns) agg.push_back(fmt(median(col)));
    out.rows.push_back(std::move(agg));
  }
  io::write_csv(opt.out / files::kAblation, out, ctx.hash);
  write_config(cfg, opt.out);
  manifest.finish();
}

std::vector<GradcheckEntry> cmd_gradcheck(std::ostream& report, const RunOptions& opt) {
  const auto entries = run_gradcheck_suite();
  std::vector<std::string> failed;
  io::CsvTable t;
  t.header = {"check", "kind", "max_rel_error", "tolerance", "status"};
  for (const auto& e : entries) {
    char line[160];
    std::snprintf(line, sizeof line, "%-36s %-9s max_rel_error %.3e tol %.0e %s", e.name.c_str(),
                  e.composite ? "composite" : "primitive", e.max_rel_error, e.tolerance,
                  e.passed() ? "PASS" : "FAIL");
    report << line;
    if (!e.error.empty()) report << " (" << e.error << ")";
    report << "\n";
    if (!e.passed()) failed.push_back(e.name);
    t.rows.push_back({e.name, e.composite ? "composite" : "primitive", fmt(e.max_rel_error),
                      fmt(e.tolerance), e.passed() ? "PASS" : "FAIL"});
  }
  report << "gradcheck: " << entries.size() << " checks, " << failed.size() << " failed\n";
  if (!opt.out.empty()) {
    prepare_out(opt, false);
    io::write_csv(opt.out / files::kGradcheck, t, "none");
  }
  return entries;
}

}  // namespace trinet

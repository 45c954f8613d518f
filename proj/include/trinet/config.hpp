#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trinet/cohort.hpp"
#include "trinet/model.hpp"
#include "trinet/trainer.hpp"

namespace trinet {

inline constexpr int kSchemaVersion = 1;

// JSON run configuration. Every section is optional and falls back to the
// defaults below; `schema_version` and `seed` are required. Unknown keys are
// rejected at any depth.
struct CohortSection {
  CohortSpec spec;
  SplitFractions split;
  std::size_t min_cases_per_split = 0;
};

struct TrainSection {
  TrainConfig train;
  std::filesystem::path data_dir;
  bool all_exams = false;  // every screening as an exam, not just the last
  // Vanilla checkpoint for time-decay fine-tuning; empty for plain training.
  std::filesystem::path pretrained;
  std::vector<LrPhase> schedule = two_step_schedule(5, 5);
  // Checkpoint written by an earlier, interrupted run of the same config.
  std::filesystem::path resume;
  // Lateral second phase: start from `pretrained`, train radmil/lateral/ only.
  bool lateral_phase = false;
  LateralConfig lateral;
};

struct ClSection {
  ClConfig cl;
  std::filesystem::path checkpoint;
  std::filesystem::path primary_dir;
  std::filesystem::path secondary_dir;
  std::size_t n_resamples = 200;
};

struct EvalSection {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  std::string split = "test";
  bool all_exams = false;
  std::size_t n_resamples = 1000;
  int roc_year = 1;
};

struct AblateSection {
  std::vector<AttentionKind> attention = {AttentionKind::kShift, AttentionKind::kTdShift};
  std::vector<RadmilMode> radmil = {RadmilMode::kE};
  std::vector<bool> time_embed = {true};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t jobs = 1;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  CohortSection cohort;
  ModelConfig model;
  TrainSection train;
  ClSection cl;
  EvalSection eval;
  AblateSection ablate;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Full document including defaulted fields; parse_config(to_json(c)) == c.
std::string to_json(const RunConfig& cfg);
// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_hash(const RunConfig& cfg);

}  // namespace trinet

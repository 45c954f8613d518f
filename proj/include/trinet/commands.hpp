#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trinet/config.hpp"
#include "trinet/gradsuite.hpp"

namespace trinet {

struct RunOptions {
  std::filesystem::path out;
  bool overwrite = false;
};

// File names inside a run directory.
namespace files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kRunManifest = "run_manifest.json";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kTrainMetrics = "train_metrics.csv";
inline constexpr const char* kNanDump = "nan_dump.json";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kRiskCurves = "risk_curves.csv";
inline constexpr const char* kRoc = "roc.csv";
inline constexpr const char* kClMetrics = "cl_metrics.csv";
inline constexpr const char* kClLog = "cl_log.csv";
inline constexpr const char* kAblation = "ablation.csv";
inline constexpr const char* kGradcheck = "gradcheck.csv";
}  // namespace files

// Synthetic cohort + split written as a dataset directory.
void cmd_gen(const RunConfig& cfg, const RunOptions& opt);
// Writes checkpoint.bin (after every epoch) and train_metrics.csv.
void cmd_train(const RunConfig& cfg, const RunOptions& opt);
// Continual learning from cl.checkpoint; cl_metrics.csv has one block of
// horizon rows per iteration and dataset, iteration 0 being the start.
void cmd_cl(const RunConfig& cfg, const RunOptions& opt);
// Grid of attention x RADMIL x time-embedding cells over ablate.seeds.
// Finished (cell, seed) runs under cells/ are reused on rerun.
void cmd_ablate(const RunConfig& cfg, const RunOptions& opt);
// metrics.csv and risk_curves.csv for eval.split.
void cmd_eval(const RunConfig& cfg, const RunOptions& opt);
// roc.csv at eval.roc_year.
void cmd_roc(const RunConfig& cfg, const RunOptions& opt);
// Prints one line per check; returns the entries. The out directory, when
// given, also receives gradcheck.csv.
std::vector<GradcheckEntry> cmd_gradcheck(std::ostream& report, const RunOptions& opt);

// FNV-1a over relative paths and contents of every regular file under
// `dir`, skipping run_manifest.json.
std::string directory_digest(const std::filesystem::path& dir);

// Full command line: parses flags, runs the command, maps errors to exit
// codes (0 ok, 1 usage / config, 2 numerical, 3 I/O).
int run_cli(int argc, const char* const* argv);

}  // namespace trinet

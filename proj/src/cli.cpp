#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "trinet/commands.hpp"
#include "trinet/error.hpp"
#include "trinet/log.hpp"
#include "trinet/tensor.hpp"

namespace trinet {

namespace {

RunConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
  if (!path.empty()) {
    RunConfig cfg = load_config(path);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
  if (!seed) throw ConfigError("config is missing required field 'seed' (give --config or --seed)");
  nlohmann::json j{{"schema_version", kSchemaVersion}, {"seed", *seed}};
  return parse_config(j.dump());
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"trinet: temporal multi-view breast cancer risk models on synthetic cohorts"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  RunOptions opt;
  std::string out;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Overrides the configured seed");
  app.add_option("--out", out, "Output directory");
  app.add_flag("--overwrite", opt.overwrite, "Replace a non-empty output directory");
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors on stderr");

  struct Sub {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&, const RunOptions&);
  };
  const Sub subs[] = {
      {"gen", "Generate a synthetic cohort dataset", cmd_gen},
      {"train", "Train (or fine-tune) a model", cmd_train},
      {"cl", "Continual learning on a secondary cohort", cmd_cl},
      {"ablate", "Run an ablation grid", cmd_ablate},
      {"eval", "Horizon AUCs and risk curves", cmd_eval},
      {"roc", "ROC curve export", cmd_roc},
  };
  std::vector<CLI::App*> handles;
  for (const auto& s : subs) handles.push_back(app.add_subcommand(s.name, s.help)->fallthrough());
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks")->fallthrough();
  std::string corrupt_op;
  grad->add_option("--corrupt-op", corrupt_op, "Test fixture: scale the named op's backward rule")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }
  log::set_level(quiet ? log::Level::kWarning : log::Level::kInfo);
  opt.out = out;

  try {
    if (grad->parsed()) {
      if (!corrupt_op.empty()) ad::testing::corrupt_backward(corrupt_op);
      const auto entries = cmd_gradcheck(std::cout, opt);
      ad::testing::corrupt_backward("");
      std::string failed;
      for (const auto& e : entries) {
        if (!e.passed()) failed += (failed.empty() ? "" : ", ") + e.name;
      }
      if (!failed.empty()) {
        std::cerr << "gradcheck failed: " << failed << "\n";
        return static_cast<int>(ExitCode::kNumerical);
      }
      return 0;
    }
    const RunConfig cfg = resolve_config(config_path, seed);
    for (std::size_t i = 0; i < handles.size(); ++i) {
      if (handles[i]->parsed()) subs[i].run(cfg, opt);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  }
}

}  // namespace trinet

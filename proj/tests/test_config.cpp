#include <string>

#include "doctest.h"
#include "json.hpp"
#include "trinet/config.hpp"
#include "trinet/error.hpp"

using namespace trinet;
using nlohmann::json;

namespace {

std::string minimal(std::uint64_t seed = 3) {
  return json{{"schema_version", kSchemaVersion}, {"seed", seed}}.dump();
}

std::string message_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config takes defaults") {
  auto cfg = parse_config(minimal());
  CHECK(cfg.seed == 3);
  CHECK(cfg.train.train.learning_rate == 1e-4);
  CHECK(cfg.train.train.batch_size == 12);
  CHECK(cfg.model.attention.decay.A == 2.0);
  CHECK(cfg.model.attention.decay.B == 0.1);
  CHECK(cfg.model.attention.decay.T == 60.0);
  CHECK(cfg.eval.n_resamples == 1000);
}

TEST_CASE("config round trip") {
  json j = json::parse(minimal(9));
  j["model"]["attention"] = {{"kind", "TD-NL"}, {"decay", {{"A", 1.5}, {"B", 0.2}, {"T", 48}}}};
  j["model"]["radmil"] = {{"mode", "D"}};
  j["cohort"]["n_cases"] = 12;
  j["cohort"]["lesion"]["radius"] = 1.5;
  j["train"]["optimizer"] = "sgd";
  j["train"]["frozen_prefixes"] = {"encoder/"};
  j["ablate"]["seeds"] = {4, 5};
  auto cfg = parse_config(j.dump());
  CHECK(cfg.model.attention.kind == AttentionKind::kTdNonLocal);
  CHECK(cfg.model.attention.decay.T == 48.0);
  CHECK(cfg.model.radmil.mode == RadmilMode::kD);
  CHECK(cfg.cohort.spec.n_cases == 12);
  CHECK(cfg.train.train.optimizer == OptimizerKind::kSgd);
  CHECK(cfg.ablate.seeds == std::vector<std::uint64_t>{4, 5});
  const std::string text = to_json(cfg);
  auto again = parse_config(text);
  CHECK(to_json(again) == text);
  CHECK(config_hash(again) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);
  again.seed = 10;
  CHECK(config_hash(again) != config_hash(cfg));
}

TEST_CASE("strict parsing") {
  CHECK(message_of(json{{"schema_version", 1}}.dump()).find("'seed'") != std::string::npos);
  CHECK(message_of(json{{"seed", 1}}.dump()).find("schema_version") != std::string::npos);

  json j = json::parse(minimal());
  j["trian"] = json::object();
  CHECK(message_of(j.dump()).find("trian") != std::string::npos);

  j = json::parse(minimal());
  j["model"]["radmil"]["lateral_hiden"] = 3;
  CHECK(message_of(j.dump()).find("model.radmil.lateral_hiden") != std::string::npos);

  j = json::parse(minimal());
  j["train"]["epochs"] = "ten";
  CHECK_FALSE(message_of(j.dump()).empty());

  j = json::parse(minimal());
  j["schema_version"] = kSchemaVersion + 1;
  CHECK_FALSE(message_of(j.dump()).empty());

  j = json::parse(minimal());
  j["model"]["attention"]["kind"] = "GLIM";
  CHECK_FALSE(message_of(j.dump()).empty());

  j = json::parse(minimal());
  j["eval"]["roc_year"] = 7;
  CHECK_FALSE(message_of(j.dump()).empty());

  CHECK_FALSE(message_of("{not json").empty());
}

#include "trinet/config.hpp"

#include <cstdio>
#include <set>

#include "json.hpp"

#include "trinet/error.hpp"
#include "trinet/io.hpp"

namespace trinet {

using nlohmann::json;

namespace {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (adam, sgd)");
}

std::string squash_name(LateralSquash s) { return s == LateralSquash::kSoftmax ? "softmax" : "sigmoid"; }

LateralSquash parse_squash(const std::string& s) {
  if (s == "sigmoid") return LateralSquash::kSigmoid;
  if (s == "softmax") return LateralSquash::kSoftmax;
  throw ConfigError("unknown lateral squash '" + s + "' (sigmoid, softmax)");
}

// Reads fields out of one JSON object, remembering which keys were used so
// leftovers can be reported.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void operator()(const char* key, T& field) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    read(*it, field, child(key));
  }

  template <class T, class F>
  void section(const char* key, T& value, F visit_fields) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    Reader r(*it, child(key));
    visit_fields(r, value);
    r.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + child(it.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static void type_error(const std::string& path, const char* want) {
    throw ConfigError("config key '" + path + "' must be " + want);
  }

  static void read(const json& v, bool& out, const std::string& p) {
    if (!v.is_boolean()) type_error(p, "a boolean");
    out = v.get<bool>();
  }
  static void read(const json& v, double& out, const std::string& p) {
    if (!v.is_number()) type_error(p, "a number");
    out = v.get<double>();
  }
  static void read(const json& v, std::size_t& out, const std::string& p) {
    if (!v.is_number_unsigned()) type_error(p, "a non-negative integer");
    out = v.get<std::size_t>();
  }
  static void read(const json& v, int& out, const std::string& p) {
    if (!v.is_number_integer()) type_error(p, "an integer");
    out = v.get<int>();
  }
  static void read(const json& v, std::string& out, const std::string& p) {
    if (!v.is_string()) type_error(p, "a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, std::filesystem::path& out, const std::string& p) {
    std::string s;
    read(v, s, p);
    out = s;
  }
  static void read(const json& v, AttentionKind& out, const std::string& p) {
    std::string s;
    read(v, s, p);
    try {
      out = parse_attention_kind(s);
    } catch (const Error& e) {
      throw ConfigError("config key '" + p + "': " + e.what());
    }
  }
  static void read(const json& v, RadmilMode& out, const std::string& p) {
    std::string s;
    read(v, s, p);
    try {
      out = parse_radmil_mode(s);
    } catch (const Error& e) {
      throw ConfigError("config key '" + p + "': " + e.what());
    }
  }
  static void read(const json& v, OptimizerKind& out, const std::string& p) {
    std::string s;
    read(v, s, p);
    out = parse_optimizer(s);
  }
  static void read(const json& v, LateralSquash& out, const std::string& p) {
    std::string s;
    read(v, s, p);
    out = parse_squash(s);
  }
  static void read(const json& v, LrPhase& out, const std::string& p) {
    Reader r(v, p);
    r("learning_rate", out.learning_rate);
    r("epochs", out.epochs);
    r.finish();
  }
  template <class T>
  static void read(const json& v, std::vector<T>& out, const std::string& p) {
    if (!v.is_array()) type_error(p, "an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T x{};
      read(v[i], x, p + "[" + std::to_string(i) + "]");
      out.push_back(std::move(x));
    }
  }
  static void read(const json& v, std::vector<bool>& out, const std::string& p) {
    if (!v.is_array()) type_error(p, "an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      bool x = false;
      read(v[i], x, p + "[" + std::to_string(i) + "]");
      out.push_back(x);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }

  template <class T>
  void operator()(const char* key, const T& field) {
    j_[key] = write(field);
  }

  template <class T, class F>
  void section(const char* key, const T& value, F visit_fields) {
    json sub;
    Writer w(sub);
    visit_fields(w, const_cast<T&>(value));
    j_[key] = std::move(sub);
  }

 private:
  template <class T>
  static json write(const T& v) { return v; }
  static json write(const std::filesystem::path& v) { return v.string(); }
  static json write(AttentionKind v) { return to_string(v); }
  static json write(RadmilMode v) { return to_string(v); }
  static json write(OptimizerKind v) { return optimizer_name(v); }
  static json write(LateralSquash v) { return squash_name(v); }
  static json write(const LrPhase& v) {
    return json{{"learning_rate", v.learning_rate}, {"epochs", v.epochs}};
  }
  template <class T>
  static json write(const std::vector<T>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(write(x));
    return a;
  }
  static json write(const std::vector<bool>& v) {
    json a = json::array();
    for (bool x : v) a.push_back(x);
    return a;
  }

  json& j_;
};

// One field list per struct, shared by reading and writing.
template <class V>
void visit_train_config(V& v, TrainConfig& t) {
  v("optimizer", t.optimizer);
  v("learning_rate", t.learning_rate);
  v.section("adam", t.adam, [](auto& w, AdamSettings& a) {
    w("beta1", a.beta1);
    w("beta2", a.beta2);
    w("eps", a.eps);
  });
  v("batch_size", t.batch_size);
  v("epochs", t.epochs);
  v("augment", t.augment);
  v("frozen_prefixes", t.frozen_prefixes);
}

template <class V>
void visit_config(V& v, RunConfig& c) {
  v("schema_version", c.schema_version);
  v("seed", c.seed);
  v.section("cohort", c.cohort, [](auto& w, CohortSection& s) {
    CohortSpec& p = s.spec;
    w("n_cases", p.n_cases);
    w("n_controls", p.n_controls);
    w("screening_counts", p.screening_counts);
    w("interval_mean", p.interval_mean);
    w("interval_jitter", p.interval_jitter);
    w("case_dx_max_months", p.case_dx_max_months);
    w("control_followup_min", p.control_followup_min);
    w("control_followup_max", p.control_followup_max);
    w.section("lesion", p.lesion, [](auto& u, LesionSpec& l) {
      u("base_amplitude", l.base_amplitude);
      u("growth_per_year", l.growth_per_year);
      u("radius", l.radius);
      u("lead_min_months", l.lead_min_months);
      u("lead_max_months", l.lead_max_months);
    });
    w.section("population", p.population, [](auto& u, PopulationSpec& q) {
      u("background_mean", q.background_mean);
      u("texture_scale", q.texture_scale);
      u("density_sd", q.density_sd);
    });
    w("noise_sd", p.noise_sd);
    w("asymmetry", p.asymmetry);
    w("benign_rate", p.benign_rate);
    w("benign_amplitude", p.benign_amplitude);
    w("single_view_signal", p.single_view_signal);
    w("id_prefix", p.id_prefix);
    w.section("split", s.split, [](auto& u, SplitFractions& f) {
      u("train", f.train);
      u("val", f.val);
      u("test", f.test);
    });
    w("min_cases_per_split", s.min_cases_per_split);
  });
  v.section("model", c.model, [](auto& w, ModelConfig& m) {
    w.section("encoder", m.encoder, [](auto& u, EncoderConfig& e) {
      u("channels", e.channels);
      u("stages", e.stages);
      u("image_size", e.image_size);
    });
    w.section("attention", m.attention, [](auto& u, AttentionBlockConfig& a) {
      u("kind", a.kind);
      u.section("decay", a.decay, [](auto& x, TimeDecayParams& d) {
        x("A", d.A);
        x("B", d.B);
        x("T", d.T);
      });
    });
    w.section("radmil", m.radmil, [](auto& u, RadmilConfig& r) {
      u("mode", r.mode);
      u("lateral", r.lateral);
      u("attention_hidden", r.attention_hidden);
      u("lateral_hidden", r.lateral_hidden);
      u("squash", r.squash);
    });
    w("use_time_embed", m.use_time_embed);
  });
  v.section("train", c.train, [](auto& w, TrainSection& t) {
    visit_train_config(w, t.train);
    w("data_dir", t.data_dir);
    w("all_exams", t.all_exams);
    w("pretrained", t.pretrained);
    w("schedule", t.schedule);
    w("resume", t.resume);
    w("lateral_phase", t.lateral_phase);
    w.section("lateral", t.lateral, [](auto& u, LateralConfig& l) {
      u("soft_labels", l.soft_labels);
      u("weight", l.weight);
    });
  });
  v.section("cl", c.cl, [](auto& w, ClSection& s) {
    w.section("train", s.cl.train, [](auto& u, TrainConfig& t) { visit_train_config(u, t); });
    w("iterations", s.cl.iterations);
    w("epochs_per_iteration", s.cl.epochs_per_iteration);
    w("min_per_class", s.cl.min_per_class);
    w("threshold_baseline", s.cl.threshold_baseline);
    w("tau", s.cl.tau);
    w("checkpoint", s.checkpoint);
    w("primary_dir", s.primary_dir);
    w("secondary_dir", s.secondary_dir);
    w("n_resamples", s.n_resamples);
  });
  v.section("eval", c.eval, [](auto& w, EvalSection& e) {
    w("checkpoint", e.checkpoint);
    w("data_dir", e.data_dir);
    w("split", e.split);
    w("all_exams", e.all_exams);
    w("n_resamples", e.n_resamples);
    w("roc_year", e.roc_year);
  });
  v.section("ablate", c.ablate, [](auto& w, AblateSection& a) {
    w("attention", a.attention);
    w("radmil", a.radmil);
    w("time_embed", a.time_embed);
    w("seeds", a.seeds);
    w("jobs", a.jobs);
  });
}

void validate(const RunConfig& c) {
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version) +
                      " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  try {
    c.cohort.spec.validate();
    c.model.radmil.validate();
    if (uses_time_decay(c.model.attention.kind)) c.model.attention.decay.validate();
    c.train.train.validate();
    c.cl.cl.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  const auto& f = c.cohort.split;
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.train + f.val + f.test <= 0) {
    throw ConfigError("cohort.split fractions must be non-negative with a positive sum");
  }
  if (c.train.lateral_phase && !c.model.radmil.lateral) {
    throw ConfigError("train.lateral_phase needs model.radmil.lateral = true");
  }
  if (c.eval.roc_year < 1 || c.eval.roc_year > 5) throw ConfigError("eval.roc_year must lie in 1..5");
  if (c.ablate.jobs == 0) throw ConfigError("ablate.jobs must be at least 1");
  if (c.cl.cl.tau < 0.0 || c.cl.cl.tau > 1.0) throw ConfigError("cl.tau must lie in [0, 1]");
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const char* key : {"schema_version", "seed"}) {
    if (!j.contains(key)) throw ConfigError(std::string("config is missing required field '") + key + "'");
  }
  RunConfig c;
  Reader r(j, "");
  visit_config(r, c);
  r.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_file(path));
}

std::string to_json(const RunConfig& cfg) {
  json j;
  Writer w(j);
  visit_config(w, const_cast<RunConfig&>(cfg));
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  json j;
  Writer w(j);
  visit_config(w, const_cast<RunConfig&>(cfg));
  const std::string canonical = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace trinet

#include "textbcs/config.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "textbcs/errors.hpp"
#include "textbcs/hash.hpp"

namespace textbcs {

using nlohmann::json;

namespace {

using Setter = std::function<void(ExperimentConfig&, const json&)>;

template <typename T>
Setter field(T ExperimentConfig::*member) {
  return [member](ExperimentConfig& c, const json& v) { c.*member = v.get<T>(); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"image_size", field(&ExperimentConfig::image_size)},
      {"num_stages", field(&ExperimentConfig::num_stages)},
      {"stage_channels", field(&ExperimentConfig::stage_channels)},
      {"text_dim", field(&ExperimentConfig::text_dim)},
      {"token_length", field(&ExperimentConfig::token_length)},
      {"num_classes", field(&ExperimentConfig::num_classes)},
      {"num_heads", field(&ExperimentConfig::num_heads)},
      {"use_svli", field(&ExperimentConfig::use_svli)},
      {"use_el", field(&ExperimentConfig::use_el)},
      {"tau_init", field(&ExperimentConfig::tau_init)},
      {"lambda1", field(&ExperimentConfig::lambda1)},
      {"lambda3", field(&ExperimentConfig::lambda3)},
      {"lambda2_max", field(&ExperimentConfig::lambda2_max)},
      {"lambda2_warmup_epochs", field(&ExperimentConfig::lambda2_warmup_epochs)},
      {"negative_ratio", field(&ExperimentConfig::negative_ratio)},
      {"alignment_norm",
       [](ExperimentConfig& c, const json& v) {
         const auto s = v.get<std::string>();
         if (s == "all_terms") {
           c.alignment_norm = AlignmentNorm::kAllTerms;
         } else if (s == "per_stage") {
           c.alignment_norm = AlignmentNorm::kPerStage;
         } else {
           throw ConfigError("alignment_norm must be \"all_terms\" or \"per_stage\", got \"" + s + "\"");
         }
       }},
      {"batch_size", field(&ExperimentConfig::batch_size)},
      {"init_lr", field(&ExperimentConfig::init_lr)},
      {"lr_factor", field(&ExperimentConfig::lr_factor)},
      {"lr_patience", field(&ExperimentConfig::lr_patience)},
      {"early_stop_patience", field(&ExperimentConfig::early_stop_patience)},
      {"max_epochs", field(&ExperimentConfig::max_epochs)},
      {"min_delta", field(&ExperimentConfig::min_delta)},
      {"grad_clip", field(&ExperimentConfig::grad_clip)},
      {"seed", field(&ExperimentConfig::seed)},
      {"lesion_contrast", field(&ExperimentConfig::lesion_contrast)},
      {"distractor_prob", field(&ExperimentConfig::distractor_prob)},
  };
  return table;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

json parse_override(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

void apply(ExperimentConfig& cfg, const std::string& key, const json& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key \"" + key + "\"");
  try {
    it->second(cfg, value);
  } catch (const json::exception& e) {
    throw ConfigError("config key \"" + key + "\" has the wrong type: " + e.what());
  }
}

std::string env_name(const std::string& key) {
  std::string out = "TEXTBCS_";
  for (char c : key) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

ExperimentConfig layered(const json& doc, const std::map<std::string, std::string>& overrides) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, value] : doc.items()) apply(cfg, key, value);
  for (const auto& [key, setter] : setters()) {
    if (const char* v = std::getenv(env_name(key).c_str())) apply(cfg, key, parse_override(v));
  }
  for (const auto& [key, value] : overrides) apply(cfg, key, parse_override(value));
  cfg.validate();
  return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
  check(num_stages >= 1, "num_stages must be >= 1, got " + std::to_string(num_stages));
  check(num_classes >= 2, "num_classes must be >= 2, got " + std::to_string(num_classes));
  check(image_size >= 1 && num_stages < 30 && image_size % (1 << num_stages) == 0,
        "image_size must be divisible by 2^num_stages, got " + std::to_string(image_size));
  check(static_cast<int>(stage_channels.size()) == num_stages,
        "stage_channels must have exactly num_stages entries, got " + std::to_string(stage_channels.size()));
  for (int c : stage_channels) check(c >= 1, "stage_channels entries must be >= 1");
  check(text_dim >= 1, "text_dim must be >= 1");
  check(token_length >= 1, "token_length must be >= 1");
  check(num_heads >= 1, "num_heads must be >= 1");
  check(text_dim % num_heads == 0, "text_dim must be divisible by num_heads");
  if (use_svli) {
    for (int c : stage_channels) check(c % num_heads == 0, "stage_channels entries must be divisible by num_heads");
  }
  check(tau_init >= 0.01 && tau_init <= 10.0, "tau_init must lie in [0.01, 10]");
  check(lambda1 >= 0.0, "lambda1 must be >= 0");
  check(lambda2_max >= 0.0, "lambda2_max must be >= 0");
  check(lambda3 >= 0.0, "lambda3 must be >= 0");
  check(lambda2_warmup_epochs >= 1, "lambda2_warmup_epochs must be >= 1");
  check(negative_ratio >= 1, "negative_ratio must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(init_lr > 0.0, "init_lr must be > 0");
  check(lr_factor > 0.0 && lr_factor < 1.0, "lr_factor ∈ (0,1) required, got " + std::to_string(lr_factor));
  check(lr_patience >= 1, "lr_patience must be >= 1");
  check(early_stop_patience >= 1, "early_stop_patience must be >= 1");
  check(max_epochs >= 1, "max_epochs must be >= 1");
  check(min_delta >= 0.0, "min_delta must be >= 0");
  check(grad_clip >= 0.0, "grad_clip must be >= 0");
  check(seed >= 0, "seed must be >= 0");
  check(lesion_contrast > 0.0 && lesion_contrast <= 1.0, "lesion_contrast must lie in (0,1]");
  check(distractor_prob >= 0.0 && distractor_prob <= 1.0, "distractor_prob must lie in [0,1]");
}

json ExperimentConfig::to_json() const {
  return json{
      {"image_size", image_size},
      {"num_stages", num_stages},
      {"stage_channels", stage_channels},
      {"text_dim", text_dim},
      {"token_length", token_length},
      {"num_classes", num_classes},
      {"num_heads", num_heads},
      {"use_svli", use_svli},
      {"use_el", use_el},
      {"tau_init", tau_init},
      {"lambda1", lambda1},
      {"lambda3", lambda3},
      {"lambda2_max", lambda2_max},
      {"lambda2_warmup_epochs", lambda2_warmup_epochs},
      {"negative_ratio", negative_ratio},
      {"alignment_norm", alignment_norm == AlignmentNorm::kAllTerms ? "all_terms" : "per_stage"},
      {"batch_size", batch_size},
      {"init_lr", init_lr},
      {"lr_factor", lr_factor},
      {"lr_patience", lr_patience},
      {"early_stop_patience", early_stop_patience},
      {"max_epochs", max_epochs},
      {"min_delta", min_delta},
      {"grad_clip", grad_clip},
      {"seed", seed},
      {"lesion_contrast", lesion_contrast},
      {"distractor_prob", distractor_prob},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) apply(cfg, key, value);
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json().dump()); }

ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc = json::object();
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
  }
  return layered(doc, overrides);
}

ExperimentConfig config_from_overrides(const std::map<std::string, std::string>& overrides) {
  return layered(json::object(), overrides);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << cfg.to_json().dump(2) << '\n';
}

json RunManifest::to_json() const {
  return json{{"config_hash", config_hash},
              {"created_at", created_at},
              {"checkpoints", checkpoints.string()},
              {"metrics", metrics.string()},
              {"figures", figures.string()}};
}

RunManifest make_run_manifest(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  RunManifest m;
  m.config_hash = cfg.hash();
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  m.created_at = ts.str();
  m.root = root;
  m.checkpoints = root / "checkpoint";
  m.metrics = root / "history.jsonl";
  m.figures = root / "figures";
  std::error_code ec;
  std::filesystem::create_directories(m.checkpoints, ec);
  std::filesystem::create_directories(m.figures, ec);
  if (ec) throw DataError("cannot create run directory " + root.string() + ": " + ec.message());
  std::ofstream out(root / "run.json");
  if (!out) throw DataError("cannot write " + (root / "run.json").string());
  out << m.to_json().dump(2) << '\n';
  return m;
}

}  // namespace textbcs

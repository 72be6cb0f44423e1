#include "fedseries/cli/experiment.hpp"

#include <algorithm>
#include <set>

namespace fedseries::cli {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  if (workers < 1) throw UsageError("workers must be >= 1");
  if (smooth_window < 1) throw UsageError("smooth_window must be >= 1");
  if (horizon < 1) throw UsageError("horizon must be >= 1");
  std::set<std::string> seen;
  for (const auto& s : symbols) {
    if (s.empty() || s.find_first_of("/\\") != std::string::npos) throw UsageError("invalid symbol '" + s + "'");
    if (!seen.insert(s).second) throw UsageError("symbol " + s + " listed twice");
  }
  model.validate();
  fed_config().validate();
}

fed::FedConfig ExperimentConfig::fed_config() const {
  fed::FedConfig f = federation;
  f.seed = seed;
  f.workers = workers;
  return f;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base) {
  static const std::set<std::string> known{"data_dir", "symbols", "output_dir", "seed", "workers",
                                           "pipeline", "model", "federation"};
  if (!j.is_object()) throw UsageError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  auto path = [&](const char* key, const fs::path& fallback) {
    const fs::path p = j.contains(key) ? fs::path(j.at(key).get<std::string>()) : fallback;
    return p.is_relative() && !base.empty() ? base / p : p;
  };
  c.data_dir = path("data_dir", c.data_dir);
  c.output_dir = path("output_dir", c.output_dir);
  c.symbols = j.value("symbols", c.symbols);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  if (j.contains("pipeline")) {
    const auto& p = j.at("pipeline");
    for (const auto& [key, value] : p.items()) {
      if (key != "smooth_window" && key != "horizon") {
        throw UsageError("unknown pipeline key '" + key + "' (the window length is model.seq_len)");
      }
    }
    c.smooth_window = p.value("smooth_window", c.smooth_window);
    c.horizon = p.value("horizon", c.horizon);
  }
  if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
  if (j.contains("federation")) c.federation = fed::FedConfig::from_json(j.at("federation"));
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw UsageError("config file not found: " + file.string());
  return from_json(io::read_json(file), file.parent_path());
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json fed = fed_config().to_json();
  fed.erase("seed");
  return {{"data_dir", data_dir.string()},
          {"symbols", symbols},
          {"output_dir", output_dir.string()},
          {"seed", seed},
          {"workers", workers},
          {"pipeline", {{"smooth_window", smooth_window}, {"horizon", horizon}}},
          {"model", model.to_json()},
          {"federation", fed}};
}

nlohmann::json ExperimentConfig::result_settings() const {
  nlohmann::json j = to_json();
  j.erase("data_dir");
  j.erase("output_dir");
  j.erase("workers");
  return j;
}

std::vector<std::string> ExperimentConfig::resolve_symbols() const {
  if (!symbols.empty()) return symbols;
  if (!fs::is_directory(data_dir)) throw UsageError("data directory not found: " + data_dir.string());
  std::vector<std::string> found;
  for (const auto& e : fs::directory_iterator(data_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path().stem().string());
  }
  if (found.empty()) throw UsageError("no CSV files in " + data_dir.string());
  std::sort(found.begin(), found.end());
  return found;
}

std::string strategy_label(fed::Strategy s) {
  switch (s) {
    case fed::Strategy::kSolo:
      return "SOLO";
    case fed::Strategy::kFedAvg:
      return "FedAvg";
    case fed::Strategy::kFedAtt:
      return "FedAtt";
  }
  return "unknown";
}

}  // namespace fedseries::cli

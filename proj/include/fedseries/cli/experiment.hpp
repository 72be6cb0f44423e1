#pragma once

#include "fedseries/data/ingest.hpp"
#include "fedseries/federation/federation.hpp"
#include "fedseries/io/binary.hpp"
#include "fedseries/model/forecast_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedseries::cli {

/// A mistake in the command line or configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::filesystem::path data_dir = "data";
  std::vector<std::string> symbols;  // empty selects every CSV in data_dir
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  unsigned workers = 1;
  Index smooth_window = 10;
  Index horizon = 1;
  model::ModelConfig model;
  fed::FedConfig federation;  // seed and workers are taken from the fields above

  void validate() const;

  data::PipelineConfig pipeline() const { return {smooth_window, model.seq_len, horizon}; }
  fed::FedConfig fed_config() const;

  /// Relative paths are resolved against `base`. Unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static ExperimentConfig load(const std::filesystem::path& file);
  nlohmann::json to_json() const;

  /// Every setting that can change a result; paths and the worker count are left out.
  nlohmann::json result_settings() const;
  std::string hash() const { return io::canonical_hash(result_settings()); }

  /// The explicit symbol list, or the sorted stems of data_dir/*.csv.
  std::vector<std::string> resolve_symbols() const;

  std::filesystem::path csv_path(const std::string& symbol) const { return data_dir / (symbol + ".csv"); }
  std::filesystem::path datasets_dir() const { return output_dir / "datasets"; }
  std::filesystem::path runs_dir() const { return output_dir / "runs"; }
  std::filesystem::path reports_dir() const { return output_dir / "reports"; }
};

/// "SOLO", "FedAvg" or "FedAtt".
std::string strategy_label(fed::Strategy s);

}  // namespace fedseries::cli

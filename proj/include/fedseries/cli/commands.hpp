#pragma once

#include "fedseries/cli/experiment.hpp"
#include "fedseries/metrics/metrics.hpp"

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace fedseries::cli {

struct IngestResult {
  std::vector<std::string> written;
  std::vector<std::string> failed;  // one message per failed symbol, naming its file
};

/// Parses, windows and stores every symbol. Symbols are independent, so one
/// bad file does not stop the others.
IngestResult cmd_ingest(const ExperimentConfig& config, std::ostream& log);

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path run_dir;
};

/// Trains with `config.federation.strategy` on the ingested datasets.
TrainResult cmd_train(const ExperimentConfig& config, std::ostream& log);

/// Checkpoint kinds besides trained transformers.
enum class BaselineKind { kPersistence, kOracle };

/// Writes a parameter-free checkpoint that evaluates as the given baseline.
void write_baseline_checkpoint(const std::filesystem::path& dir, BaselineKind kind, const ExperimentConfig& config);

/// Scores each checkpoint on the validation and test splits of the symbols it
/// covers. A path may also be a directory of checkpoints. Writes one report per
/// symbol and checkpoint plus comparison.csv.
std::vector<metrics::EvalReport> cmd_evaluate(const ExperimentConfig& config,
                                              std::span<const std::filesystem::path> checkpoints,
                                              std::ostream& log);

/// Writes <symbol>_<strategy>.csv for a report file or a directory of reports.
std::vector<std::filesystem::path> cmd_export_plot(const std::filesystem::path& report,
                                                   const std::filesystem::path& out_dir, std::ostream& log);

/// Full command line without the program name. Returns the process exit code:
/// 0 on success, 1 for bad input or data, 2 for internal failures.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace fedseries::cli
